#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace odebayes {

/// Thrown when the Gram matrix X^T X of a spline design is singular.
class RankDeficientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Clamped B-spline basis of order m (degree m-1) on [0,1] with k_n uniform
/// intervals. Boundary knots are repeated m times, interior knots are l/k_n.
///
/// Knot spans are half-open [t_l, t_{l+1}) except the last, which is closed,
/// so evaluation at t = 1 returns left limits.
class SplineBasis {
public:
    SplineBasis(int order, int num_intervals);

    int order() const { return order_; }
    int num_intervals() const { return num_intervals_; }
    int dim() const { return num_intervals_ + order_ - 1; }
    double meshwidth() const { return 1.0 / num_intervals_; }

    /// Full knot vector of length dim + order.
    const std::vector<double>& knots() const { return knots_; }
    std::vector<double> interior_knots() const;
    /// Span boundaries 0, 1/k_n, ..., 1.
    std::vector<double> breakpoints() const;

    /// Index l in [0, k_n) of the knot span containing t.
    int span_of(double t) const;

    /// All dim values N_j^{(r)}(t).
    Eigen::VectorXd eval(double t, int deriv = 0) const;

    /// The m possibly nonzero values N_first^{(r)}(t) .. N_{first+m-1}^{(r)}(t)
    /// written to `local`; returns `first` (0-based).
    int eval_local(double t, int deriv, Eigen::Ref<Eigen::VectorXd> local) const;

    /// Integral of N_j over [0,1]; equals (t_{j+m} - t_j) / m.
    double integral(int j) const;

private:
    int order_;
    int num_intervals_;
    std::vector<double> knots_;
};

inline SplineBasis make_basis(int order, int num_intervals) { return {order, num_intervals}; }

/// n x dim matrix with entry (i,j) = N_j(x_i) plus the points it was built on.
struct DesignMatrix {
    SplineBasis basis;
    std::vector<double> points;
    Eigen::MatrixXd values;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
};

DesignMatrix design_matrix(const SplineBasis& basis, std::span<const double> points);

/// Matrix of r-th derivatives N_j^{(r)}(x_i).
Eigen::MatrixXd derivative_matrix(const SplineBasis& basis, std::span<const double> points, int deriv);

/// Cholesky factor of X^T X. Throws RankDeficientError naming the cause
/// (too few points, or the knot span left without design points).
Eigen::LLT<Eigen::MatrixXd> gram_factor(const DesignMatrix& X);

/// (X^T X)^{-1} X^T y, one column per response.
Eigen::VectorXd least_squares_fit(const DesignMatrix& X, const Eigen::VectorXd& y);
Eigen::MatrixXd least_squares_fit(const DesignMatrix& X, const Eigen::MatrixXd& Y);

/// Uniform design x_i = (2i - 1) / (2n), i = 1..n.
std::vector<double> midpoint_design(int n);

}  // namespace odebayes
