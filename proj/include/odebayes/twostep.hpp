#pragma once

#include "odebayes/bvm.hpp"
#include "odebayes/conjugate.hpp"
#include "odebayes/odesys.hpp"
#include "odebayes/quadrature.hpp"
#include "odebayes/rng.hpp"
#include "odebayes/splines.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace odebayes {

/// Spline curve f(t) = B^T N(t) with B of size dim x d.
class FitSpline {
public:
    FitSpline(SplineBasis basis, Eigen::MatrixXd coeffs);

    const SplineBasis& basis() const { return basis_; }
    const Eigen::MatrixXd& coeffs() const { return coeffs_; }
    Eigen::VectorXd value(double t) const { return coeffs_.transpose() * basis_.eval(t, 0); }
    Eigen::VectorXd derivative(double t) const { return coeffs_.transpose() * basis_.eval(t, 1); }
    MeanCurve curve() const { return spline_curve(basis_, coeffs_); }

private:
    SplineBasis basis_;
    Eigen::MatrixXd coeffs_;
};

/// A curve and its derivative tabulated at quadrature nodes, with the
/// combined weights (quadrature weight times w(t)). Everything the criterion
/// needs, independent of how the curve was produced.
struct CurveSamples {
    std::vector<double> t;
    Eigen::VectorXd weight;
    Eigen::MatrixXd value;  // Q x d
    Eigen::MatrixXd slope;  // Q x d
};

/// Basis values and derivatives cached at the nodes, so tabulating a new
/// coefficient matrix costs two small matrix products.
class NodeBasis {
public:
    NodeBasis(const SplineBasis& basis, const WeightFn& w, const Quadrature& quad);

    CurveSamples sample(const Eigen::MatrixXd& coeffs) const;
    void sample_into(const Eigen::MatrixXd& coeffs, CurveSamples& out) const;

private:
    std::vector<double> nodes_;
    Eigen::VectorXd weight_;
    Eigen::MatrixXd values_;  // Q x dim
    Eigen::MatrixXd slopes_;  // Q x dim
};

CurveSamples sample_curve(const FitSpline& fit, const WeightFn& w, const Quadrature& quad);
CurveSamples sample_curve(const MeanCurve& curve, const WeightFn& w, const Quadrature& quad);

/// R_f(eta) = { int |f'(t) - F(t, f(t), eta)|^2 w(t) dt }^{1/2}.
double criterion(const CurveSamples& curve, const OdeSystem& system, const Eigen::VectorXd& eta);
double criterion(const FitSpline& fit, const Eigen::VectorXd& eta, const OdeSystem& system, const WeightFn& w,
                 const Quadrature& quad);

/// Gradient of R_f(eta)^2: -2 int (D_theta F)^T (f' - F) w dt.
Eigen::VectorXd criterion_gradient(const CurveSamples& curve, const OdeSystem& system, const Eigen::VectorXd& eta);
Eigen::VectorXd criterion_gradient(const FitSpline& fit, const Eigen::VectorXd& eta, const OdeSystem& system,
                                   const WeightFn& w, const Quadrature& quad);

struct PsiOptions {
    int multistarts = 8;
    double step_tol = 1e-9;
    double grad_tol = 1e-10;
    int max_iterations = 200;
    /// Local minima whose criterion values differ by less than this tie.
    double tie_tol = 1e-10;
    std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
    bool nelder_mead_fallback = true;
};

struct PsiResult {
    Eigen::VectorXd theta;
    double value = 0.0;           // R_f at theta
    double gradient_norm = 0.0;   // projected gradient of R_f^2 at theta
    int converged_starts = 0;
    int total_starts = 0;
    /// Largest distance between accepted local minima, a proxy for how well
    /// separated the minimum is.
    double start_spread = 0.0;
    bool used_nelder_mead = false;
};

class OptimizationFailure : public std::runtime_error {
public:
    OptimizationFailure(const std::string& what, Eigen::VectorXd best, double value)
        : std::runtime_error(what), best_(std::move(best)), value_(value) {}
    const Eigen::VectorXd& best() const { return best_; }
    double value() const { return value_; }

private:
    Eigen::VectorXd best_;
    double value_;
};

/// Box centre followed by count - 1 Latin-hypercube points.
std::vector<Eigen::VectorXd> multistart_points(const ParameterBox& box, int count, std::uint64_t seed);

/// psi(f) = argmin over the parameter box of R_f, by projected Gauss-Newton
/// with Armijo backtracking from each multistart point and a Nelder-Mead
/// fallback. Ties are broken by the lexicographically smallest theta among
/// the local minima found.
PsiResult psi(const CurveSamples& curve, const OdeSystem& system, const PsiOptions& options = {});
PsiResult psi(const FitSpline& fit, const OdeSystem& system, const WeightFn& w, const Quadrature& quad,
              const PsiOptions& options = {});

struct PriorConfig {
    PriorMode mode = PriorMode::hierarchical;
    double a = 99.0;
    double b = 1.0;
    /// Working variance used in fixed_sigma mode.
    double sigma2 = 0.04;
};

enum class DrawStatus { ok, retried, failed };

struct ThetaSample {
    Eigen::MatrixXd draws;  // count x p; failed rows hold NaN
    std::vector<DrawStatus> status;
    Eigen::VectorXd sigma2;  // the sigma^2 used for each draw
    int failures = 0;

    /// Rows of successful draws only.
    Eigen::MatrixXd successful() const;
};

/// Draws from the induced posterior of theta: sigma^2 (hierarchical mode),
/// then each beta_j, then psi of the resulting spline. Draw i uses
/// rng.substream(i), so the result does not depend on `threads`.
ThetaSample theta_posterior_sample(const DesignMatrix& X, const Eigen::MatrixXd& Y, const OdeSystem& system,
                                   const WeightFn& w, const Quadrature& quad, const PriorConfig& prior, int count,
                                   const CounterRng& rng, const PsiOptions& options = {}, int threads = 1);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double length() const { return hi - lo; }
    bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Equal-tailed intervals from order statistics: lo is the sample of rank
/// ceil(alpha/2 * count), hi of rank ceil((1 - alpha/2) * count).
std::vector<Interval> credible_intervals(const Eigen::MatrixXd& samples, double level);

/// Standard normal quantile.
double normal_quantile(double p);

struct VbEstimate {
    Eigen::VectorXd theta;
    std::vector<Interval> intervals;
    double sigma2_hat = 0.0;
    Eigen::MatrixXd sigma_n;
};

/// Frequentist comparator: theta_hat = psi(least-squares spline), intervals
/// theta_hat_k +- z * sqrt(sigma2_hat [Sigma_n]_kk / n) with Sigma_n evaluated
/// at the plug-in (f_hat, theta_hat) and sigma2_hat = RSS / (d (n - dim)).
VbEstimate vb_estimate(const DesignMatrix& X, const Eigen::MatrixXd& Y, const OdeSystem& system, const WeightFn& w,
                       const Quadrature& quad, const PsiOptions& options = {}, double level = 0.95);

/// theta0 = psi(f0) for a known mean curve.
TruthContext make_truth_context(MeanCurve f0, const OdeSystem& system, const WeightFn& w, const Quadrature& quad,
                                bool well_specified, const PsiOptions& options = {});

/// Gauss-Legendre with `nodes` points for cubic and smoother splines;
/// knot-aware composite rule for orders below 4.
Quadrature criterion_quadrature(const SplineBasis& basis, int nodes = 64);

}  // namespace odebayes
