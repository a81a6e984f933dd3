#pragma once

#include "odebayes/odesys.hpp"
#include "odebayes/quadrature.hpp"
#include "odebayes/splines.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <functional>
#include <stdexcept>
#include <vector>

namespace odebayes {

/// A mean function t -> R^d together with its derivative.
struct MeanCurve {
    std::function<Eigen::VectorXd(double)> value;
    std::function<Eigen::VectorXd(double)> slope;
};

/// The spline curve t -> B^T N(t) with coefficient matrix B (dim x d).
MeanCurve spline_curve(const SplineBasis& basis, const Eigen::MatrixXd& coeffs);

/// True regression function f0 and theta0 = psi(f0).
struct TruthContext {
    MeanCurve f0;
    Eigen::VectorXd theta0;
    bool well_specified = true;
};

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// S(t) = (D_theta F)^T (f0'(t) - F(t, f0(t), theta0)), a p-vector.
Eigen::VectorXd compute_S(const TruthContext& ctx, const OdeSystem& system, double t);

/// J = int (D_theta F)^T D_theta F w dt - int D_theta S w dt.
/// Throws SingularMatrixError when J is not invertible.
Eigen::MatrixXd compute_J(const TruthContext& ctx, const OdeSystem& system, const WeightFn& w, const Quadrature& quad);

/// p x d matrix
///   A(t) = J^{-1} { -(D_theta F)^T D_f F w - d/dt[(D_theta F)^T w] + (D_f S) w },
/// with the time derivative taken by central differences of step `h`
/// (second-order one-sided stencils within h of the endpoints).
Eigen::MatrixXd compute_A(const TruthContext& ctx, const OdeSystem& system, const WeightFn& w, const Eigen::MatrixXd& J,
                          double t, double h = 1e-5);

/// G_j^T = int A_{,j}(t) N(t)^T dt for j = 1..d; each entry is p x dim.
std::vector<Eigen::MatrixXd> compute_G(const SplineBasis& basis, const std::function<Eigen::MatrixXd(double)>& A,
                                       const Quadrature& quad);

struct BvmQuantities {
    Eigen::MatrixXd J;
    double J_condition = 0.0;
    std::vector<double> nodes;             // quadrature nodes where A was tabulated
    std::vector<Eigen::MatrixXd> A_nodes;  // A(t) at those nodes
    std::vector<Eigen::MatrixXd> Gt;       // G_{n,j}^T, p x dim each
    std::vector<Eigen::MatrixXd> B_grams;  // <A_{k,j}, A_{k',j}>, p x p each
    Eigen::VectorXd gamma_f0;              // J^{-1} Gamma(f0) = sum_j int A_{,j} f_{j0} dt
};

/// Everything that depends on the truth and the basis but not on the data.
BvmQuantities compute_bvm_quantities(const TruthContext& ctx, const OdeSystem& system, const SplineBasis& basis,
                                     const WeightFn& w, const Quadrature& quad);

/// J^{-1} Gamma(z) for an arbitrary curve z, via the A-form.
Eigen::VectorXd gamma_functional(const BvmQuantities& q, const Quadrature& quad,
                                 const std::function<Eigen::VectorXd(double)>& z);

struct MuSigma {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

/// mu_n = sqrt(n) sum_j G_j^T (X^T X)^{-1} X^T Y_j - sqrt(n) J^{-1} Gamma(f0),
/// Sigma_n = n sum_j G_j^T (X^T X)^{-1} G_j.
MuSigma compute_mu_sigma(const DesignMatrix& X, const Eigen::MatrixXd& Y, const BvmQuantities& q);

/// Correlated-error centre and scale for a known positive definite Omega.
MuSigma compute_mu_sigma_star(const DesignMatrix& X, const Eigen::MatrixXd& Y, const BvmQuantities& q,
                              const Eigen::MatrixXd& omega);

/// Symmetric square root of an SPD matrix (and of its inverse when `inverse`).
Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& m, bool inverse = false);

struct EigenRange {
    double min = 0.0;
    double max = 0.0;
};
EigenRange eigen_range(const Eigen::MatrixXd& symmetric);

/// Comparison of sqrt(n) (theta - theta0) draws against N(mu, cov).
struct BvmDiagnostic {
    int count = 0;
    std::vector<double> ks;  // per coordinate, after standardization
    double ks_critical = 0.0;  // 1.63 / sqrt(count), level 0.01
    std::vector<bool> ks_reject;
    Eigen::VectorXd sample_mean;
    Eigen::MatrixXd sample_cov;
    double mean_mahalanobis = 0.0;   // count * (mean - mu)^T cov^{-1} (mean - mu), ~ chi^2_p under the null
    double cov_rel_frobenius = 0.0;  // |S - cov|_F / |cov|_F
    EigenRange cov_eigen;
};

/// `samples` is count x p in theta units; `cov` is the full target covariance
/// (sigma0^2 Sigma_n). Requires at least 500 samples.
BvmDiagnostic bvm_diagnostic(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov,
                             const Eigen::VectorXd& theta0, int n);

/// Two-sided one-sample KS statistic of `values` against N(0,1).
double ks_statistic_normal(std::vector<double> values);

nlohmann::json to_json(const BvmDiagnostic& diag);
nlohmann::json to_json(const BvmQuantities& q);

}  // namespace odebayes
