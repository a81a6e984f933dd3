#pragma once

#include "odebayes/rng.hpp"
#include "odebayes/splines.hpp"

#include <Eigen/Dense>

#include <string>

namespace odebayes {

/// Prior covariance on each coefficient vector is n k_n^{-1} (X^T X)^{-1}
/// (fixed_sigma) or n k_n^{-1} sigma^2 (X^T X)^{-1} (hierarchical, used with an
/// inverse-gamma prior on sigma^2).
enum class PriorMode { fixed_sigma, hierarchical };

std::string to_string(PriorMode mode);
PriorMode prior_mode_from_string(const std::string& name);

/// beta_j | Y ~ N(mean, sigma^2 * cov_scale), mean = c_n^{-1} (X^T X)^{-1} X^T y_j,
/// cov_scale = c_n^{-1} (X^T X)^{-1}.
struct BetaPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov_scale;
    double c_n = 1.0;
    Eigen::MatrixXd cholesky;  // lower factor of cov_scale

    Eigen::MatrixXd covariance(double sigma2) const { return sigma2 * cov_scale; }
};

BetaPosterior beta_posterior(const DesignMatrix& X, const Eigen::VectorXd& y, double sigma2, int k_n, PriorMode mode);

/// count x dim matrix of i.i.d. draws from N(mean, sigma2 * cov_scale).
Eigen::MatrixXd sample_beta(const BetaPosterior& post, double sigma2, int count, CounterRng& rng);
/// Single draw written into `out`.
void sample_beta_into(const BetaPosterior& post, double sigma2, CounterRng& rng, Eigen::Ref<Eigen::VectorXd> out);

/// Inverse gamma with density proportional to x^{-shape-1} exp(-scale / x).
struct SigmaPosterior {
    double shape = 0.0;
    double scale = 0.0;

    double mean() const { return scale / (shape - 1.0); }
    double variance() const { return mean() * mean() / (shape - 2.0); }
};

/// Marginal posterior of sigma^2 under the hierarchical prior with an IG(a, b)
/// prior on sigma^2: shape (d n + 2a)/2, scale b + 1/2 sum_j Y_j^T (I - P_X / (1 + k_n/n)) Y_j.
SigmaPosterior sigma2_posterior(const DesignMatrix& X, const Eigen::MatrixXd& Y, double a, double b, int k_n);

/// Correlated-error analogue with known Omega: the quadratic term becomes
/// tr(Omega^{-1} Y^T (I - P_X / (1 + k_n/n)) Y). Reduces to sigma2_posterior at Omega = I.
SigmaPosterior sigma2_posterior_correlated(const DesignMatrix& X, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& omega,
                                           double a, double b, int k_n);

double sample_sigma2(const SigmaPosterior& post, CounterRng& rng);
Eigen::VectorXd sample_sigma2(const SigmaPosterior& post, int count, CounterRng& rng);

/// vec(B) | Y ~ N(vec(mean), row_cov (x) col_cov) with Sigma = sigma^2 Omega:
/// mean = (X^T X)^{-1} X^T Y Sigma^{-1} (Sigma^{-1} + k_n I / n)^{-1},
/// row_cov = (Sigma^{-1} + k_n I / n)^{-1}, col_cov = (X^T X)^{-1}.
struct MatrixNormalPosterior {
    Eigen::MatrixXd mean;      // dim x d
    Eigen::MatrixXd row_cov;   // d x d
    Eigen::MatrixXd col_cov;   // dim x dim
    Eigen::MatrixXd row_chol;
    Eigen::MatrixXd col_chol;

    /// row_cov (x) col_cov, the covariance of vec(B) (columns stacked).
    Eigen::MatrixXd vec_covariance() const;
};

MatrixNormalPosterior matrix_normal_posterior(const DesignMatrix& X, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& omega,
                                              double sigma2, int k_n);

/// One dim x d draw: mean + L_col Z L_row^T.
Eigen::MatrixXd sample_matrix_normal(const MatrixNormalPosterior& post, CounterRng& rng);

/// Throws std::invalid_argument unless `m` is symmetric positive definite.
Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& m, const char* what);

}  // namespace odebayes
