#include "odebayes/conjugate.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace odebayes {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

Vec standard_normals(Eigen::Index size, CounterRng& rng) {
    std::normal_distribution<double> normal;
    Vec z(size);
    for (Eigen::Index i = 0; i < size; ++i) z[i] = normal(rng);
    return z;
}

}  // namespace

std::string to_string(PriorMode mode) { return mode == PriorMode::fixed_sigma ? "fixed_sigma" : "hierarchical"; }

PriorMode prior_mode_from_string(const std::string& name) {
    if (name == "fixed_sigma" || name == "fixed") return PriorMode::fixed_sigma;
    if (name == "hierarchical") return PriorMode::hierarchical;
    throw std::invalid_argument("unknown prior mode '" + name + "'");
}

Eigen::LLT<Mat> spd_factor(const Mat& m, const char* what) {
    if (m.rows() != m.cols() || !m.isApprox(m.transpose(), 1e-12))
        throw std::invalid_argument(std::string(what) + " must be symmetric");
    Eigen::LLT<Mat> llt(m);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all())
        throw std::invalid_argument(std::string(what) + " must be positive definite");
    return llt;
}

BetaPosterior beta_posterior(const DesignMatrix& X, const Vec& y, double sigma2, int k_n, PriorMode mode) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma^2 must be positive");
    if (k_n < 1) throw std::invalid_argument("k_n must be positive");
    if (y.size() != X.rows()) throw std::invalid_argument("response length does not match design matrix");
    const auto gram = gram_factor(X);
    const double n = static_cast<double>(X.rows());

    BetaPosterior post;
    post.c_n = mode == PriorMode::fixed_sigma ? 1.0 + sigma2 * k_n / n : 1.0 + k_n / n;
    post.mean = gram.solve(X.values.transpose() * y) / post.c_n;
    post.cov_scale = gram.solve(Mat::Identity(X.cols(), X.cols())) / post.c_n;
    post.cov_scale = 0.5 * (post.cov_scale + post.cov_scale.transpose()).eval();
    post.cholesky = spd_factor(post.cov_scale, "posterior covariance").matrixL();
    return post;
}

void sample_beta_into(const BetaPosterior& post, double sigma2, CounterRng& rng, Eigen::Ref<Vec> out) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("sigma^2 must be nonnegative");
    const Vec shock = post.cholesky.triangularView<Eigen::Lower>() * standard_normals(post.mean.size(), rng);
    out = post.mean + std::sqrt(sigma2) * shock;
}

Mat sample_beta(const BetaPosterior& post, double sigma2, int count, CounterRng& rng) {
    if (count < 1) throw std::invalid_argument("sample count must be positive");
    Mat draws(count, post.mean.size());
    Vec row(post.mean.size());
    for (int i = 0; i < count; ++i) {
        sample_beta_into(post, sigma2, rng, row);
        draws.row(i) = row.transpose();
    }
    return draws;
}

SigmaPosterior sigma2_posterior(const DesignMatrix& X, const Mat& Y, double a, double b, int k_n) {
    return sigma2_posterior_correlated(X, Y, Mat::Identity(Y.cols(), Y.cols()), a, b, k_n);
}

SigmaPosterior sigma2_posterior_correlated(const DesignMatrix& X, const Mat& Y, const Mat& omega, double a, double b,
                                           int k_n) {
    if (!(a > 2.0)) throw std::invalid_argument("inverse-gamma shape a must exceed 2");
    if (!(b > 0.0)) throw std::invalid_argument("inverse-gamma scale b must be positive");
    if (Y.rows() != X.rows()) throw std::invalid_argument("response length does not match design matrix");
    if (omega.rows() != Y.cols()) throw std::invalid_argument("Omega dimension does not match responses");
    const auto omega_llt = spd_factor(omega, "Omega");
    const auto gram = gram_factor(X);
    const double n = static_cast<double>(X.rows());
    const double shrink = 1.0 / (1.0 + k_n / n);

    // tr(Omega^{-1} Y^T (I - shrink P_X) Y) = sum_jk (Omega^{-1})_{jk} Y_j^T (I - shrink P_X) Y_k
    const Mat xty = X.values.transpose() * Y;
    const Mat quad = Y.transpose() * Y - shrink * xty.transpose() * gram.solve(xty);
    const Mat omega_inv = omega_llt.solve(Mat::Identity(omega.rows(), omega.cols()));
    const double energy = (omega_inv.cwiseProduct(quad)).sum();

    SigmaPosterior post;
    post.shape = (static_cast<double>(Y.cols()) * n + 2.0 * a) / 2.0;
    post.scale = b + 0.5 * energy;
    if (!(post.scale > 0.0)) throw std::runtime_error("inverse-gamma posterior scale is not positive");
    return post;
}

double sample_sigma2(const SigmaPosterior& post, CounterRng& rng) {
    std::gamma_distribution<double> gamma(post.shape, 1.0);
    return post.scale / gamma(rng);
}

Vec sample_sigma2(const SigmaPosterior& post, int count, CounterRng& rng) {
    if (count < 1) throw std::invalid_argument("sample count must be positive");
    Vec out(count);
    for (int i = 0; i < count; ++i) out[i] = sample_sigma2(post, rng);
    return out;
}

Mat MatrixNormalPosterior::vec_covariance() const {
    const Eigen::Index r = row_cov.rows(), c = col_cov.rows();
    Mat out(r * c, r * c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j) out.block(i * c, j * c, c, c) = row_cov(i, j) * col_cov;
    return out;
}

MatrixNormalPosterior matrix_normal_posterior(const DesignMatrix& X, const Mat& Y, const Mat& omega, double sigma2, int k_n) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma^2 must be positive");
    if (k_n < 1) throw std::invalid_argument("k_n must be positive");
    if (Y.rows() != X.rows()) throw std::invalid_argument("response length does not match design matrix");
    if (omega.rows() != Y.cols()) throw std::invalid_argument("Omega dimension does not match responses");
    spd_factor(omega, "Omega");
    const auto gram = gram_factor(X);
    const double n = static_cast<double>(X.rows());
    const Eigen::Index d = Y.cols();

    const Mat sigma_inv = (sigma2 * omega).llt().solve(Mat::Identity(d, d));
    Mat precision = sigma_inv + (k_n / n) * Mat::Identity(d, d);
    precision = 0.5 * (precision + precision.transpose()).eval();

    MatrixNormalPosterior post;
    post.row_cov = precision.llt().solve(Mat::Identity(d, d));
    post.row_cov = 0.5 * (post.row_cov + post.row_cov.transpose()).eval();
    post.col_cov = gram.solve(Mat::Identity(X.cols(), X.cols()));
    post.col_cov = 0.5 * (post.col_cov + post.col_cov.transpose()).eval();
    post.mean = gram.solve(X.values.transpose() * Y) * sigma_inv * post.row_cov;
    post.row_chol = spd_factor(post.row_cov, "row covariance").matrixL();
    post.col_chol = spd_factor(post.col_cov, "column covariance").matrixL();
    return post;
}

Mat sample_matrix_normal(const MatrixNormalPosterior& post, CounterRng& rng) {
    const Eigen::Index rows = post.mean.rows(), cols = post.mean.cols();
    const Vec z = standard_normals(rows * cols, rng);
    const Mat Z = Eigen::Map<const Mat>(z.data(), rows, cols);
    const Mat left = post.col_chol.triangularView<Eigen::Lower>() * Z;
    return post.mean + left * post.row_chol.transpose();
}

}  // namespace odebayes
