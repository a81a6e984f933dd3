#include "odebayes/bvm.hpp"
#include "odebayes/conjugate.hpp"
#include "odebayes/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace odebayes;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

DesignMatrix identity_design() {
    // Order-2 splines with one interval: hat functions 1-t and t; at t=0,1 the design is I_2.
    const std::vector<double> pts{0.0, 1.0};
    return design_matrix(SplineBasis(2, 1), pts);
}

Mat noisy_lv_like(const DesignMatrix& X, int d, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 0.2);
    Mat Y(X.rows(), d);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (int j = 0; j < d; ++j) Y(i, j) = std::sin(3.0 * X.points[static_cast<std::size_t>(i)] + j) + 1.0 + normal(gen);
    return Y;
}

}  // namespace

TEST_CASE("hand-computed posterior") {
    const auto X = identity_design();
    REQUIRE((X.values - Mat::Identity(2, 2)).norm() == 0.0);
    const Vec y = (Vec(2) << 1.0, 2.0).finished();
    const auto post = beta_posterior(X, y, 1.0, 1, PriorMode::fixed_sigma);
    CHECK(post.c_n == doctest::Approx(1.5));
    CHECK(post.mean[0] == doctest::Approx(2.0 / 3.0));
    CHECK(post.mean[1] == doctest::Approx(4.0 / 3.0));
    CHECK((post.covariance(1.0) - (2.0 / 3.0) * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);

    const auto nearly_ls = beta_posterior(X, y, 1e-12, 1, PriorMode::fixed_sigma);
    CHECK((nearly_ls.mean - y).cwiseAbs().maxCoeff() < 1e-11);
    CHECK_THROWS_AS(beta_posterior(X, y, 0.0, 1, PriorMode::fixed_sigma), std::invalid_argument);
    CHECK(prior_mode_from_string("hierarchical") == PriorMode::hierarchical);
    CHECK_THROWS_AS(prior_mode_from_string("flat"), std::invalid_argument);
}

TEST_CASE("posterior mean is the shrunken least-squares fit; modes coincide at sigma^2 = 1") {
    const auto X = design_matrix(SplineBasis(4, 5), midpoint_design(80));
    const Mat Y = noisy_lv_like(X, 1, 2);
    const Vec ls = least_squares_fit(X, Vec(Y.col(0)));
    for (auto mode : {PriorMode::fixed_sigma, PriorMode::hierarchical}) {
        const auto post = beta_posterior(X, Y.col(0), 0.3, 5, mode);
        CHECK((post.mean - ls / post.c_n).cwiseAbs().maxCoeff() < 1e-12);
    }
    const auto a = beta_posterior(X, Y.col(0), 1.0, 5, PriorMode::fixed_sigma);
    const auto b = beta_posterior(X, Y.col(0), 1.0, 5, PriorMode::hierarchical);
    CHECK(a.c_n == b.c_n);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.cov_scale - b.cov_scale).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("beta draws match the analytic moments") {
    const auto X = design_matrix(SplineBasis(3, 2), midpoint_design(30));
    const Mat Y = noisy_lv_like(X, 1, 4);
    const double sigma2 = 0.5;
    const auto post = beta_posterior(X, Y.col(0), sigma2, 2, PriorMode::fixed_sigma);
    CounterRng rng(99);
    const int count = 50000;
    const Mat draws = sample_beta(post, sigma2, count, rng);
    const Vec mean = draws.colwise().mean();
    const Mat centered = draws.rowwise() - mean.transpose();
    const Mat cov = centered.transpose() * centered / (count - 1.0);
    const Mat target = post.covariance(sigma2);
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
        CHECK(std::abs(mean[k] - post.mean[k]) < 4.0 * std::sqrt(target(k, k) / count));
        for (Eigen::Index l = 0; l < mean.size(); ++l) {
            // se of a sample covariance of Gaussians: sqrt((s_kl^2 + s_kk s_ll) / count)
            const double se = std::sqrt((target(k, l) * target(k, l) + target(k, k) * target(l, l)) / count);
            CHECK(std::abs(cov(k, l) - target(k, l)) < 4.0 * se);
        }
    }
}

TEST_CASE("whitened beta draws are standard normal; draws are reproducible") {
    const auto X = design_matrix(SplineBasis(4, 3), midpoint_design(40));
    const Mat Y = noisy_lv_like(X, 1, 6);
    const auto post = beta_posterior(X, Y.col(0), 0.04, 3, PriorMode::hierarchical);
    CounterRng rng(1234);
    const Mat draws = sample_beta(post, 0.04, 10000, rng);
    const Mat L = post.cholesky * 0.2;
    const Mat z = L.triangularView<Eigen::Lower>().solve((draws.rowwise() - post.mean.transpose()).transpose());
    for (Eigen::Index k = 0; k < z.rows(); ++k) {
        std::vector<double> col;
        for (Eigen::Index i = 0; i < z.cols(); ++i) col.push_back(z(k, i));
        CHECK(ks_statistic_normal(col) < 1.63 / std::sqrt(10000.0));
    }

    CounterRng r1(5), r2(5);
    CHECK((sample_beta(post, 0.04, 1, r1) - sample_beta(post, 0.04, 1, r2)).norm() == 0.0);
    CounterRng r3(5);
    CHECK((sample_beta(post, 0.0, 3, r3).rowwise() - post.mean.transpose()).norm() == 0.0);
}

TEST_CASE("inverse-gamma posterior matches the closed-form moments") {
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 30 + 10 * trial, k_n = 3 + trial % 3, d = 1 + trial % 3;
        const auto X = design_matrix(SplineBasis(4, k_n), midpoint_design(n));
        const Mat Y = noisy_lv_like(X, d, 100 + static_cast<std::uint64_t>(trial));
        const double a = 99.0, b = 1.0;
        const auto post = sigma2_posterior(X, Y, a, b, k_n);

        // Direct evaluation with an explicit projection matrix.
        const Mat P = X.values * (X.values.transpose() * X.values).inverse() * X.values.transpose();
        double quad = 0.0;
        for (int j = 0; j < d; ++j) quad += Y.col(j).dot(Y.col(j)) - Y.col(j).dot(P * Y.col(j)) / (1.0 + double(k_n) / n);
        const double mean = (0.5 * quad + b) / (d * n / 2.0 + a - 1.0);
        const double var = mean * mean / (d * n / 2.0 + a - 2.0);
        CHECK(post.shape == doctest::Approx((d * n + 2 * a) / 2));
        CHECK(post.mean() == doctest::Approx(mean).epsilon(1e-12));
        CHECK(post.variance() == doctest::Approx(var).epsilon(1e-12));
    }
    // Prior mean for shape 99, scale 1.
    CHECK(SigmaPosterior{99.0, 1.0}.mean() == doctest::Approx(1.0 / 98.0));

    const auto X = design_matrix(SplineBasis(4, 3), midpoint_design(40));
    const Mat Y = noisy_lv_like(X, 2, 3);
    CHECK_THROWS_AS(sigma2_posterior(X, Y, 2.0, 1.0, 3), std::invalid_argument);
    CHECK_THROWS_AS(sigma2_posterior(X, Y, 5.0, 0.0, 3), std::invalid_argument);

    const auto post = sigma2_posterior(X, Y, 99.0, 1.0, 3);
    CounterRng rng(17);
    const Vec s = sample_sigma2(post, 40000, rng);
    CHECK(std::abs(s.mean() - post.mean()) < 4.0 * std::sqrt(post.variance() / 40000));
}

TEST_CASE("correlated sigma^2 posterior reduces at Omega = I") {
    const auto X = design_matrix(SplineBasis(4, 3), midpoint_design(40));
    const Mat Y = noisy_lv_like(X, 2, 9);
    const auto a = sigma2_posterior(X, Y, 99.0, 1.0, 3);
    const auto b = sigma2_posterior_correlated(X, Y, Mat::Identity(2, 2), 99.0, 1.0, 3);
    CHECK(a.scale == doctest::Approx(b.scale).epsilon(1e-14));
    Mat omega(2, 2);
    omega << 1.0, 0.5, 0.5, 1.0;
    const auto c = sigma2_posterior_correlated(X, Y, omega, 99.0, 1.0, 3);
    CHECK(c.scale != doctest::Approx(a.scale));
    Mat bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(sigma2_posterior_correlated(X, Y, bad, 99.0, 1.0, 3), std::invalid_argument);
}

TEST_CASE("matrix-normal posterior with identity Omega is the independent fixed-sigma posterior") {
    const auto X = design_matrix(SplineBasis(4, 4), midpoint_design(60));
    const Mat Y = noisy_lv_like(X, 2, 21);
    const int k_n = 4;
    for (double sigma2 : {0.04, 1.0, 2.5}) {
        const auto mn = matrix_normal_posterior(X, Y, Mat::Identity(2, 2), sigma2, k_n);
        for (int j = 0; j < 2; ++j) {
            const auto bp = beta_posterior(X, Y.col(j), sigma2, k_n, PriorMode::fixed_sigma);
            CHECK((mn.mean.col(j) - bp.mean).cwiseAbs().maxCoeff() < 1e-10);
            const Mat block = mn.vec_covariance().block(j * X.cols(), j * X.cols(), X.cols(), X.cols());
            CHECK((block - bp.covariance(sigma2)).cwiseAbs().maxCoeff() < 1e-10);
        }
        const Mat off = mn.vec_covariance().block(0, X.cols(), X.cols(), X.cols());
        CHECK(off.cwiseAbs().maxCoeff() < 1e-14);
    }
    // With sigma^2 = 1 the hierarchical mode gives the same law.
    const auto mn = matrix_normal_posterior(X, Y, Mat::Identity(2, 2), 1.0, k_n);
    const auto hier = beta_posterior(X, Y.col(1), 1.0, k_n, PriorMode::hierarchical);
    CHECK((mn.mean.col(1) - hier.mean).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("Kronecker spectrum and matrix-normal sampling") {
    const auto X = design_matrix(SplineBasis(2, 2), midpoint_design(12));  // dim 3
    const Mat Y = noisy_lv_like(X, 2, 31);
    Mat omega(2, 2);
    omega << 1.0, 0.6, 0.6, 2.0;
    const auto mn = matrix_normal_posterior(X, Y, omega, 0.3, 2);
    const Mat V = mn.vec_covariance();

    const Eigen::SelfAdjointEigenSolver<Mat> er(mn.row_cov), ec(mn.col_cov), ev(V);
    std::vector<double> products;
    for (Eigen::Index i = 0; i < er.eigenvalues().size(); ++i)
        for (Eigen::Index j = 0; j < ec.eigenvalues().size(); ++j) products.push_back(er.eigenvalues()[i] * ec.eigenvalues()[j]);
    std::sort(products.begin(), products.end());
    for (std::size_t i = 0; i < products.size(); ++i)
        CHECK(ev.eigenvalues()[static_cast<Eigen::Index>(i)] == doctest::Approx(products[i]).epsilon(1e-10));

    CounterRng rng(77);
    const int count = 50000;
    const Eigen::Index m = V.rows();
    Mat draws(count, m);
    for (int i = 0; i < count; ++i) {
        const Mat B = sample_matrix_normal(mn, rng);
        draws.row(i) = Eigen::Map<const Vec>(B.data(), m).transpose();
    }
    const Vec mean = draws.colwise().mean();
    const Mat centered = draws.rowwise() - mean.transpose();
    const Mat cov = centered.transpose() * centered / (count - 1.0);
    const Vec target_mean = Eigen::Map<const Vec>(mn.mean.data(), m);
    for (Eigen::Index k = 0; k < m; ++k) {
        CHECK(std::abs(mean[k] - target_mean[k]) < 4.0 * std::sqrt(V(k, k) / count));
        for (Eigen::Index l = 0; l < m; ++l) {
            const double se = std::sqrt((V(k, l) * V(k, l) + V(k, k) * V(l, l)) / count);
            CHECK(std::abs(cov(k, l) - V(k, l)) < 4.0 * se);
        }
    }
}

TEST_CASE("diagonal Omega gives uncorrelated columns") {
    const auto X = design_matrix(SplineBasis(3, 2), midpoint_design(20));
    const Mat Y = noisy_lv_like(X, 2, 41);
    Mat omega = Mat::Zero(2, 2);
    omega.diagonal() << 1.0, 3.0;
    const auto mn = matrix_normal_posterior(X, Y, omega, 0.2, 2);
    CounterRng rng(3);
    const int count = 20000;
    Vec a(count), b(count);
    for (int i = 0; i < count; ++i) {
        const Mat B = sample_matrix_normal(mn, rng);
        a[i] = B(1, 0);
        b[i] = B(1, 1);
    }
    const double corr = ((a.array() - a.mean()) * (b.array() - b.mean())).sum() /
                        std::sqrt((a.array() - a.mean()).square().sum() * (b.array() - b.mean()).square().sum());
    CHECK(std::abs(corr) < 4.0 / std::sqrt(double(count)));
}
