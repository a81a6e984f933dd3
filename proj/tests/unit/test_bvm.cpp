#include "odebayes/bvm.hpp"
#include "odebayes/simharness.hpp"
#include "odebayes/twostep.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace odebayes;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

StudyContext context(int study_case, int n, int k_n = 0) {
    StudyConfig cfg;
    cfg.study_case = study_case;
    cfg.n = n;
    cfg.k_n = k_n;
    return make_study_context(cfg);
}

TruthContext truth_of(const StudyContext& ctx) { return {ctx.truth.f0, ctx.truth.theta0, ctx.truth.well_specified}; }

Mat lv_jac_theta(const Vec& f) {
    Mat J(2, 4);
    J << f[0], -f[0] * f[1], 0, 0, 0, 0, -f[1], f[0] * f[1];
    return J;
}

}  // namespace

TEST_CASE("S vanishes in the well-specified case and matches a direct chain in Case 2") {
    const auto c1 = context(1, 100);
    const auto t1 = truth_of(c1);
    for (double t : {0.0, 0.13, 0.5, 0.87, 1.0}) CHECK(compute_S(t1, c1.system, t).cwiseAbs().maxCoeff() < 1e-12);

    const auto c2 = context(2, 100);
    const auto t2 = truth_of(c2);
    const double t = 0.3;
    const Vec f = c2.truth.f0.value(t);
    const Vec th = c2.truth.theta0;
    const Vec F = (Vec(2) << th[0] * f[0] - th[1] * f[0] * f[1], -th[2] * f[1] + th[3] * f[0] * f[1]).finished();
    const Vec r = c2.truth.f0.slope(t) - F;
    const Vec expected = lv_jac_theta(f).transpose() * r;
    CHECK((compute_S(t2, c2.system, t) - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(expected.norm() > 0.1);

    // theta enters S only through F's value; D_theta F does not depend on theta for LV.
    TruthContext shifted = t2;
    shifted.theta0[0] += 1.0;
    const Vec diff = compute_S(shifted, c2.system, t) - compute_S(t2, c2.system, t);
    const Vec jt_col0 = lv_jac_theta(f).col(0);
    CHECK((diff + lv_jac_theta(f).transpose() * jt_col0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("J: Gram structure, analytic versus FD, linearity in w") {
    for (int study_case : {1, 2}) {
        const auto ctx = context(study_case, 100);
        const auto truth = truth_of(ctx);
        const Mat J = compute_J(truth, ctx.system, ctx.weight, ctx.quad);
        const Mat J_fd = compute_J(truth, ctx.system.with_fd_jacobians(), ctx.weight, ctx.quad);
        CHECK((J - J_fd).norm() / J.norm() < 1e-4);
        const Mat J2 = compute_J(truth, ctx.system, ctx.weight.scaled(2.0), ctx.quad);
        CHECK((J2 - 2.0 * J).norm() < 1e-12 * J.norm());
        CHECK(eigen_range(J).min > 0.0);

        Mat gram = Mat::Zero(4, 4);
        for (std::size_t q = 0; q < ctx.quad.size(); ++q) {
            const double t = ctx.quad.nodes()[q];
            const Mat jt = lv_jac_theta(truth.f0.value(t));
            gram += ctx.quad.weights()[q] * ctx.weight(t) * jt.transpose() * jt;
        }
        if (study_case == 1) CHECK((J - gram).norm() < 1e-6);
        // LV is linear in theta, so the curvature term is zero in Case 2 as well.
        if (study_case == 2) CHECK((J - gram).norm() < 1e-6);
    }
}

TEST_CASE("A at the endpoints and under step refinement") {
    const auto ctx = context(2, 100);
    const auto truth = truth_of(ctx);
    const Mat J = compute_J(truth, ctx.system, ctx.weight, ctx.quad);
    const Eigen::PartialPivLU<Mat> lu(J);
    // At t=0 only -w'(0) (D_theta F)^T survives; w'(0) = 1 and w'(1) = -1.
    const Mat a0 = compute_A(truth, ctx.system, ctx.weight, J, 0.0);
    CHECK((a0 + lu.solve(Mat(lv_jac_theta(truth.f0.value(0.0)).transpose()))).cwiseAbs().maxCoeff() < 1e-6);
    const Mat a1 = compute_A(truth, ctx.system, ctx.weight, J, 1.0);
    CHECK((a1 - lu.solve(Mat(lv_jac_theta(truth.f0.value(1.0)).transpose()))).cwiseAbs().maxCoeff() < 1e-6);

    for (double t : {0.2, 0.55, 0.9}) {
        const Mat ah = compute_A(truth, ctx.system, ctx.weight, J, t, 1e-5);
        const Mat ah2 = compute_A(truth, ctx.system, ctx.weight, J, t, 5e-6);
        CHECK((ah - ah2).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, ah.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("G from a constant or linear A") {
    const SplineBasis basis(4, 6);
    const auto quad = criterion_quadrature(basis);
    Mat a(3, 2);
    a << 1.0, -2.0, 0.5, 3.0, 0.0, 1.5;
    const auto G = compute_G(basis, [&](double) { return a; }, quad);
    REQUIRE(G.size() == 2);
    for (int j = 0; j < 2; ++j) {
        Vec integrals(basis.dim());
        for (int l = 0; l < basis.dim(); ++l) integrals[l] = basis.integral(l);
        CHECK((G[static_cast<std::size_t>(j)] - a.col(j) * integrals.transpose()).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((G[static_cast<std::size_t>(j)] * Vec::Ones(basis.dim()) - a.col(j)).cwiseAbs().maxCoeff() < 1e-13);
    }
    auto a1 = [](double t) { return Mat::Constant(2, 2, std::sin(t)); };
    auto a2 = [](double t) { return Mat::Constant(2, 2, t * t); };
    const auto g1 = compute_G(basis, a1, quad), g2 = compute_G(basis, a2, quad);
    const auto g12 = compute_G(basis, [&](double t) { return Mat(2.0 * a1(t) - 3.0 * a2(t)); }, quad);
    CHECK((g12[1] - (2.0 * g1[1] - 3.0 * g2[1])).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("G rows shrink like k_n^{-1/2}") {
    // (int A N_l)^2 <= int |A|^2 N_l * int N_l and sum_l N_l = 1, so
    // |G_j|_F^2 <= max_l int N_l * int |A_j|^2 with max_l int N_l = 1 / k_n.
    std::vector<double> scaled;
    for (int k : {4, 8, 16}) {
        const auto ctx = context(1, 200, k);
        const auto q = compute_bvm_quantities(truth_of(ctx), ctx.system, ctx.basis, ctx.weight, ctx.quad);
        double max_integral = 0.0;
        for (int l = 0; l < ctx.basis.dim(); ++l) max_integral = std::max(max_integral, ctx.basis.integral(l));
        CHECK(max_integral == doctest::Approx(1.0 / k).epsilon(1e-12));
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(q.Gt[j].squaredNorm() <= max_integral * q.B_grams[j].trace() * (1 + 1e-10));
            CHECK(std::sqrt(double(k)) * q.Gt[j].norm() <= std::sqrt(q.B_grams[j].trace()) * (1 + 1e-10));
        }
        scaled.push_back(std::sqrt(double(k)) * q.Gt[0].norm());
    }
    // The bound is approached from below as the knots resolve A.
    CHECK(scaled[0] < scaled[1]);
    CHECK(scaled[1] < scaled[2]);
}

TEST_CASE("mu_n and Sigma_n on noiseless data") {
    std::vector<double> mu_norms, lo, hi;
    for (auto [n, k] : {std::pair{100, 10}, std::pair{400, 20}, std::pair{1600, 40}}) {
        const auto ctx = context(1, n, k);
        const auto q = compute_bvm_quantities(truth_of(ctx), ctx.system, ctx.basis, ctx.weight, ctx.quad);
        const auto X = design_matrix(ctx.basis, midpoint_design(n));
        Mat Y(n, 2);
        for (int i = 0; i < n; ++i) Y.row(i) = ctx.truth.f0.value(X.points[static_cast<std::size_t>(i)]).transpose();
        const auto ms = compute_mu_sigma(X, Y, q);
        mu_norms.push_back(ms.mu.norm());
        CHECK((ms.sigma - ms.sigma.transpose()).norm() == 0.0);
        const auto er = eigen_range(ms.sigma);
        lo.push_back(er.min);
        hi.push_back(er.max);
        CHECK(er.min > 0.0);
    }
    CHECK(mu_norms[1] < mu_norms[0]);
    CHECK(mu_norms[2] < mu_norms[1]);
    CHECK(*std::max_element(lo.begin(), lo.end()) / *std::min_element(lo.begin(), lo.end()) < 2.0);
    CHECK(*std::max_element(hi.begin(), hi.end()) / *std::min_element(hi.begin(), hi.end()) < 2.0);
}

TEST_CASE("Sigma_n passes the usability gate for every study configuration") {
    for (int study_case : {1, 2})
        for (int n : {50, 100, 500}) {
            const auto ctx = context(study_case, n);
            const auto q = compute_bvm_quantities(truth_of(ctx), ctx.system, ctx.basis, ctx.weight, ctx.quad);
            const auto data = gen_data(ctx.cfg, 0, ctx.truth);
            const auto ms = compute_mu_sigma(design_matrix(ctx.basis, data.x), data.Y, q);
            const auto er = eigen_range(ms.sigma);
            CHECK(er.min > 0.0);
            CHECK(er.max / er.min < 1e6);
            for (const auto& b : q.B_grams) CHECK(eigen_range(b).min > 0.0);
        }
}

TEST_CASE("degenerate A gives zero centre and scale") {
    BvmQuantities q;
    q.J = Mat::Identity(2, 2);
    q.Gt = {Mat::Zero(2, 5)};
    q.gamma_f0 = Vec::Zero(2);
    const auto X = design_matrix(SplineBasis(3, 3), midpoint_design(30));
    const auto ms = compute_mu_sigma(X, Mat::Ones(30, 1), q);
    CHECK(ms.mu.norm() == 0.0);
    CHECK(ms.sigma.norm() == 0.0);
}

TEST_CASE("correlated-error centre and scale") {
    const auto ctx = context(2, 100);
    const auto q = compute_bvm_quantities(truth_of(ctx), ctx.system, ctx.basis, ctx.weight, ctx.quad);
    const auto data = gen_data(ctx.cfg, 3, ctx.truth);
    const auto X = design_matrix(ctx.basis, data.x);
    const auto base = compute_mu_sigma(X, data.Y, q);
    const auto star = compute_mu_sigma_star(X, data.Y, q, Mat::Identity(2, 2));
    CHECK((star.mu - base.mu).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((star.sigma - base.sigma).cwiseAbs().maxCoeff() < 1e-10);

    Mat omega(2, 2);
    omega << 1.0, 0.5, 0.5, 1.0;
    const auto corr = compute_mu_sigma_star(X, data.Y, q, omega);

    // Dense oracle: n (G_1^T ... G_d^T) (Omega (x) (X^T X)^{-1}) (G_1^T ... G_d^T)^T.
    const Eigen::Index dim = X.cols();
    Mat gcat(4, 2 * dim);
    gcat << q.Gt[0], q.Gt[1];
    const Mat gram_inv = (X.values.transpose() * X.values).inverse();
    Mat kron(2 * dim, 2 * dim);
    for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) kron.block(j * dim, k * dim, dim, dim) = omega(j, k) * gram_inv;
    const Mat dense = 100.0 * gcat * kron * gcat.transpose();
    CHECK((corr.sigma - dense).cwiseAbs().maxCoeff() < 1e-9 * dense.cwiseAbs().maxCoeff());
    CHECK((corr.mu - base.mu).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, base.mu.norm()));

    // Relabel the two responses.
    BvmQuantities swapped = q;
    std::swap(swapped.Gt[0], swapped.Gt[1]);
    Mat Ys(data.Y.rows(), 2);
    Ys << data.Y.col(1), data.Y.col(0);
    Mat P(2, 2);
    P << 0, 1, 1, 0;
    Mat omega2(2, 2);
    omega2 << 1.0, 0.3, 0.3, 2.0;
    const auto s1 = compute_mu_sigma_star(X, data.Y, q, omega2);
    const auto s2 = compute_mu_sigma_star(X, Ys, swapped, P * omega2 * P.transpose());
    CHECK((s1.mu - s2.mu).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((s1.sigma - s2.sigma).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("Gamma is linear in the curve") {
    const auto ctx = context(1, 100);
    const auto q = compute_bvm_quantities(truth_of(ctx), ctx.system, ctx.basis, ctx.weight, ctx.quad);
    auto z1 = [](double t) { return (Vec(2) << std::cos(t), t).finished(); };
    auto z2 = [](double t) { return (Vec(2) << t * t, 1.0).finished(); };
    const Vec lhs = gamma_functional(q, ctx.quad, [&](double t) { return Vec(1.5 * z1(t) - 0.25 * z2(t)); });
    const Vec rhs = 1.5 * gamma_functional(q, ctx.quad, z1) - 0.25 * gamma_functional(q, ctx.quad, z2);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, rhs.norm()));
    CHECK((gamma_functional(q, ctx.quad, ctx.truth.f0.value) - q.gamma_f0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("diagnostic calibration and power") {
    const int count = 2000, n = 100;
    Mat cov(3, 3);
    cov << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
    const Vec mu = (Vec(3) << 0.5, -1.0, 0.2).finished();
    const Vec theta0 = (Vec(3) << 10.0, 5.0, 1.0).finished();
    const Mat L = cov.llt().matrixL();
    CounterRng rng(31);
    std::normal_distribution<double> normal;
    Mat draws(count, 3);
    for (int i = 0; i < count; ++i) {
        Vec z(3);
        for (auto& v : z) v = normal(rng);
        draws.row(i) = (theta0 + (mu + L * z) / std::sqrt(double(n))).transpose();
    }
    const auto ok = bvm_diagnostic(draws, mu, cov, theta0, n);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(ok.ks[k] < ok.ks_critical);
        CHECK_FALSE(ok.ks_reject[k]);
    }
    CHECK(ok.cov_rel_frobenius < 0.1);
    CHECK(ok.mean_mahalanobis < 16.3);  // chi^2_3 at 0.001

    Mat shifted = draws;
    shifted.col(0).array() += 5.0 * std::sqrt(cov(0, 0) / n);
    const auto bad = bvm_diagnostic(shifted, mu, cov, theta0, n);
    CHECK(bad.ks_reject[0]);
    CHECK_FALSE(bad.ks_reject[1]);

    CHECK_THROWS_AS(bvm_diagnostic(draws.topRows(499), mu, cov, theta0, n), std::invalid_argument);
    CHECK(to_json(ok).contains("ks"));
}
