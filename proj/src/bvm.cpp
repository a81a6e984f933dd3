#include "odebayes/bvm.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace odebayes {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

MeanCurve spline_curve(const SplineBasis& basis, const Mat& coeffs) {
    if (coeffs.rows() != basis.dim()) throw std::invalid_argument("coefficient rows must equal the basis dimension");
    return {[basis, coeffs](double t) -> Vec { return coeffs.transpose() * basis.eval(t, 0); },
            [basis, coeffs](double t) -> Vec { return coeffs.transpose() * basis.eval(t, 1); }};
}

namespace {

Vec residual(const TruthContext& ctx, const OdeSystem& system, double t, const Vec& f) {
    return ctx.f0.slope(t) - system.rhs(t, f, ctx.theta0);
}

// (D_f S)_{k,j} = sum_i r_i d^2 F_i / (d theta_k d f_j), central differences in f.
Mat state_derivative_of_S(const OdeSystem& system, double t, const Vec& f, const Vec& theta, const Vec& r) {
    const Eigen::Index p = theta.size(), d = f.size();
    Mat out(p, d);
    Vec hi = f, lo = f;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double h = fd_step(f[j]);
        hi[j] = f[j] + h;
        lo[j] = f[j] - h;
        const Mat dj = (system.jac_theta(t, hi, theta) - system.jac_theta(t, lo, theta)) / (2 * h);
        out.col(j) = dj.transpose() * r;
        hi[j] = lo[j] = f[j];
    }
    return out;
}

}  // namespace

Vec compute_S(const TruthContext& ctx, const OdeSystem& system, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("S evaluated outside [0,1]");
    const Vec f = ctx.f0.value(t);
    return system.jac_theta(t, f, ctx.theta0).transpose() * residual(ctx, system, t, f);
}

Mat compute_J(const TruthContext& ctx, const OdeSystem& system, const WeightFn& w, const Quadrature& quad) {
    const int p = system.param_dim();
    Mat gram = Mat::Zero(p, p);
    Mat curvature = Mat::Zero(p, p);
    for (std::size_t q = 0; q < quad.size(); ++q) {
        const double t = quad.nodes()[q];
        const double wt = quad.weights()[q] * w(t);
        const Vec f = ctx.f0.value(t);
        const Mat jt = system.jac_theta(t, f, ctx.theta0);
        gram += wt * jt.transpose() * jt;
        // D_theta S = sum_i r_i Hess_theta F_i
        const Vec r = residual(ctx, system, t, f);
        const auto hess = system.jac_theta_theta(t, f, ctx.theta0);
        for (Eigen::Index i = 0; i < r.size(); ++i) curvature += wt * r[i] * hess[static_cast<std::size_t>(i)];
    }
    Mat J = gram - curvature;
    J = 0.5 * (J + J.transpose()).eval();
    Eigen::FullPivLU<Mat> lu(J);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) throw SingularMatrixError("J is singular; the normal approximation is undefined");
    return J;
}

Mat compute_A(const TruthContext& ctx, const OdeSystem& system, const WeightFn& w, const Mat& J, double t, double h) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("A evaluated outside [0,1]");
    const Vec f = ctx.f0.value(t);
    const Mat jt = system.jac_theta(t, f, ctx.theta0);  // d x p
    const Mat js = system.jac_state(t, f, ctx.theta0);  // d x d
    const double wt = w(t);

    // d/dt [D_theta F(t, f0(t))^T w(t)]: the Jacobian is differenced along the
    // tangent (1, f0'(t)), so kinks in the stored curve never enter.
    const Vec slope = ctx.f0.slope(t);
    const Mat djt = (system.jac_theta(t + h, f + h * slope, ctx.theta0) - system.jac_theta(t - h, f - h * slope, ctx.theta0)) / (2 * h);
    const Mat ddt = (wt * djt + w.derivative(t) * jt).transpose();

    Mat bracket = -ddt;
    if (wt != 0.0) {
        const Vec r = residual(ctx, system, t, f);
        bracket += -(jt.transpose() * js) * wt + state_derivative_of_S(system, t, f, ctx.theta0, r) * wt;
    }
    return J.partialPivLu().solve(bracket);
}

std::vector<Mat> compute_G(const SplineBasis& basis, const std::function<Mat(double)>& A, const Quadrature& quad) {
    std::vector<Mat> gt;
    Vec local(basis.order());
    for (std::size_t q = 0; q < quad.size(); ++q) {
        const double t = quad.nodes()[q];
        const Mat a = A(t);
        if (gt.empty()) gt.assign(static_cast<std::size_t>(a.cols()), Mat::Zero(a.rows(), basis.dim()));
        const int first = basis.eval_local(t, 0, local);
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            gt[static_cast<std::size_t>(j)].middleCols(first, basis.order()) += quad.weights()[q] * a.col(j) * local.transpose();
    }
    return gt;
}

BvmQuantities compute_bvm_quantities(const TruthContext& ctx, const OdeSystem& system, const SplineBasis& basis,
                                     const WeightFn& w, const Quadrature& quad) {
    BvmQuantities q;
    q.J = compute_J(ctx, system, w, quad);
    {
        Eigen::JacobiSVD<Mat> svd(q.J);
        const Vec s = svd.singularValues();
        q.J_condition = s[0] / s[s.size() - 1];
    }
    const int p = system.param_dim(), d = system.state_dim();
    q.nodes = quad.nodes();
    q.A_nodes.reserve(quad.size());
    for (double t : q.nodes) q.A_nodes.push_back(compute_A(ctx, system, w, q.J, t));

    q.Gt.assign(static_cast<std::size_t>(d), Mat::Zero(p, basis.dim()));
    q.B_grams.assign(static_cast<std::size_t>(d), Mat::Zero(p, p));
    q.gamma_f0 = Vec::Zero(p);
    Vec local(basis.order());
    for (std::size_t k = 0; k < quad.size(); ++k) {
        const double t = q.nodes[k];
        const double wk = quad.weights()[k];
        const Mat& a = q.A_nodes[k];
        const int first = basis.eval_local(t, 0, local);
        const Vec f = ctx.f0.value(t);
        for (int j = 0; j < d; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            q.Gt[ju].middleCols(first, basis.order()) += wk * a.col(j) * local.transpose();
            q.B_grams[ju] += wk * a.col(j) * a.col(j).transpose();
            q.gamma_f0 += wk * a.col(j) * f[j];
        }
    }
    return q;
}

Vec gamma_functional(const BvmQuantities& q, const Quadrature& quad, const std::function<Vec(double)>& z) {
    if (quad.size() != q.nodes.size()) throw std::invalid_argument("quadrature does not match tabulated A");
    Vec out = Vec::Zero(q.J.rows());
    for (std::size_t k = 0; k < quad.size(); ++k) out += quad.weights()[k] * q.A_nodes[k] * z(q.nodes[k]);
    return out;
}

MuSigma compute_mu_sigma(const DesignMatrix& X, const Mat& Y, const BvmQuantities& q) {
    if (Y.rows() != X.rows() || static_cast<std::size_t>(Y.cols()) != q.Gt.size())
        throw std::invalid_argument("data dimensions do not match the BvM quantities");
    const auto gram = gram_factor(X);
    const double n = static_cast<double>(X.rows());
    const Eigen::Index p = q.J.rows();
    const Mat ls = gram.solve(X.values.transpose() * Y);
    MuSigma out{Vec::Zero(p), Mat::Zero(p, p)};
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
        const Mat& gt = q.Gt[static_cast<std::size_t>(j)];
        out.mu += gt * ls.col(j);
        out.sigma += gt * gram.solve(gt.transpose());
    }
    out.mu = std::sqrt(n) * (out.mu - q.gamma_f0);
    out.sigma *= n;
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
    return out;
}

Mat spd_sqrt(const Mat& m, bool inverse) {
    if (m.rows() != m.cols() || !m.isApprox(m.transpose(), 1e-12)) throw std::invalid_argument("matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> eig(m);
    if (eig.info() != Eigen::Success || !(eig.eigenvalues().array() > 0.0).all())
        throw std::invalid_argument("matrix must be positive definite");
    const Vec s = inverse ? eig.eigenvalues().cwiseSqrt().cwiseInverse().eval() : eig.eigenvalues().cwiseSqrt().eval();
    return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

MuSigma compute_mu_sigma_star(const DesignMatrix& X, const Mat& Y, const BvmQuantities& q, const Mat& omega) {
    const Eigen::Index d = Y.cols();
    if (omega.rows() != d || omega.cols() != d) throw std::invalid_argument("Omega dimension does not match responses");
    if (Y.rows() != X.rows() || static_cast<std::size_t>(d) != q.Gt.size())
        throw std::invalid_argument("data dimensions do not match the BvM quantities");
    const Mat root = spd_sqrt(omega);
    const Mat root_inv = spd_sqrt(omega, true);  // (omega^{jk})
    const auto gram = gram_factor(X);
    const double n = static_cast<double>(X.rows());
    const Eigen::Index p = q.J.rows(), dim = X.cols();

    // (G_1^T ... G_d^T)(Omega^{1/2} (x) I); block k collects sum_j G_j^T (Omega^{1/2})_{jk}.
    Mat gcat(p, d * dim);
    for (Eigen::Index j = 0; j < d; ++j) gcat.middleCols(j * dim, dim) = q.Gt[static_cast<std::size_t>(j)];
    Mat kron = Mat::Zero(d * dim, d * dim);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k) kron.block(j * dim, k * dim, dim, dim) = root(j, k) * Mat::Identity(dim, dim);
    const Mat mixed = gcat * kron;

    MuSigma out{Vec::Zero(p), Mat::Zero(p, p)};
    for (Eigen::Index k = 0; k < d; ++k) {
        const Mat hk = mixed.middleCols(k * dim, dim);
        const Vec ycomb = Y * root_inv.col(k);
        out.mu += hk * gram.solve(X.values.transpose() * ycomb);
        out.sigma += hk * gram.solve(hk.transpose());
    }
    out.mu = std::sqrt(n) * (out.mu - q.gamma_f0);
    out.sigma *= n;
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
    return out;
}

EigenRange eigen_range(const Mat& symmetric) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetric, Eigen::EigenvaluesOnly);
    return {eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff()};
}

double ks_statistic_normal(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("KS statistic needs at least one value");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    double d = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-values[i] / std::sqrt(2.0));
        d = std::max({d, (i + 1) / n - cdf, cdf - i / n});
    }
    return d;
}

BvmDiagnostic bvm_diagnostic(const Mat& samples, const Vec& mu, const Mat& cov, const Vec& theta0, int n) {
    const Eigen::Index count = samples.rows(), p = samples.cols();
    if (count < 500) throw std::invalid_argument("BvM diagnostic needs at least 500 samples");
    if (mu.size() != p || cov.rows() != p || theta0.size() != p) throw std::invalid_argument("dimension mismatch in BvM diagnostic");
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success || !(cov.diagonal().array() > 0.0).all())
        throw SingularMatrixError("target covariance is singular");

    const Mat z = (std::sqrt(static_cast<double>(n)) * (samples.rowwise() - theta0.transpose()));
    BvmDiagnostic diag;
    diag.count = static_cast<int>(count);
    diag.ks_critical = 1.63 / std::sqrt(static_cast<double>(count));
    for (Eigen::Index k = 0; k < p; ++k) {
        const double sd = std::sqrt(cov(k, k));
        std::vector<double> standardized(static_cast<std::size_t>(count));
        for (Eigen::Index i = 0; i < count; ++i) standardized[static_cast<std::size_t>(i)] = (z(i, k) - mu[k]) / sd;
        diag.ks.push_back(ks_statistic_normal(std::move(standardized)));
        diag.ks_reject.push_back(diag.ks.back() > diag.ks_critical);
    }
    diag.sample_mean = z.colwise().mean().transpose();
    const Mat centered = z.rowwise() - diag.sample_mean.transpose();
    diag.sample_cov = centered.transpose() * centered / static_cast<double>(count - 1);
    const Vec dm = diag.sample_mean - mu;
    diag.mean_mahalanobis = static_cast<double>(count) * dm.dot(llt.solve(dm));
    diag.cov_rel_frobenius = (diag.sample_cov - cov).norm() / cov.norm();
    diag.cov_eigen = eigen_range(cov);
    return diag;
}

namespace {

nlohmann::json matrix_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<double> vector_of(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json to_json(const BvmDiagnostic& diag) {
    return {{"count", diag.count},
            {"ks", diag.ks},
            {"ks_critical", diag.ks_critical},
            {"ks_reject", diag.ks_reject},
            {"sample_mean", vector_of(diag.sample_mean)},
            {"sample_cov", matrix_json(diag.sample_cov)},
            {"mean_mahalanobis", diag.mean_mahalanobis},
            {"cov_rel_frobenius", diag.cov_rel_frobenius},
            {"cov_eigen_min", diag.cov_eigen.min},
            {"cov_eigen_max", diag.cov_eigen.max}};
}

nlohmann::json to_json(const BvmQuantities& q) {
    nlohmann::json gt = nlohmann::json::array(), grams = nlohmann::json::array(), gram_cond = nlohmann::json::array();
    for (const auto& g : q.Gt) gt.push_back(matrix_json(g));
    for (const auto& b : q.B_grams) {
        grams.push_back(matrix_json(b));
        const auto r = eigen_range(b);
        gram_cond.push_back(r.min > 0.0 ? r.max / r.min : std::numeric_limits<double>::infinity());
    }
    return {{"J", matrix_json(q.J)},
            {"J_condition", q.J_condition},
            {"G_transposed", gt},
            {"B_grams", grams},
            {"B_gram_condition", gram_cond},
            {"gamma_f0", vector_of(q.gamma_f0)}};
}

}  // namespace odebayes
