#include "odebayes/twostep.hpp"

#include "odebayes/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

namespace odebayes {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

FitSpline::FitSpline(SplineBasis basis, Mat coeffs) : basis_(std::move(basis)), coeffs_(std::move(coeffs)) {
    if (coeffs_.rows() != basis_.dim()) throw std::invalid_argument("coefficient rows must equal the basis dimension");
}

NodeBasis::NodeBasis(const SplineBasis& basis, const WeightFn& w, const Quadrature& quad)
    : nodes_(quad.nodes()),
      weight_(static_cast<Eigen::Index>(quad.size())),
      values_(derivative_matrix(basis, quad.nodes(), 0)),
      slopes_(derivative_matrix(basis, quad.nodes(), 1)) {
    for (std::size_t q = 0; q < quad.size(); ++q) weight_[static_cast<Eigen::Index>(q)] = quad.weights()[q] * w(nodes_[q]);
}

void NodeBasis::sample_into(const Mat& coeffs, CurveSamples& out) const {
    if (coeffs.rows() != values_.cols()) throw std::invalid_argument("coefficient rows must equal the basis dimension");
    out.t = nodes_;
    out.weight = weight_;
    out.value.noalias() = values_ * coeffs;
    out.slope.noalias() = slopes_ * coeffs;
}

CurveSamples NodeBasis::sample(const Mat& coeffs) const {
    CurveSamples out;
    sample_into(coeffs, out);
    return out;
}

CurveSamples sample_curve(const FitSpline& fit, const WeightFn& w, const Quadrature& quad) {
    return NodeBasis(fit.basis(), w, quad).sample(fit.coeffs());
}

CurveSamples sample_curve(const MeanCurve& curve, const WeightFn& w, const Quadrature& quad) {
    CurveSamples out;
    out.t = quad.nodes();
    const auto q = static_cast<Eigen::Index>(quad.size());
    out.weight.resize(q);
    for (Eigen::Index k = 0; k < q; ++k) {
        const double t = out.t[static_cast<std::size_t>(k)];
        const Vec v = curve.value(t), s = curve.slope(t);
        if (k == 0) {
            out.value.resize(q, v.size());
            out.slope.resize(q, v.size());
        }
        out.value.row(k) = v.transpose();
        out.slope.row(k) = s.transpose();
        out.weight[k] = quad.weights()[static_cast<std::size_t>(k)] * w(t);
    }
    return out;
}

namespace {

// Phi(eta) = R_f(eta)^2 and its Gauss-Newton model.
class SquaredCriterion {
public:
    SquaredCriterion(const CurveSamples& curve, const OdeSystem& system) : curve_(curve), system_(system) {
        if (curve.value.cols() != system.state_dim()) throw std::invalid_argument("curve dimension does not match the ODE system");
    }

    double value(const Vec& eta) const {
        double phi = 0.0;
        Vec f(curve_.value.cols());
        for (Eigen::Index q = 0; q < curve_.value.rows(); ++q) {
            f = curve_.value.row(q).transpose();
            const Vec r = curve_.slope.row(q).transpose() - system_.rhs_unchecked(curve_.t[static_cast<std::size_t>(q)], f, eta);
            phi += curve_.weight[q] * r.squaredNorm();
        }
        if (!std::isfinite(phi)) throw std::domain_error("criterion is not finite at the requested parameter");
        return phi;
    }

    // Gradient of Phi and Gauss-Newton Hessian 2 sum w J^T J.
    double linearize(const Vec& eta, Vec& grad, Mat& hess) const {
        const Eigen::Index p = eta.size();
        grad = Vec::Zero(p);
        hess = Mat::Zero(p, p);
        double phi = 0.0;
        Vec f(curve_.value.cols());
        for (Eigen::Index q = 0; q < curve_.value.rows(); ++q) {
            const double t = curve_.t[static_cast<std::size_t>(q)];
            const double w = curve_.weight[q];
            f = curve_.value.row(q).transpose();
            const Vec r = curve_.slope.row(q).transpose() - system_.rhs_unchecked(t, f, eta);
            const Mat jt = system_.jac_theta_unchecked(t, f, eta);
            phi += w * r.squaredNorm();
            grad.noalias() -= 2.0 * w * jt.transpose() * r;
            hess.noalias() += 2.0 * w * jt.transpose() * jt;
        }
        if (!std::isfinite(phi) || !grad.allFinite()) throw std::domain_error("criterion is not finite at the requested parameter");
        return phi;
    }

private:
    const CurveSamples& curve_;
    const OdeSystem& system_;
};

Vec projected_gradient(const Vec& g, const Vec& eta, const ParameterBox& box) {
    Vec pg = g;
    for (Eigen::Index k = 0; k < g.size(); ++k) {
        if ((eta[k] <= box.lower[k] && g[k] > 0.0) || (eta[k] >= box.upper[k] && g[k] < 0.0)) pg[k] = 0.0;
    }
    return pg;
}

struct LocalResult {
    Vec theta;
    double phi = std::numeric_limits<double>::infinity();
    double pg_norm = std::numeric_limits<double>::infinity();
    bool converged = false;
    bool nelder_mead = false;
};

LocalResult gauss_newton(const SquaredCriterion& crit, const ParameterBox& box, const Vec& start, const PsiOptions& opt) {
    LocalResult res;
    Vec eta = box.clamp(start);
    Vec g;
    Mat H;
    double phi = crit.linearize(eta, g, H);
    const double first_order_tol = 1e-6 * (1.0 + projected_gradient(g, eta, box).norm());

    auto finish = [&](bool ok) {
        res.theta = eta;
        res.phi = phi;
        res.pg_norm = projected_gradient(g, eta, box).norm();
        res.converged = ok && res.pg_norm < first_order_tol;
        return res;
    };

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        const Vec pg = projected_gradient(g, eta, box);
        if (pg.norm() < opt.grad_tol) return finish(true);

        std::vector<Eigen::Index> free;
        for (Eigen::Index k = 0; k < eta.size(); ++k)
            if (pg[k] != 0.0 || (eta[k] > box.lower[k] && eta[k] < box.upper[k])) free.push_back(k);
        const auto nf = static_cast<Eigen::Index>(free.size());
        Mat Hf(nf, nf);
        Vec gf(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            gf[a] = g[free[static_cast<std::size_t>(a)]];
            for (Eigen::Index b = 0; b < nf; ++b) Hf(a, b) = H(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
        }
        Vec df;
        Eigen::LDLT<Mat> ldlt(Hf);
        const bool usable = ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 1e-13 * std::max(1.0, ldlt.vectorD().maxCoeff());
        if (usable) {
            df = -ldlt.solve(gf);
        } else {
            df = -gf / std::max(1.0, Hf.diagonal().maxCoeff());
        }
        Vec dir = Vec::Zero(eta.size());
        for (Eigen::Index a = 0; a < nf; ++a) dir[free[static_cast<std::size_t>(a)]] = df[a];

        bool accepted = false;
        Vec cand;
        double cand_phi = phi;
        for (double alpha = 1.0; alpha > 1e-12; alpha *= 0.5) {
            cand = box.clamp(eta + alpha * dir);
            cand_phi = crit.value(cand);
            if (cand_phi <= phi + 1e-4 * g.dot(cand - eta)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) return finish(true);  // no further decrease is representable

        const double step = (cand - eta).norm();
        eta = cand;
        phi = crit.linearize(eta, g, H);
        if (step < opt.step_tol * (1.0 + eta.norm())) return finish(true);
    }
    return finish(false);
}

LocalResult nelder_mead(const SquaredCriterion& crit, const ParameterBox& box, const Vec& start, int max_evals) {
    const Eigen::Index p = start.size();
    std::vector<Vec> simplex;
    std::vector<double> fv;
    const Vec width = box.upper - box.lower;
    simplex.push_back(box.clamp(start));
    for (Eigen::Index k = 0; k < p; ++k) {
        Vec v = simplex[0];
        v[k] += (v[k] + 0.05 * width[k] <= box.upper[k]) ? 0.05 * width[k] : -0.05 * width[k];
        simplex.push_back(box.clamp(v));
    }
    auto eval = [&](const Vec& v) { return crit.value(v); };
    for (const auto& v : simplex) fv.push_back(eval(v));
    int evals = static_cast<int>(fv.size());

    std::vector<std::size_t> order(simplex.size());
    LocalResult res;
    while (evals < max_evals) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

        double size = 0.0;
        for (const auto& v : simplex) size = std::max(size, (v - simplex[best]).lpNorm<Eigen::Infinity>());
        if (size < 1e-10 * (1.0 + simplex[best].norm()) && fv[worst] - fv[best] <= 1e-14 * (1.0 + fv[best])) {
            res.converged = true;
            break;
        }

        Vec centroid = Vec::Zero(p);
        for (std::size_t i = 0; i < simplex.size(); ++i)
            if (i != worst) centroid += simplex[i];
        centroid /= static_cast<double>(p);

        const Vec xr = box.clamp(centroid + (centroid - simplex[worst]));
        const double fr = eval(xr);
        ++evals;
        if (fr < fv[best]) {
            const Vec xe = box.clamp(centroid + 2.0 * (centroid - simplex[worst]));
            const double fe = eval(xe);
            ++evals;
            if (fe < fr) {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
        } else if (fr < fv[second]) {
            simplex[worst] = xr;
            fv[worst] = fr;
        } else {
            const Vec xc = fr < fv[worst] ? Vec(centroid + 0.5 * (xr - centroid)) : Vec(centroid + 0.5 * (simplex[worst] - centroid));
            const double fc = eval(xc);
            ++evals;
            if (fc < std::min(fr, fv[worst])) {
                simplex[worst] = xc;
                fv[worst] = fc;
            } else {
                for (std::size_t i = 0; i < simplex.size(); ++i) {
                    if (i == best) continue;
                    simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
                    fv[i] = eval(simplex[i]);
                    ++evals;
                }
            }
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    res.theta = simplex[best];
    res.phi = fv[best];
    res.nelder_mead = true;
    Vec g;
    Mat H;
    crit.linearize(res.theta, g, H);
    res.pg_norm = projected_gradient(g, res.theta, box).norm();
    return res;
}

bool lexicographically_less(const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

double criterion(const CurveSamples& curve, const OdeSystem& system, const Vec& eta) {
    if (!system.box().contains(eta)) throw std::domain_error("criterion evaluated outside the parameter box");
    return std::sqrt(SquaredCriterion(curve, system).value(eta));
}

double criterion(const FitSpline& fit, const Vec& eta, const OdeSystem& system, const WeightFn& w, const Quadrature& quad) {
    return criterion(sample_curve(fit, w, quad), system, eta);
}

Vec criterion_gradient(const CurveSamples& curve, const OdeSystem& system, const Vec& eta) {
    if (!system.box().contains(eta)) throw std::domain_error("criterion gradient evaluated outside the parameter box");
    Vec g;
    Mat H;
    SquaredCriterion(curve, system).linearize(eta, g, H);
    return g;
}

Vec criterion_gradient(const FitSpline& fit, const Vec& eta, const OdeSystem& system, const WeightFn& w,
                       const Quadrature& quad) {
    return criterion_gradient(sample_curve(fit, w, quad), system, eta);
}

std::vector<Vec> multistart_points(const ParameterBox& box, int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("at least one multistart point is required");
    std::vector<Vec> points{box.center()};
    const int strata = count - 1;
    if (strata == 0) return points;
    CounterRng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Index p = box.size();
    Mat lhs(strata, p);
    std::vector<int> perm(static_cast<std::size_t>(strata));
    for (Eigen::Index k = 0; k < p; ++k) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < strata; ++i) {
            const double u = (perm[static_cast<std::size_t>(i)] + unit(rng)) / strata;
            lhs(i, k) = box.lower[k] + u * (box.upper[k] - box.lower[k]);
        }
    }
    for (int i = 0; i < strata; ++i) points.emplace_back(lhs.row(i).transpose());
    return points;
}

PsiResult psi(const CurveSamples& curve, const OdeSystem& system, const PsiOptions& options) {
    const SquaredCriterion crit(curve, system);
    const auto& box = system.box();
    const auto starts = multistart_points(box, options.multistarts, options.seed);

    std::vector<LocalResult> accepted;
    LocalResult incumbent;
    for (const auto& start : starts) {
        LocalResult local;
        try {
            local = gauss_newton(crit, box, start, options);
            if (!local.converged && options.nelder_mead_fallback) {
                LocalResult nm = nelder_mead(crit, box, local.theta.size() ? local.theta : start, 400 * static_cast<int>(start.size()));
                if (nm.converged) local = nm;
            }
        } catch (const std::domain_error&) {
            continue;
        }
        if (local.phi < incumbent.phi) incumbent = local;
        if (local.converged) accepted.push_back(std::move(local));
    }
    if (accepted.empty()) {
        throw OptimizationFailure("no multistart converged", incumbent.theta.size() ? incumbent.theta : box.center(),
                                  std::sqrt(incumbent.phi));
    }

    double best_value = std::numeric_limits<double>::infinity();
    for (const auto& r : accepted) best_value = std::min(best_value, std::sqrt(r.phi));
    const LocalResult* chosen = nullptr;
    for (const auto& r : accepted) {
        if (std::sqrt(r.phi) - best_value > options.tie_tol) continue;
        if (!chosen || lexicographically_less(r.theta, chosen->theta)) chosen = &r;
    }

    PsiResult out;
    out.theta = chosen->theta;
    out.value = std::sqrt(chosen->phi);
    out.gradient_norm = chosen->pg_norm;
    out.converged_starts = static_cast<int>(accepted.size());
    out.total_starts = static_cast<int>(starts.size());
    out.used_nelder_mead = chosen->nelder_mead;
    for (std::size_t i = 0; i < accepted.size(); ++i)
        for (std::size_t j = i + 1; j < accepted.size(); ++j)
            out.start_spread = std::max(out.start_spread, (accepted[i].theta - accepted[j].theta).norm());
    return out;
}

PsiResult psi(const FitSpline& fit, const OdeSystem& system, const WeightFn& w, const Quadrature& quad,
              const PsiOptions& options) {
    return psi(sample_curve(fit, w, quad), system, options);
}

Mat ThetaSample::successful() const {
    Mat out(draws.rows() - failures, draws.cols());
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < draws.rows(); ++i)
        if (status[static_cast<std::size_t>(i)] != DrawStatus::failed) out.row(r++) = draws.row(i);
    return out;
}

ThetaSample theta_posterior_sample(const DesignMatrix& X, const Mat& Y, const OdeSystem& system, const WeightFn& w,
                                   const Quadrature& quad, const PriorConfig& prior, int count, const CounterRng& rng,
                                   const PsiOptions& options, int threads) {
    if (count < 1) throw std::invalid_argument("posterior sample count must be positive");
    if (Y.cols() != system.state_dim()) throw std::invalid_argument("response dimension does not match the ODE system");
    const int k_n = X.basis.num_intervals();
    const Eigen::Index d = Y.cols(), dim = X.cols();

    std::optional<SigmaPosterior> sigma_post;
    if (prior.mode == PriorMode::hierarchical) sigma_post = sigma2_posterior(X, Y, prior.a, prior.b, k_n);
    const double sigma2_for_beta = prior.mode == PriorMode::hierarchical ? 1.0 : prior.sigma2;
    std::vector<BetaPosterior> beta;
    for (Eigen::Index j = 0; j < d; ++j) beta.push_back(beta_posterior(X, Y.col(j), sigma2_for_beta, k_n, prior.mode));
    const NodeBasis nodes(X.basis, w, quad);

    ThetaSample out;
    out.draws = Mat::Constant(count, system.param_dim(), std::numeric_limits<double>::quiet_NaN());
    out.status.assign(static_cast<std::size_t>(count), DrawStatus::ok);
    out.sigma2 = Vec::Zero(count);

    PsiOptions retry = options;
    retry.multistarts *= 2;
    parallel_for(count, threads, [&](int i) {
        CounterRng draw_rng = rng.substream(static_cast<std::uint64_t>(i));
        const double sigma2 = sigma_post ? sample_sigma2(*sigma_post, draw_rng) : prior.sigma2;
        Mat coeffs(dim, d);
        for (Eigen::Index j = 0; j < d; ++j) sample_beta_into(beta[static_cast<std::size_t>(j)], sigma2, draw_rng, coeffs.col(j));
        const CurveSamples curve = nodes.sample(coeffs);
        out.sigma2[i] = sigma2;
        try {
            out.draws.row(i) = psi(curve, system, options).theta.transpose();
        } catch (const OptimizationFailure&) {
            try {
                out.draws.row(i) = psi(curve, system, retry).theta.transpose();
                out.status[static_cast<std::size_t>(i)] = DrawStatus::retried;
            } catch (const OptimizationFailure&) {
                out.status[static_cast<std::size_t>(i)] = DrawStatus::failed;
            }
        }
    });
    out.failures = static_cast<int>(std::count(out.status.begin(), out.status.end(), DrawStatus::failed));
    return out;
}

std::vector<Interval> credible_intervals(const Mat& samples, double level) {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("credible level must lie in (0,1)");
    const Eigen::Index count = samples.rows();
    if (count < 40) throw std::invalid_argument("credible intervals need at least 40 samples");
    const double alpha = 1.0 - level;
    // The small offset keeps exact products such as 0.025 * 1000 from rounding up.
    auto rank = [count](double frac) {
        const auto r = static_cast<Eigen::Index>(std::ceil(frac * static_cast<double>(count) - 1e-9));
        return std::clamp<Eigen::Index>(r, 1, count);
    };
    const Eigen::Index lo = rank(alpha / 2.0), hi = rank(1.0 - alpha / 2.0);
    std::vector<Interval> out;
    std::vector<double> column(static_cast<std::size_t>(count));
    for (Eigen::Index k = 0; k < samples.cols(); ++k) {
        for (Eigen::Index i = 0; i < count; ++i) column[static_cast<std::size_t>(i)] = samples(i, k);
        if (std::any_of(column.begin(), column.end(), [](double v) { return !std::isfinite(v); }))
            throw std::invalid_argument("credible intervals need finite samples");
        std::sort(column.begin(), column.end());
        out.push_back({column[static_cast<std::size_t>(lo - 1)], column[static_cast<std::size_t>(hi - 1)]});
    }
    return out;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal quantile needs p in (0,1)");
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

VbEstimate vb_estimate(const DesignMatrix& X, const Mat& Y, const OdeSystem& system, const WeightFn& w,
                       const Quadrature& quad, const PsiOptions& options, double level) {
    if (Y.cols() != system.state_dim()) throw std::invalid_argument("response dimension does not match the ODE system");
    const Mat coeffs = least_squares_fit(X, Y);
    const double n = static_cast<double>(X.rows());
    const double dof = static_cast<double>(Y.cols()) * (n - static_cast<double>(X.cols()));
    if (!(dof > 0.0)) throw std::invalid_argument("VB estimate needs more design points than basis functions");

    VbEstimate out;
    out.sigma2_hat = (Y - X.values * coeffs).squaredNorm() / dof;
    const FitSpline fit(X.basis, coeffs);
    out.theta = psi(fit, system, w, quad, options).theta;

    const TruthContext plug_in{fit.curve(), out.theta, false};
    const auto q = compute_bvm_quantities(plug_in, system, X.basis, w, quad);
    out.sigma_n = compute_mu_sigma(X, Y, q).sigma;
    const double z = normal_quantile(0.5 + level / 2.0);
    for (Eigen::Index k = 0; k < out.theta.size(); ++k) {
        const double half = z * std::sqrt(out.sigma2_hat * out.sigma_n(k, k) / n);
        out.intervals.push_back({out.theta[k] - half, out.theta[k] + half});
    }
    return out;
}

TruthContext make_truth_context(MeanCurve f0, const OdeSystem& system, const WeightFn& w, const Quadrature& quad,
                                bool well_specified, const PsiOptions& options) {
    const auto theta0 = psi(sample_curve(f0, w, quad), system, options).theta;
    return {std::move(f0), theta0, well_specified};
}

Quadrature criterion_quadrature(const SplineBasis& basis, int nodes) {
    // Gauss-Legendre on every knot span. With 2m points per span the squared
    // residual of a polynomial field of degree <= 2 in f is integrated exactly.
    const int k = basis.num_intervals();
    const int per_span = std::max(2 * basis.order(), (nodes + k - 1) / k);
    return Quadrature::composite(basis.breakpoints(), per_span);
}

}  // namespace odebayes
