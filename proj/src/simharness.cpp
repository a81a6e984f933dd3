#include "odebayes/simharness.hpp"

#include "odebayes/parallel.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace odebayes {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using nlohmann::json;

namespace {

// Substream layout under the study seed: replication r owns stream r; within
// it, 0 feeds the data and 1 the posterior sampler.
constexpr std::uint64_t kDataStream = 0;
constexpr std::uint64_t kPosteriorStream = 1;

CounterRng replication_stream(const StudyConfig& cfg, int rep) {
    return CounterRng(cfg.seed).substream(static_cast<std::uint64_t>(rep));
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string to_string(ErrorLaw law) { return law == ErrorLaw::gaussian ? "gauss" : "t6"; }

ErrorLaw error_law_from_string(const std::string& name) {
    if (name == "gauss" || name == "gaussian") return ErrorLaw::gaussian;
    if (name == "t6" || name == "scaled_t6") return ErrorLaw::scaled_t6;
    throw ConfigError("unknown error law '" + name + "' (expected gauss or t6)");
}

int default_k_n(int n, int order) {
    if (n < 1) throw ConfigError("n must be positive");
    const int rate = static_cast<int>(std::ceil(6.0 * std::pow(static_cast<double>(n), 1.0 / 9.0)));
    return std::max(1, std::min(rate, n / 2 - order + 1));
}

PsiOptions StudyConfig::psi_options() const {
    PsiOptions opt;
    opt.multistarts = multistarts;
    return opt;
}

void StudyConfig::validate() const {
    if (study_case != 1 && study_case != 2) throw ConfigError("case must be 1 or 2");
    if (n < 1) throw ConfigError("n must be positive");
    if (reps < 1) throw ConfigError("reps must be at least 1");
    if (!(sigma0 > 0.0)) throw ConfigError("sigma0 must be positive");
    if (order < 2 || order > 10) throw ConfigError("order must lie in [2, 10]");
    if (k_n < 0) throw ConfigError("k_n must be positive, or 0 for the default rule");
    if (n < 2 * basis_dim())
        throw ConfigError("n = " + std::to_string(n) + " is below twice the basis dimension " + std::to_string(basis_dim()));
    if (posterior_draws < 40) throw ConfigError("posterior_draws must be at least 40");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
    if (!arm_bayes && !arm_vb) throw ConfigError("at least one arm must be enabled");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (quadrature_nodes < 8) throw ConfigError("quadrature_nodes must be at least 8");
    if (multistarts < 1) throw ConfigError("multistarts must be at least 1");
    if (rk4_steps < 10) throw ConfigError("rk4_steps must be at least 10");
    if (prior.mode == PriorMode::hierarchical && !(prior.a > 2.0 && prior.b > 0.0))
        throw ConfigError("prior needs a > 2 and b > 0");
    if (prior.mode == PriorMode::fixed_sigma && !(prior.sigma2 > 0.0)) throw ConfigError("prior sigma2 must be positive");
    try {
        system_by_name(system);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

json to_json(const StudyConfig& cfg) {
    std::vector<std::string> arms;
    if (cfg.arm_bayes) arms.emplace_back("bayes");
    if (cfg.arm_vb) arms.emplace_back("vb");
    return {
        {"case", cfg.study_case},
        {"n", cfg.n},
        {"reps", cfg.reps},
        {"error_law", to_string(cfg.error_law)},
        {"sigma0", cfg.sigma0},
        {"order", cfg.order},
        {"k_n", cfg.k_n},
        {"posterior_draws", cfg.posterior_draws},
        {"level", cfg.level},
        {"seed", cfg.seed},
        {"system", cfg.system},
        {"prior", {{"a", cfg.prior.a}, {"b", cfg.prior.b}, {"mode", to_string(cfg.prior.mode)}, {"sigma2", cfg.prior.sigma2}}},
        {"arms", arms},
        {"threads", cfg.threads},
        {"quadrature_nodes", cfg.quadrature_nodes},
        {"multistarts", cfg.multistarts},
        {"rk4_steps", cfg.rk4_steps},
    };
}

StudyConfig study_config_from_json(const json& j, StudyConfig cfg) {
    if (!j.is_object()) throw ConfigError("study config must be a JSON object");
    static const std::set<std::string> known{"case", "n", "reps", "error_law", "sigma0", "order", "k_n",
                                             "posterior_draws", "level", "seed", "system", "prior", "arms",
                                             "threads", "quadrature_nodes", "multistarts", "rk4_steps"};
    try {
        for (const auto& [key, value] : j.items()) {
            if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
            (void)value;
        }
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        take("case", cfg.study_case);
        take("n", cfg.n);
        take("reps", cfg.reps);
        if (j.contains("error_law")) cfg.error_law = error_law_from_string(j.at("error_law").get<std::string>());
        take("sigma0", cfg.sigma0);
        take("order", cfg.order);
        if (j.contains("k_n")) {
            const auto& k = j.at("k_n");
            if (k.is_string()) {
                if (k.get<std::string>() != "auto") throw ConfigError("k_n must be an integer or \"auto\"");
                cfg.k_n = 0;
            } else {
                cfg.k_n = k.get<int>();
            }
        }
        take("posterior_draws", cfg.posterior_draws);
        take("level", cfg.level);
        take("seed", cfg.seed);
        take("system", cfg.system);
        if (j.contains("prior")) {
            const auto& p = j.at("prior");
            for (const auto& [key, value] : p.items()) {
                if (key != "a" && key != "b" && key != "mode" && key != "sigma2")
                    throw ConfigError("unknown prior key '" + key + "'");
                (void)value;
            }
            if (p.contains("a")) cfg.prior.a = p.at("a").get<double>();
            if (p.contains("b")) cfg.prior.b = p.at("b").get<double>();
            if (p.contains("sigma2")) cfg.prior.sigma2 = p.at("sigma2").get<double>();
            if (p.contains("mode")) {
                try {
                    cfg.prior.mode = prior_mode_from_string(p.at("mode").get<std::string>());
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(e.what());
                }
            }
        }
        if (j.contains("arms")) {
            cfg.arm_bayes = cfg.arm_vb = false;
            for (const auto& arm : j.at("arms").get<std::vector<std::string>>()) {
                if (arm == "bayes") cfg.arm_bayes = true;
                else if (arm == "vb") cfg.arm_vb = true;
                else throw ConfigError("unknown arm '" + arm + "'");
            }
        }
        take("threads", cfg.threads);
        take("quadrature_nodes", cfg.quadrature_nodes);
        take("multistarts", cfg.multistarts);
        take("rk4_steps", cfg.rk4_steps);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed study config: ") + e.what());
    }
    return cfg;
}

StudyTruth make_study_truth(const StudyConfig& cfg, const OdeSystem& system) {
    StudyTruth truth;
    if (system.name() == "lotka_volterra") {
        truth.theta_ode = Vec::Constant(4, 10.0);
        truth.initial = (Vec(2) << 1.0, 0.5).finished();
    } else {
        truth.theta_ode = system.box().center();
        truth.initial = Vec::Constant(system.state_dim(), 0.5);
    }
    const auto traj = std::make_shared<Trajectory>(rk4_solve(system, truth.theta_ode, truth.initial, cfg.rk4_steps));
    // The slope comes from the right-hand side on the interpolated state, not
    // from differentiating the interpolant.
    auto slope = [traj, system, theta = truth.theta_ode](double t) { return system.rhs(t, traj->state(t), theta); };
    truth.well_specified = cfg.study_case == 1;
    if (truth.well_specified) {
        truth.f0 = {[traj](double t) { return traj->state(t); }, slope};
    } else {
        constexpr double amp = 0.4, freq = 4.0 * std::numbers::pi;
        truth.f0 = {[traj](double t) { return Vec(traj->state(t).array() + amp * std::sin(freq * t)); },
                    [slope](double t) { return Vec(slope(t).array() + amp * freq * std::cos(freq * t)); }};
    }
    const SplineBasis basis(cfg.order, cfg.resolved_k_n());
    truth.theta0 = make_truth_context(truth.f0, system, WeightFn::parabolic(), criterion_quadrature(basis, cfg.quadrature_nodes),
                                      truth.well_specified, cfg.psi_options())
                       .theta0;
    return truth;
}

double draw_error(ErrorLaw law, double sigma0, CounterRng& rng) {
    if (law == ErrorLaw::gaussian) return sigma0 * std::normal_distribution<double>()(rng);
    // t_6 has variance 6/4
    return sigma0 * std::sqrt(4.0 / 6.0) * std::student_t_distribution<double>(6.0)(rng);
}

Dataset gen_data(const StudyConfig& cfg, int rep_index, const StudyTruth& truth) {
    CounterRng rng = replication_stream(cfg, rep_index).substream(kDataStream);
    Dataset data;
    data.x = midpoint_design(cfg.n);
    const auto d = truth.initial.size();
    data.Y.resize(cfg.n, d);
    for (int i = 0; i < cfg.n; ++i) {
        const Vec mean = truth.f0.value(data.x[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < d; ++j) data.Y(i, j) = mean[j] + draw_error(cfg.error_law, cfg.sigma0, rng);
    }
    return data;
}

StudyContext make_study_context(const StudyConfig& cfg) {
    cfg.validate();
    OdeSystem system = system_by_name(cfg.system);
    StudyTruth truth = make_study_truth(cfg, system);
    SplineBasis basis(cfg.order, cfg.resolved_k_n());
    Quadrature quad = criterion_quadrature(basis, cfg.quadrature_nodes);
    return {cfg, std::move(system), std::move(truth), std::move(basis), WeightFn::parabolic(), std::move(quad)};
}

namespace {

ArmOutcome score(std::vector<Interval> intervals, const Vec& theta0) {
    ArmOutcome out;
    out.ok = true;
    for (Eigen::Index k = 0; k < theta0.size(); ++k) out.covered.push_back(intervals[static_cast<std::size_t>(k)].contains(theta0[k]));
    out.intervals = std::move(intervals);
    return out;
}

}  // namespace

ReplicationResult run_replication(const StudyContext& ctx, int rep_index) {
    const auto start = std::chrono::steady_clock::now();
    const auto& cfg = ctx.cfg;
    const Dataset data = gen_data(cfg, rep_index, ctx.truth);
    const DesignMatrix X = design_matrix(ctx.basis, data.x);

    ReplicationResult res;
    res.rep = rep_index;
    if (cfg.prior.mode == PriorMode::hierarchical)
        res.posterior_sigma2_mean = sigma2_posterior(X, data.Y, cfg.prior.a, cfg.prior.b, ctx.basis.num_intervals()).mean();

    if (cfg.arm_bayes) {
        ArmOutcome arm;
        try {
            const CounterRng rng = replication_stream(cfg, rep_index).substream(kPosteriorStream);
            const auto sample = theta_posterior_sample(X, data.Y, ctx.system, ctx.weight, ctx.quad, cfg.prior,
                                                       cfg.posterior_draws, rng, cfg.psi_options(), 1);
            arm = score(credible_intervals(sample.successful(), cfg.level), ctx.truth.theta0);
            arm.psi_failures = sample.failures;
        } catch (const std::exception& e) {
            arm = {};
            arm.error = e.what();
        }
        res.bayes = std::move(arm);
    }
    if (cfg.arm_vb) {
        ArmOutcome arm;
        try {
            const auto vb = vb_estimate(X, data.Y, ctx.system, ctx.weight, ctx.quad, cfg.psi_options(), cfg.level);
            arm = score(vb.intervals, ctx.truth.theta0);
        } catch (const std::exception& e) {
            arm = {};
            arm.psi_failures = 1;
            arm.error = e.what();
        }
        res.vb = std::move(arm);
    }
    res.seconds = seconds_since(start);
    return res;
}

std::vector<ArmSummary> aggregate(const std::vector<ReplicationResult>& reps, int param_dim) {
    std::vector<ArmSummary> out;
    for (const char* name : {"bayes", "vb"}) {
        const bool bayes = std::string(name) == "bayes";
        const bool present = std::any_of(reps.begin(), reps.end(), [&](const ReplicationResult& r) {
            return bayes ? r.bayes.has_value() : r.vb.has_value();
        });
        if (!present) continue;
        for (int k = 0; k < param_dim; ++k) {
            ArmSummary s;
            s.arm = name;
            s.param = k + 1;
            double hits = 0.0, sum = 0.0, sum_sq = 0.0;
            for (const auto& r : reps) {
                const auto& arm = bayes ? r.bayes : r.vb;
                if (!arm || !arm->ok) {
                    ++s.failures;
                    continue;
                }
                ++s.used;
                const double len = arm->intervals[static_cast<std::size_t>(k)].length();
                hits += arm->covered[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
                sum += len;
                sum_sq += len * len;
            }
            if (s.used > 0) {
                const double used = s.used;
                const double p = hits / used;
                s.coverage = 100.0 * p;
                s.cov_se = 100.0 * std::sqrt(p * (1.0 - p) / used);
                s.length = sum / used;
                s.len_se = s.used > 1 ? std::sqrt(std::max(0.0, (sum_sq - used * s.length * s.length) / (used - 1.0))) : 0.0;
            }
            out.push_back(s);
        }
    }
    return out;
}

StudyResult run_study(const StudyConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const StudyContext ctx = make_study_context(cfg);
    StudyResult result;
    result.config = cfg;
    result.k_n = cfg.resolved_k_n();
    result.theta0 = ctx.truth.theta0;
    result.replications.resize(static_cast<std::size_t>(cfg.reps));
    parallel_for(cfg.reps, cfg.threads, [&](int rep) { result.replications[static_cast<std::size_t>(rep)] = run_replication(ctx, rep); });
    result.summary = aggregate(result.replications, static_cast<int>(ctx.truth.theta0.size()));
    result.wall_seconds = seconds_since(start);
    return result;
}

std::string to_csv(const StudyResult& result) {
    std::ostringstream os;
    os << "n,param,arm,coverage,cov_se,length,len_se,failures\n";
    os << std::fixed;
    for (const auto& s : result.summary) {
        os << result.config.n << ",theta" << s.param << ',' << s.arm << ',' << std::setprecision(2) << s.coverage << ','
           << s.cov_se << ',' << std::setprecision(6) << s.length << ',' << s.len_se << ',' << s.failures << '\n';
    }
    return os.str();
}

namespace {

json arm_json(const ArmOutcome& arm) {
    json intervals = json::array();
    for (const auto& iv : arm.intervals) intervals.push_back({iv.lo, iv.hi});
    return {{"ok", arm.ok}, {"intervals", intervals}, {"covered", arm.covered}, {"psi_failures", arm.psi_failures}, {"error", arm.error}};
}

ArmOutcome arm_from_json(const json& j) {
    ArmOutcome arm;
    arm.ok = j.at("ok").get<bool>();
    for (const auto& iv : j.at("intervals")) arm.intervals.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
    arm.covered = j.at("covered").get<std::vector<bool>>();
    arm.psi_failures = j.at("psi_failures").get<int>();
    arm.error = j.at("error").get<std::string>();
    return arm;
}

}  // namespace

json to_json(const StudyResult& result) {
    json reps = json::array();
    for (const auto& r : result.replications) {
        json rj = {{"rep", r.rep}, {"posterior_sigma2_mean", r.posterior_sigma2_mean}, {"seconds", r.seconds}};
        rj["bayes"] = r.bayes ? arm_json(*r.bayes) : json(nullptr);
        rj["vb"] = r.vb ? arm_json(*r.vb) : json(nullptr);
        reps.push_back(std::move(rj));
    }
    json summary = json::array();
    for (const auto& s : result.summary) {
        summary.push_back({{"arm", s.arm}, {"param", s.param}, {"coverage", s.coverage}, {"cov_se", s.cov_se}, {"length", s.length},
                           {"len_se", s.len_se}, {"used", s.used}, {"failures", s.failures}});
    }
    return {{"config", to_json(result.config)}, {"k_n", result.k_n}, {"theta0", vec_json(result.theta0)},
            {"summary", summary}, {"replications", reps}, {"wall_seconds", result.wall_seconds}};
}

StudyResult study_result_from_json(const json& j) {
    StudyResult result;
    result.config = study_config_from_json(j.at("config"));
    result.k_n = j.at("k_n").get<int>();
    result.theta0 = json_vec(j.at("theta0"));
    result.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& rj : j.at("replications")) {
        ReplicationResult r;
        r.rep = rj.at("rep").get<int>();
        r.posterior_sigma2_mean = rj.at("posterior_sigma2_mean").get<double>();
        r.seconds = rj.at("seconds").get<double>();
        if (!rj.at("bayes").is_null()) r.bayes = arm_from_json(rj.at("bayes"));
        if (!rj.at("vb").is_null()) r.vb = arm_from_json(rj.at("vb"));
        result.replications.push_back(std::move(r));
    }
    for (const auto& sj : j.at("summary")) {
        ArmSummary s;
        s.arm = sj.at("arm").get<std::string>();
        s.param = sj.at("param").get<int>();
        s.coverage = sj.at("coverage").get<double>();
        s.cov_se = sj.at("cov_se").get<double>();
        s.length = sj.at("length").get<double>();
        s.len_se = sj.at("len_se").get<double>();
        s.used = sj.at("used").get<int>();
        s.failures = sj.at("failures").get<int>();
        result.summary.push_back(s);
    }
    return result;
}

BvmRun run_bvm(const StudyContext& ctx, int rep_index) {
    const auto& cfg = ctx.cfg;
    const Dataset data = gen_data(cfg, rep_index, ctx.truth);
    const DesignMatrix X = design_matrix(ctx.basis, data.x);
    const TruthContext truth{ctx.truth.f0, ctx.truth.theta0, ctx.truth.well_specified};

    BvmRun run;
    run.quantities = compute_bvm_quantities(truth, ctx.system, ctx.basis, ctx.weight, ctx.quad);
    run.mu_sigma = compute_mu_sigma(X, data.Y, run.quantities);
    if (cfg.prior.mode == PriorMode::hierarchical)
        run.posterior_sigma2_mean = sigma2_posterior(X, data.Y, cfg.prior.a, cfg.prior.b, ctx.basis.num_intervals()).mean();

    const CounterRng rng = replication_stream(cfg, rep_index).substream(kPosteriorStream);
    const auto sample = theta_posterior_sample(X, data.Y, ctx.system, ctx.weight, ctx.quad, cfg.prior, cfg.posterior_draws,
                                               rng, cfg.psi_options(), cfg.threads);
    run.psi_failures = sample.failures;
    run.diagnostic = bvm_diagnostic(sample.successful(), run.mu_sigma.mu, cfg.sigma0 * cfg.sigma0 * run.mu_sigma.sigma,
                                    ctx.truth.theta0, cfg.n);
    return run;
}

}  // namespace odebayes
