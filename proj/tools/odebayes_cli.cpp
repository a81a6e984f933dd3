// odebayes command line: coverage studies, BvM diagnostics, single fits.

#include "odebayes/bvm.hpp"
#include "odebayes/conjugate.hpp"
#include "odebayes/simharness.hpp"
#include "odebayes/splines.hpp"
#include "odebayes/twostep.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odebayes;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Flags {
    std::string config;
    int n = 0, reps = 0, study_case = 0, kn = -1, order = 0, draws = 0, threads = 0;
    std::string error;
    std::uint64_t seed = 0;
    std::string out = ".";
    std::vector<std::string> arms;
};

void add_study_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON study config")->check(CLI::ExistingFile);
    cmd->add_option("--n", f.n, "sample size");
    cmd->add_option("--reps", f.reps, "replications");
    cmd->add_option("--case", f.study_case, "1 (mean solves the ODE) or 2 (perturbed mean)")->check(CLI::IsMember({1, 2}));
    cmd->add_option("--error", f.error, "error law")->check(CLI::IsMember({"gauss", "t6"}));
    cmd->add_option("--kn", f.kn, "number of spline intervals (0 = default rule)");
    cmd->add_option("--order", f.order, "spline order");
    cmd->add_option("--draws", f.draws, "posterior draws per replication");
    cmd->add_option("--seed", f.seed, "64-bit seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--threads", f.threads, "worker threads");
    cmd->add_option("--arms", f.arms, "arms to run (bayes, vb)")->delimiter(',');
}

StudyConfig resolve_config(const CLI::App* cmd, const Flags& f) {
    StudyConfig cfg;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("cannot parse " + f.config + ": " + e.what());
        }
        cfg = study_config_from_json(j);
    }
    if (cmd->count("--n")) cfg.n = f.n;
    if (cmd->count("--reps")) cfg.reps = f.reps;
    if (cmd->count("--case")) cfg.study_case = f.study_case;
    if (cmd->count("--error")) cfg.error_law = error_law_from_string(f.error);
    if (cmd->count("--kn")) cfg.k_n = f.kn;
    if (cmd->count("--order")) cfg.order = f.order;
    if (cmd->count("--draws")) cfg.posterior_draws = f.draws;
    if (cmd->count("--seed")) cfg.seed = f.seed;
    if (cmd->count("--threads")) cfg.threads = f.threads;
    if (cmd->count("--arms")) cfg = study_config_from_json({{"arms", f.arms}}, cfg);
    cfg.validate();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

int cmd_study(const StudyConfig& cfg, const fs::path& out) {
    const auto result = run_study(cfg);
    const std::string csv = to_csv(result);
    const std::string stem = "table_n" + std::to_string(cfg.n);
    write_file(out / (stem + ".csv"), csv);
    write_file(out / (stem + ".json"), to_json(result).dump(2) + "\n");
    std::cout << csv;
    std::cerr << "k_n=" << result.k_n << " reps=" << cfg.reps << " wall=" << result.wall_seconds << "s -> "
              << (out / (stem + ".csv")).string() << "\n";
    return 0;
}

int cmd_bvm(StudyConfig cfg, const fs::path& out) {
    if (cfg.posterior_draws < 500) cfg.posterior_draws = 500;
    const auto ctx = make_study_context(cfg);
    const auto run = run_bvm(ctx, 0);
    json report = {{"config", to_json(cfg)},
                   {"k_n", cfg.resolved_k_n()},
                   {"theta0", std::vector<double>(ctx.truth.theta0.data(), ctx.truth.theta0.data() + ctx.truth.theta0.size())},
                   {"posterior_sigma2_mean", run.posterior_sigma2_mean},
                   {"psi_failures", run.psi_failures},
                   {"quantities", to_json(run.quantities)},
                   {"diagnostic", to_json(run.diagnostic)}};
    write_file(out / ("bvm_n" + std::to_string(cfg.n) + ".json"), report.dump(2) + "\n");
    std::cout << "J condition number: " << run.quantities.J_condition << "\n";
    for (std::size_t k = 0; k < run.diagnostic.ks.size(); ++k)
        std::cout << "KS theta" << k + 1 << ": " << run.diagnostic.ks[k] << (run.diagnostic.ks_reject[k] ? " (reject)" : "") << "\n";
    std::cout << "KS critical value (1%): " << run.diagnostic.ks_critical << "\n";
    return 0;
}

int cmd_fit(const StudyConfig& cfg) {
    const auto ctx = make_study_context(cfg);
    const auto data = gen_data(cfg, 0, ctx.truth);
    const auto X = design_matrix(ctx.basis, data.x);
    const auto sample = theta_posterior_sample(X, data.Y, ctx.system, ctx.weight, ctx.quad, cfg.prior, cfg.posterior_draws,
                                               CounterRng(cfg.seed).substream(0).substream(1), cfg.psi_options(), cfg.threads);
    const Eigen::MatrixXd ok = sample.successful();
    const auto intervals = credible_intervals(ok, cfg.level);
    const Eigen::VectorXd mean = ok.colwise().mean();
    json params = json::array();
    for (Eigen::Index k = 0; k < ok.cols(); ++k) {
        const double sd = std::sqrt((ok.col(k).array() - mean[k]).square().sum() / static_cast<double>(ok.rows() - 1));
        params.push_back({{"param", "theta" + std::to_string(k + 1)},
                          {"theta0", ctx.truth.theta0[k]},
                          {"posterior_mean", mean[k]},
                          {"posterior_sd", sd},
                          {"interval", {intervals[static_cast<std::size_t>(k)].lo, intervals[static_cast<std::size_t>(k)].hi}}});
    }
    json report = {{"n", cfg.n}, {"k_n", cfg.resolved_k_n()}, {"draws", ok.rows()}, {"psi_failures", sample.failures}, {"params", params}};
    if (cfg.arm_vb) {
        const auto vb = vb_estimate(X, data.Y, ctx.system, ctx.weight, ctx.quad, cfg.psi_options(), cfg.level);
        json vbj = json::array();
        for (Eigen::Index k = 0; k < vb.theta.size(); ++k)
            vbj.push_back({{"estimate", vb.theta[k]}, {"interval", {vb.intervals[static_cast<std::size_t>(k)].lo, vb.intervals[static_cast<std::size_t>(k)].hi}}});
        report["vb"] = {{"sigma2_hat", vb.sigma2_hat}, {"params", vbj}};
    }
    std::cout << report.dump(2) << "\n";
    return 0;
}

// Fast invariant checks on the installed build.
int cmd_selftest() {
    int failed = 0;
    auto check = [&](const std::string& name, bool ok, double value) {
        std::cout << (ok ? "ok   " : "FAIL ") << name << " (" << value << ")\n";
        if (!ok) ++failed;
    };

    const SplineBasis basis(4, 8);
    double pou = 0.0;
    for (int i = 0; i <= 200; ++i) pou = std::max(pou, std::abs(basis.eval(i / 200.0, 0).sum() - 1.0));
    check("partition of unity", pou < 1e-12, pou);

    StudyConfig cfg;
    cfg.n = 200;
    cfg.k_n = 20;
    const auto ctx = make_study_context(cfg);
    const auto X = design_matrix(ctx.basis, midpoint_design(400));
    Eigen::MatrixXd Y(400, 2);
    for (int i = 0; i < 400; ++i) Y.row(i) = ctx.truth.f0.value(X.points[static_cast<std::size_t>(i)]).transpose();
    const FitSpline fit(ctx.basis, least_squares_fit(X, Y));
    const auto theta = psi(fit, ctx.system, ctx.weight, ctx.quad).theta;
    const double rel = (theta - ctx.truth.theta_ode).norm() / ctx.truth.theta_ode.norm();
    check("psi recovers theta from a noiseless fit", rel < 1e-2, rel);

    const auto curve = sample_curve(fit, ctx.weight, ctx.quad);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(4, 7.0);
    const auto g = criterion_gradient(curve, ctx.system, eta);
    double worst = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(eta[k]));
        Eigen::VectorXd up = eta, dn = eta;
        up[k] += h;
        dn[k] -= h;
        const double fd = (std::pow(criterion(curve, ctx.system, up), 2) - std::pow(criterion(curve, ctx.system, dn), 2)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[k]) / std::max(1.0, std::abs(g[k])));
    }
    check("criterion gradient against finite differences", worst < 1e-5, worst);

    const auto data = gen_data(cfg, 0, ctx.truth);
    const auto Xd = design_matrix(ctx.basis, data.x);
    const auto mn = matrix_normal_posterior(Xd, data.Y, Eigen::MatrixXd::Identity(2, 2), 0.04, ctx.basis.num_intervals());
    const auto bp = beta_posterior(Xd, data.Y.col(0), 0.04, ctx.basis.num_intervals(), PriorMode::fixed_sigma);
    const double dev = (mn.mean.col(0) - bp.mean).cwiseAbs().maxCoeff();
    check("matrix-normal posterior with identity Omega", dev < 1e-10, dev);

    return failed == 0 ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian two-step estimation for ODE models"};
    app.require_subcommand(1);
    Flags flags;
    auto* study = app.add_subcommand("study", "run a coverage study");
    auto* bvm = app.add_subcommand("bvm", "BvM quantities and diagnostic for one dataset");
    auto* fit = app.add_subcommand("fit", "posterior summary for one dataset");
    auto* selftest = app.add_subcommand("selftest", "run fast invariant checks");
    for (auto* cmd : {study, bvm, fit}) add_study_flags(cmd, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (selftest->parsed()) return cmd_selftest();
        CLI::App* cmd = study->parsed() ? study : bvm->parsed() ? bvm : fit;
        const StudyConfig cfg = resolve_config(cmd, flags);
        if (cmd == study) return cmd_study(cfg, flags.out);
        if (cmd == bvm) return cmd_bvm(cfg, flags.out);
        return cmd_fit(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
}
