#pragma once

#include "odebayes/bvm.hpp"
#include "odebayes/odesys.hpp"
#include "odebayes/rng.hpp"
#include "odebayes/twostep.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace odebayes {

enum class ErrorLaw { gaussian, scaled_t6 };

std::string to_string(ErrorLaw law);
/// Accepts "gauss", "gaussian", "t6" and "scaled_t6".
ErrorLaw error_law_from_string(const std::string& name);

/// Invalid study configuration (bad field values, unknown keys, wrong types).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// k_n = ceil(6 n^{1/9}), lowered when needed so that n >= 2 (k_n + order - 1),
/// and never below 1. Gives 10, 11, 12 at n = 50, 100, 500.
int default_k_n(int n, int order = 4);

struct StudyConfig {
    int study_case = 1;  // 1: mean solves the ODE; 2: mean perturbed by 0.4 sin(4 pi t)
    int n = 100;
    int reps = 200;
    ErrorLaw error_law = ErrorLaw::gaussian;
    double sigma0 = 0.2;
    int order = 4;
    int k_n = 0;  // 0 selects default_k_n(n)
    int posterior_draws = 500;
    double level = 0.95;
    std::uint64_t seed = 1;
    std::string system = "lotka_volterra";
    PriorConfig prior;
    bool arm_bayes = true;
    bool arm_vb = true;
    int threads = 1;
    int quadrature_nodes = 64;
    int multistarts = 8;
    int rk4_steps = 1000;

    int resolved_k_n() const { return k_n > 0 ? k_n : default_k_n(n, order); }
    int basis_dim() const { return resolved_k_n() + order - 1; }
    PsiOptions psi_options() const;
    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

nlohmann::json to_json(const StudyConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
StudyConfig study_config_from_json(const nlohmann::json& j, StudyConfig base = {});

/// Simulation truth: the ODE solution at theta_ode from the initial state,
/// optionally perturbed, and the induced parameter theta0 = psi(f0).
struct StudyTruth {
    Eigen::VectorXd theta_ode;
    Eigen::VectorXd initial;
    MeanCurve f0;
    Eigen::VectorXd theta0;
    bool well_specified = true;
};

/// LV defaults: theta = (10, 10, 10, 10), f(0) = (1, 0.5).
StudyTruth make_study_truth(const StudyConfig& cfg, const OdeSystem& system);

struct Dataset {
    std::vector<double> x;
    Eigen::MatrixXd Y;  // n x d
};

/// Responses at x_i = (2i - 1) / (2n) with errors drawn from the configured law
/// on the replication's own substream.
Dataset gen_data(const StudyConfig& cfg, int rep_index, const StudyTruth& truth);

/// Error draws of sd cfg.sigma0 under the configured law.
double draw_error(ErrorLaw law, double sigma0, CounterRng& rng);

struct ArmOutcome {
    bool ok = false;  // false when the arm could not produce intervals
    std::vector<Interval> intervals;
    std::vector<bool> covered;
    int psi_failures = 0;  // failed posterior draws, or 1 for a failed VB fit
    std::string error;
};

struct ReplicationResult {
    int rep = 0;
    std::optional<ArmOutcome> bayes;
    std::optional<ArmOutcome> vb;
    double posterior_sigma2_mean = 0.0;  // E(sigma^2 | Y), hierarchical mode only
    double seconds = 0.0;
};

/// Shared, data-independent state for one study.
struct StudyContext {
    StudyConfig cfg;
    OdeSystem system;
    StudyTruth truth;
    SplineBasis basis;
    WeightFn weight;
    Quadrature quad;
};

StudyContext make_study_context(const StudyConfig& cfg);

ReplicationResult run_replication(const StudyContext& ctx, int rep_index);

struct ArmSummary {
    std::string arm;
    int param = 0;  // 1-based
    double coverage = 0.0;  // percent
    double cov_se = 0.0;
    double length = 0.0;
    double len_se = 0.0;
    int used = 0;
    int failures = 0;  // used + failures = reps
};

struct StudyResult {
    StudyConfig config;
    int k_n = 0;
    Eigen::VectorXd theta0;
    std::vector<ReplicationResult> replications;
    std::vector<ArmSummary> summary;
    double wall_seconds = 0.0;
};

/// Ordered fold over replications; coverage se = sqrt(p(1-p)/reps) * 100,
/// length se = sample sd of the lengths.
std::vector<ArmSummary> aggregate(const std::vector<ReplicationResult>& reps, int param_dim);

StudyResult run_study(const StudyConfig& cfg);

/// Columns n,param,arm,coverage,cov_se,length,len_se,failures. Contains no
/// timing information, so equal inputs give equal bytes.
std::string to_csv(const StudyResult& result);
nlohmann::json to_json(const StudyResult& result);
StudyResult study_result_from_json(const nlohmann::json& j);

/// One dataset pushed through the posterior sampler and the BvM quantities.
struct BvmRun {
    BvmQuantities quantities;
    MuSigma mu_sigma;
    BvmDiagnostic diagnostic;
    double posterior_sigma2_mean = 0.0;
    int psi_failures = 0;
};

/// The target covariance is sigma0^2 Sigma_n with the simulation sigma0.
BvmRun run_bvm(const StudyContext& ctx, int rep_index);

}  // namespace odebayes
