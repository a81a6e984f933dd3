#include "odebayes/simharness.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace odebayes;
using Vec = Eigen::VectorXd;

namespace {

StudyConfig small_config(int n = 50, int reps = 4) {
    StudyConfig cfg;
    cfg.n = n;
    cfg.reps = reps;
    cfg.posterior_draws = 60;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("default number of spline intervals") {
    CHECK(default_k_n(50) == 10);
    CHECK(default_k_n(100) == 11);
    CHECK(default_k_n(500) == 12);
    CHECK(default_k_n(10) == 2);
    CHECK(default_k_n(2, 4) == 1);
    StudyConfig cfg;
    cfg.k_n = 7;
    CHECK(cfg.resolved_k_n() == 7);
    CHECK(cfg.basis_dim() == 10);
}

TEST_CASE("data generation") {
    auto cfg = small_config(100, 1);
    const auto truth = make_study_truth(cfg, lotka_volterra());
    const auto data = gen_data(cfg, 0, truth);
    REQUIRE(data.x.size() == 100);
    CHECK(data.x[0] == doctest::Approx(0.5 / 100));
    CHECK(data.x[99] == doctest::Approx(1.0 - 0.5 / 100));
    CHECK(data.Y.rows() == 100);
    CHECK(data.Y.cols() == 2);
    // same seed, same data
    CHECK((gen_data(cfg, 0, truth).Y - data.Y).norm() == 0.0);
    CHECK((gen_data(cfg, 1, truth).Y - data.Y).norm() > 0.0);

    // Case 2 adds a perturbation that vanishes at t = 1/2.
    auto cfg2 = cfg;
    cfg2.study_case = 2;
    const auto truth2 = make_study_truth(cfg2, lotka_volterra());
    CHECK((truth2.f0.value(0.5) - truth.f0.value(0.5)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((truth2.f0.value(0.125) - truth.f0.value(0.125)).cwiseAbs().minCoeff() == doctest::Approx(0.4));
    CHECK(truth.well_specified);
    CHECK_FALSE(truth2.well_specified);
    CHECK((truth.theta0 - truth.theta_ode).norm() < 0.1);
}

TEST_CASE("scaled t6 errors have standard deviation sigma0") {
    CounterRng rng(99);
    const int count = 1000000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < count; ++i) {
        const double e = draw_error(ErrorLaw::scaled_t6, 0.2, rng);
        s += e;
        s2 += e * e;
    }
    const double mean = s / count;
    const double sd = std::sqrt(s2 / count - mean * mean);
    CHECK(std::abs(sd - 0.2) < 0.001);
    CHECK(std::abs(mean) < 0.001);
}

TEST_CASE("noiseless replication covers theta0 with short intervals") {
    auto cfg = small_config(500, 1);
    cfg.sigma0 = 1e-6;
    cfg.posterior_draws = 80;
    const auto ctx = make_study_context(cfg);
    const auto r = run_replication(ctx, 0);
    REQUIRE(r.bayes);
    REQUIRE(r.vb);
    CHECK(r.bayes->ok);
    // What remains is spline approximation error; the IG(99, 1) prior keeps the
    // Bayes spread away from zero.
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(r.bayes->covered[k]);
        CHECK(r.vb->intervals[k].length() < 0.05);
        CHECK(std::abs(0.5 * (r.vb->intervals[k].lo + r.vb->intervals[k].hi) - ctx.truth.theta0[static_cast<Eigen::Index>(k)]) < 0.05);
    }
}

TEST_CASE("study results do not depend on the thread count") {
    auto cfg = small_config(50, 3);
    cfg.threads = 1;
    const auto a = run_study(cfg);
    cfg.threads = 3;
    const auto b = run_study(cfg);
    CHECK(to_csv(a) == to_csv(b));
}

TEST_CASE("aggregation, CSV and JSON") {
    auto cfg = small_config(50, 1);
    const auto one = run_study(cfg);
    for (const auto& s : one.summary) {
        CHECK(s.cov_se == 0.0);
        CHECK(s.len_se == 0.0);
    }

    cfg.reps = 5;
    const auto res = run_study(cfg);
    const auto csv = to_csv(res);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "n,param,arm,coverage,cov_se,length,len_se,failures");
    CHECK(res.summary.size() == 8);

    // Recompute the Bayes row for the first parameter from the replication log.
    int used = 0, covered = 0;
    double len = 0.0;
    for (const auto& r : res.replications)
        if (r.bayes && r.bayes->ok) {
            ++used;
            covered += r.bayes->covered[0] ? 1 : 0;
            len += r.bayes->intervals[0].length();
        }
    const auto& row = res.summary[0];
    CHECK(row.arm == "bayes");
    CHECK(row.param == 1);
    CHECK(row.used == used);
    CHECK(row.coverage == doctest::Approx(100.0 * covered / used));
    CHECK(row.length == doctest::Approx(len / used));

    const auto j = to_json(res);
    const auto back = study_result_from_json(j);
    CHECK(to_csv(back) == csv);
    CHECK(to_json(back) == j);
}

TEST_CASE("higher credibility level gives at least the same coverage") {
    auto cfg = small_config(50, 6);
    const auto lo = run_study(cfg);
    cfg.level = 0.99;
    const auto hi = run_study(cfg);
    for (std::size_t i = 0; i < lo.summary.size(); ++i) {
        CHECK(hi.summary[i].coverage >= lo.summary[i].coverage);
        CHECK(hi.summary[i].length > lo.summary[i].length);
    }
}

TEST_CASE("VB intervals are shorter than Bayes intervals at n = 50") {
    auto cfg = small_config(50, 10);
    cfg.posterior_draws = 200;
    cfg.arm_vb = true;
    const auto res = run_study(cfg);
    for (int k = 1; k <= 4; ++k) {
        double bayes = 0, vb = 0;
        for (const auto& s : res.summary) {
            if (s.param != k) continue;
            (s.arm == "bayes" ? bayes : vb) = s.length;
        }
        CHECK(vb < bayes);
    }
}

TEST_CASE("configuration parsing") {
    const StudyConfig base;
    const auto cfg = study_config_from_json(nlohmann::json::parse(R"({"n": 60, "k_n": "auto", "error_law": "t6", "case": 2})"), base);
    CHECK(cfg.n == 60);
    CHECK(cfg.k_n == 0);
    CHECK(cfg.error_law == ErrorLaw::scaled_t6);
    CHECK(cfg.study_case == 2);
    CHECK(study_config_from_json(to_json(cfg), base).n == 60);

    CHECK_THROWS_AS(study_config_from_json(nlohmann::json::parse(R"({"bogus": 1})"), base), ConfigError);
    CHECK_THROWS_AS(study_config_from_json(nlohmann::json::parse(R"({"n": "many"})"), base), ConfigError);
    CHECK_THROWS_AS(error_law_from_string("cauchy"), ConfigError);

    StudyConfig bad;
    bad.n = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = StudyConfig{};
    bad.level = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = StudyConfig{};
    bad.study_case = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
