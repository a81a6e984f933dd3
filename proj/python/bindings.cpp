#include "odebayes/bvm.hpp"
#include "odebayes/conjugate.hpp"
#include "odebayes/simharness.hpp"
#include "odebayes/splines.hpp"
#include "odebayes/twostep.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

namespace py = pybind11;
using namespace odebayes;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

StudyConfig config_from(const std::string& text) { return study_config_from_json(nlohmann::json::parse(text)); }

PriorConfig prior_from(const std::string& mode, double a, double b, double sigma2) {
    PriorConfig prior;
    prior.mode = prior_mode_from_string(mode);
    prior.a = a;
    prior.b = b;
    prior.sigma2 = sigma2;
    return prior;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Two-step Bayesian parameter estimation for ODE models";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<OptimizationFailure>(m, "OptimizationFailure", PyExc_RuntimeError);

    py::class_<SplineBasis>(m, "SplineBasis")
        .def(py::init<int, int>(), py::arg("order"), py::arg("num_intervals"))
        .def_property_readonly("order", &SplineBasis::order)
        .def_property_readonly("num_intervals", &SplineBasis::num_intervals)
        .def_property_readonly("dim", &SplineBasis::dim)
        .def_property_readonly("knots", &SplineBasis::knots)
        .def("eval", &SplineBasis::eval, py::arg("t"), py::arg("deriv") = 0)
        .def("integral", &SplineBasis::integral, py::arg("j"))
        .def("design_matrix",
             [](const SplineBasis& b, const std::vector<double>& points) { return design_matrix(b, points).values; },
             py::arg("points"));

    m.def("midpoint_design", &midpoint_design, py::arg("n"));
    m.def("default_k_n", &default_k_n, py::arg("n"), py::arg("order") = 4);
    m.def(
        "least_squares_fit",
        [](const SplineBasis& b, const std::vector<double>& x, const Mat& Y) { return least_squares_fit(design_matrix(b, x), Y); },
        py::arg("basis"), py::arg("x"), py::arg("Y"));

    m.def(
        "criterion",
        [](const SplineBasis& b, const Mat& coeffs, const Vec& eta, const std::string& system) {
            return criterion(FitSpline(b, coeffs), eta, system_by_name(system), WeightFn::parabolic(), criterion_quadrature(b));
        },
        py::arg("basis"), py::arg("coeffs"), py::arg("eta"), py::arg("system") = "lotka_volterra");

    m.def(
        "psi",
        [](const SplineBasis& b, const Mat& coeffs, const std::string& system, int multistarts) {
            PsiOptions opt;
            opt.multistarts = multistarts;
            const auto r = psi(FitSpline(b, coeffs), system_by_name(system), WeightFn::parabolic(), criterion_quadrature(b), opt);
            py::dict out;
            out["theta"] = r.theta;
            out["value"] = r.value;
            out["gradient_norm"] = r.gradient_norm;
            out["converged_starts"] = r.converged_starts;
            return out;
        },
        py::arg("basis"), py::arg("coeffs"), py::arg("system") = "lotka_volterra", py::arg("multistarts") = 8);

    m.def(
        "posterior_sample",
        [](const SplineBasis& b, const std::vector<double>& x, const Mat& Y, int draws, std::uint64_t seed,
           const std::string& system, const std::string& prior_mode, double a, double bb, double sigma2) {
            const auto s = theta_posterior_sample(design_matrix(b, x), Y, system_by_name(system), WeightFn::parabolic(),
                                                  criterion_quadrature(b), prior_from(prior_mode, a, bb, sigma2), draws,
                                                  CounterRng(seed));
            py::dict out;
            out["draws"] = s.draws;
            out["sigma2"] = s.sigma2;
            out["failures"] = s.failures;
            return out;
        },
        py::arg("basis"), py::arg("x"), py::arg("Y"), py::arg("draws") = 500, py::arg("seed") = 1,
        py::arg("system") = "lotka_volterra", py::arg("prior_mode") = "hierarchical", py::arg("a") = 99.0,
        py::arg("b") = 1.0, py::arg("sigma2") = 0.04);

    m.def(
        "credible_intervals",
        [](const Mat& samples, double level) {
            std::vector<std::pair<double, double>> out;
            for (const auto& iv : credible_intervals(samples, level)) out.emplace_back(iv.lo, iv.hi);
            return out;
        },
        py::arg("samples"), py::arg("level") = 0.95);

    m.def(
        "vb_estimate",
        [](const SplineBasis& b, const std::vector<double>& x, const Mat& Y, const std::string& system, double level) {
            const auto v = vb_estimate(design_matrix(b, x), Y, system_by_name(system), WeightFn::parabolic(),
                                       criterion_quadrature(b), {}, level);
            py::dict out;
            out["theta"] = v.theta;
            out["sigma2_hat"] = v.sigma2_hat;
            std::vector<std::pair<double, double>> iv;
            for (const auto& i : v.intervals) iv.emplace_back(i.lo, i.hi);
            out["intervals"] = iv;
            return out;
        },
        py::arg("basis"), py::arg("x"), py::arg("Y"), py::arg("system") = "lotka_volterra", py::arg("level") = 0.95);

    m.def(
        "_run_study",
        [](const std::string& config) {
            const auto cfg = config_from(config);
            StudyResult res;
            {
                py::gil_scoped_release release;
                res = run_study(cfg);
            }
            return py::make_tuple(to_csv(res), to_json(res).dump());
        },
        py::arg("config"));

    m.def(
        "_bvm",
        [](const std::string& config, int rep) {
            const auto cfg = config_from(config);
            const auto ctx = make_study_context(cfg);
            BvmRun run;
            {
                py::gil_scoped_release release;
                run = run_bvm(ctx, rep);
            }
            nlohmann::json j{{"quantities", to_json(run.quantities)},
                             {"diagnostic", to_json(run.diagnostic)},
                             {"posterior_sigma2_mean", run.posterior_sigma2_mean},
                             {"psi_failures", run.psi_failures}};
            return j.dump();
        },
        py::arg("config"), py::arg("rep") = 0);
}
