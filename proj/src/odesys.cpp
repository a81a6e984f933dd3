#include "odebayes/odesys.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace odebayes {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

bool ParameterBox::contains(const Vec& theta) const {
    if (theta.size() != lower.size()) return false;
    return (theta.array() >= lower.array()).all() && (theta.array() <= upper.array()).all();
}

bool ParameterBox::interior(const Vec& theta) const {
    if (theta.size() != lower.size()) return false;
    return (theta.array() > lower.array()).all() && (theta.array() < upper.array()).all();
}

Vec ParameterBox::clamp(const Vec& theta) const { return theta.cwiseMax(lower).cwiseMin(upper); }

double fd_step(double x) { return std::max(1e-6, 1e-6 * std::abs(x)); }

Mat fd_jac_theta(const OdeSystem::RhsFn& rhs, const ParameterBox& box, double t, const Vec& f, const Vec& theta) {
    const Vec f0 = rhs(t, f, theta);
    Mat jac(f0.size(), theta.size());
    Vec hi = theta, lo = theta;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        const double h = fd_step(theta[k]);
        if (theta[k] + h > box.upper[k]) {
            hi[k] = theta[k] - h;
            lo[k] = theta[k] - 2 * h;
            jac.col(k) = (3.0 * f0 - 4.0 * rhs(t, f, hi) + rhs(t, f, lo)) / (2 * h);
        } else if (theta[k] - h < box.lower[k]) {
            hi[k] = theta[k] + h;
            lo[k] = theta[k] + 2 * h;
            jac.col(k) = (-3.0 * f0 + 4.0 * rhs(t, f, hi) - rhs(t, f, lo)) / (2 * h);
        } else {
            hi[k] = theta[k] + h;
            lo[k] = theta[k] - h;
            jac.col(k) = (rhs(t, f, hi) - rhs(t, f, lo)) / (2 * h);
        }
        hi[k] = lo[k] = theta[k];
    }
    return jac;
}

Mat fd_jac_state(const OdeSystem::RhsFn& rhs, double t, const Vec& f, const Vec& theta) {
    Mat jac(f.size(), f.size());
    Vec hi = f, lo = f;
    for (Eigen::Index j = 0; j < f.size(); ++j) {
        const double h = fd_step(f[j]);
        hi[j] = f[j] + h;
        lo[j] = f[j] - h;
        jac.col(j) = (rhs(t, hi, theta) - rhs(t, lo, theta)) / (2 * h);
        hi[j] = lo[j] = f[j];
    }
    return jac;
}

std::vector<Mat> fd_jac_theta_theta(const OdeSystem::RhsFn& rhs, const ParameterBox& box, double t, const Vec& f,
                                    const Vec& theta) {
    // Differences of the FD theta-Jacobian; a larger outer step keeps the
    // nested stencil out of the rounding floor.
    const Eigen::Index p = theta.size();
    const Eigen::Index d = f.size();
    std::vector<Mat> out(static_cast<std::size_t>(d), Mat::Zero(p, p));
    Vec hi = theta, lo = theta;
    for (Eigen::Index k = 0; k < p; ++k) {
        const double h = 1e-3 * std::max(1.0, std::abs(theta[k]));
        double step = 2 * h;
        if (theta[k] + h > box.upper[k]) {
            hi[k] = theta[k];
            lo[k] = theta[k] - h;
            step = h;
        } else if (theta[k] - h < box.lower[k]) {
            hi[k] = theta[k] + h;
            lo[k] = theta[k];
            step = h;
        } else {
            hi[k] = theta[k] + h;
            lo[k] = theta[k] - h;
        }
        const Mat diff = (fd_jac_theta(rhs, box, t, f, hi) - fd_jac_theta(rhs, box, t, f, lo)) / step;
        for (Eigen::Index i = 0; i < d; ++i) out[static_cast<std::size_t>(i)].row(k) = diff.row(i);
        hi[k] = lo[k] = theta[k];
    }
    for (auto& h : out) h = 0.5 * (h + h.transpose()).eval();
    return out;
}

OdeSystem::OdeSystem(Definition def) : def_(std::move(def)) {
    if (def_.state_dim < 1 || def_.param_dim < 1) throw std::invalid_argument("ODE system dimensions must be positive");
    if (!def_.rhs) throw std::invalid_argument("ODE system needs a right-hand side");
    if (def_.box.lower.size() != def_.param_dim || def_.box.upper.size() != def_.param_dim)
        throw std::invalid_argument("parameter box dimension mismatch");
    if ((def_.box.lower.array() >= def_.box.upper.array()).any())
        throw std::invalid_argument("parameter box must have positive width in every coordinate");

    analytic_[0] = static_cast<bool>(def_.jac_theta);
    analytic_[1] = static_cast<bool>(def_.jac_state);
    analytic_[2] = static_cast<bool>(def_.jac_theta_theta);
    const auto rhs = def_.rhs;
    const auto box = def_.box;
    if (!def_.jac_theta)
        def_.jac_theta = [rhs, box](double t, const Vec& f, const Vec& th) { return fd_jac_theta(rhs, box, t, f, th); };
    if (!def_.jac_state)
        def_.jac_state = [rhs](double t, const Vec& f, const Vec& th) { return fd_jac_state(rhs, t, f, th); };
    if (!def_.jac_theta_theta)
        def_.jac_theta_theta = [rhs, box](double t, const Vec& f, const Vec& th) {
            return fd_jac_theta_theta(rhs, box, t, f, th);
        };
}

void OdeSystem::check_theta(const Vec& theta) const {
    if (theta.size() != def_.param_dim) throw std::invalid_argument("parameter vector has wrong dimension");
    if (!def_.box.contains(theta)) {
        std::ostringstream msg;
        msg << def_.name << ": parameter (" << theta.transpose() << ") outside the parameter box";
        throw std::domain_error(msg.str());
    }
}

Vec OdeSystem::rhs(double t, const Vec& f, const Vec& theta) const {
    check_theta(theta);
    return def_.rhs(t, f, theta);
}

Mat OdeSystem::jac_theta(double t, const Vec& f, const Vec& theta) const {
    check_theta(theta);
    return def_.jac_theta(t, f, theta);
}

Mat OdeSystem::jac_state(double t, const Vec& f, const Vec& theta) const {
    check_theta(theta);
    return def_.jac_state(t, f, theta);
}

std::vector<Mat> OdeSystem::jac_theta_theta(double t, const Vec& f, const Vec& theta) const {
    check_theta(theta);
    return def_.jac_theta_theta(t, f, theta);
}

OdeSystem OdeSystem::with_box(ParameterBox box) const {
    Definition def = def_;
    def.box = std::move(box);
    if (!analytic_[0]) def.jac_theta = nullptr;
    if (!analytic_[1]) def.jac_state = nullptr;
    if (!analytic_[2]) def.jac_theta_theta = nullptr;
    return OdeSystem(std::move(def));
}

OdeSystem OdeSystem::with_fd_jacobians() const {
    return fd_jacobians(def_.name + "_fd", def_.state_dim, def_.param_dim, def_.box, def_.rhs);
}

OdeSystem fd_jacobians(std::string name, int state_dim, int param_dim, ParameterBox box, OdeSystem::RhsFn rhs) {
    OdeSystem::Definition def;
    def.name = std::move(name);
    def.state_dim = state_dim;
    def.param_dim = param_dim;
    def.box = std::move(box);
    def.rhs = std::move(rhs);
    return OdeSystem(std::move(def));
}

OdeSystem lotka_volterra() {
    OdeSystem::Definition def;
    def.name = "lotka_volterra";
    def.state_dim = 2;
    def.param_dim = 4;
    def.box = {Vec::Zero(4), Vec::Constant(4, 20.0)};
    def.rhs = [](double, const Vec& f, const Vec& th) {
        Vec out(2);
        out << th[0] * f[0] - th[1] * f[0] * f[1], -th[2] * f[1] + th[3] * f[0] * f[1];
        return out;
    };
    def.jac_theta = [](double, const Vec& f, const Vec&) {
        Mat j(2, 4);
        j << f[0], -f[0] * f[1], 0.0, 0.0,
             0.0, 0.0, -f[1], f[0] * f[1];
        return j;
    };
    def.jac_state = [](double, const Vec& f, const Vec& th) {
        Mat j(2, 2);
        j << th[0] - th[1] * f[1], -th[1] * f[0],
             th[3] * f[1], -th[2] + th[3] * f[0];
        return j;
    };
    // F is linear in theta.
    def.jac_theta_theta = [](double, const Vec&, const Vec&) { return std::vector<Mat>(2, Mat::Zero(4, 4)); };
    return OdeSystem(std::move(def));
}

OdeSystem feedback_pkpd() {
    OdeSystem::Definition def;
    def.name = "feedback_pkpd";
    def.state_dim = 2;
    def.param_dim = 3;
    def.box = {Vec::Zero(3), Vec::Constant(3, 20.0)};
    def.rhs = [](double, const Vec& f, const Vec& th) {
        Vec out(2);
        out << th[0] - th[1] * f[0] * (1.0 + f[1]), th[2] * (f[0] - f[1]);
        return out;
    };
    def.jac_theta = [](double, const Vec& f, const Vec&) {
        Mat j(2, 3);
        j << 1.0, -f[0] * (1.0 + f[1]), 0.0,
             0.0, 0.0, f[0] - f[1];
        return j;
    };
    def.jac_state = [](double, const Vec& f, const Vec& th) {
        Mat j(2, 2);
        j << -th[1] * (1.0 + f[1]), -th[1] * f[0],
             th[2], -th[2];
        return j;
    };
    def.jac_theta_theta = [](double, const Vec&, const Vec&) { return std::vector<Mat>(2, Mat::Zero(3, 3)); };
    return OdeSystem(std::move(def));
}

OdeSystem system_by_name(const std::string& name) {
    if (name == "lotka_volterra") return lotka_volterra();
    if (name == "feedback_pkpd") return feedback_pkpd();
    throw std::invalid_argument("unknown ODE system '" + name + "'");
}

Trajectory::Trajectory(std::vector<double> grid, std::vector<Vec> states, std::vector<Vec> slopes)
    : grid_(std::move(grid)), states_(std::move(states)), slopes_(std::move(slopes)) {
    if (grid_.size() < 2 || grid_.size() != states_.size() || grid_.size() != slopes_.size())
        throw std::invalid_argument("trajectory needs matching grid, states and slopes");
    for (std::size_t i = 1; i < grid_.size(); ++i)
        if (!(grid_[i] > grid_[i - 1])) throw std::invalid_argument("trajectory grid must be strictly increasing");
}

std::size_t Trajectory::interval(double t) const {
    if (t < grid_.front() || t > grid_.back()) throw std::domain_error("trajectory query outside the solved interval");
    auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
    std::size_t i = static_cast<std::size_t>(it - grid_.begin());
    return std::min(i == 0 ? 0 : i - 1, grid_.size() - 2);
}

Vec Trajectory::state(double t) const {
    const std::size_t i = interval(t);
    const double h = grid_[i + 1] - grid_[i];
    const double s = (t - grid_[i]) / h;
    if (s == 0.0) return states_[i];
    if (s == 1.0) return states_[i + 1];
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * states_[i] + h10 * h * slopes_[i] + h01 * states_[i + 1] + h11 * h * slopes_[i + 1];
}

Vec Trajectory::derivative(double t) const {
    const std::size_t i = interval(t);
    const double h = grid_[i + 1] - grid_[i];
    const double s = (t - grid_[i]) / h;
    const double s2 = s * s;
    const double d00 = (6 * s2 - 6 * s) / h, d10 = 3 * s2 - 4 * s + 1, d01 = (-6 * s2 + 6 * s) / h, d11 = 3 * s2 - 2 * s;
    return d00 * states_[i] + d10 * slopes_[i] + d01 * states_[i + 1] + d11 * slopes_[i + 1];
}

Trajectory rk4_solve(const OdeSystem& system, const Vec& theta, const Vec& initial, int steps) {
    if (steps < 10) throw std::invalid_argument("rk4_solve needs at least 10 steps");
    if (initial.size() != system.state_dim()) throw std::invalid_argument("initial state has wrong dimension");
    // Validates theta against the box once; the loop below runs unchecked.
    Vec y = initial;
    Vec k1 = system.rhs(0.0, y, theta);

    const double h = 1.0 / steps;
    std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
    std::vector<Vec> states(grid.size()), slopes(grid.size());
    grid[0] = 0.0;
    states[0] = y;
    slopes[0] = k1;
    for (int s = 0; s < steps; ++s) {
        const double t = s * h;
        const Vec k2 = system.rhs_unchecked(t + 0.5 * h, y + 0.5 * h * k1, theta);
        const Vec k3 = system.rhs_unchecked(t + 0.5 * h, y + 0.5 * h * k2, theta);
        const Vec k4 = system.rhs_unchecked(t + h, y + h * k3, theta);
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        const double t_next = (s + 1 == steps) ? 1.0 : (s + 1) * h;
        if (!y.allFinite()) {
            std::ostringstream msg;
            msg << "RK4 integration of " << system.name() << " produced a non-finite state at t = " << t_next;
            throw IntegrationError(msg.str(), t_next);
        }
        k1 = system.rhs_unchecked(t_next, y, theta);
        const auto idx = static_cast<std::size_t>(s + 1);
        grid[idx] = t_next;
        states[idx] = y;
        slopes[idx] = k1;
    }
    return {std::move(grid), std::move(states), std::move(slopes)};
}

}  // namespace odebayes
