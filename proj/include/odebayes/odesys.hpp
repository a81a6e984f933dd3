#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace odebayes {

/// Compact axis-aligned parameter domain.
struct ParameterBox {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    Eigen::Index size() const { return lower.size(); }
    bool contains(const Eigen::VectorXd& theta) const;
    bool interior(const Eigen::VectorXd& theta) const;
    Eigen::VectorXd center() const { return 0.5 * (lower + upper); }
    Eigen::VectorXd clamp(const Eigen::VectorXd& theta) const;
};

class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

/// f' = F(t, f, theta) with f in R^d and theta in R^p, plus the Jacobians
/// D_theta F (d x p), D_f F (d x d) and optionally the theta-Hessians of each
/// component (d matrices p x p).
class OdeSystem {
public:
    using Vec = Eigen::VectorXd;
    using Mat = Eigen::MatrixXd;
    using RhsFn = std::function<Vec(double, const Vec&, const Vec&)>;
    using JacFn = std::function<Mat(double, const Vec&, const Vec&)>;
    using HessFn = std::function<std::vector<Mat>(double, const Vec&, const Vec&)>;

    struct Definition {
        std::string name;
        int state_dim = 0;
        int param_dim = 0;
        ParameterBox box;
        RhsFn rhs;
        JacFn jac_theta;
        JacFn jac_state;
        HessFn jac_theta_theta;
    };

    /// Missing Jacobians are filled with finite differences.
    explicit OdeSystem(Definition def);

    const std::string& name() const { return def_.name; }
    int state_dim() const { return def_.state_dim; }
    int param_dim() const { return def_.param_dim; }
    const ParameterBox& box() const { return def_.box; }

    bool analytic_jac_theta() const { return analytic_[0]; }
    bool analytic_jac_state() const { return analytic_[1]; }
    bool analytic_jac_theta_theta() const { return analytic_[2]; }

    /// Each evaluator rejects theta outside the box.
    Vec rhs(double t, const Vec& f, const Vec& theta) const;
    Mat jac_theta(double t, const Vec& f, const Vec& theta) const;
    Mat jac_state(double t, const Vec& f, const Vec& theta) const;
    std::vector<Mat> jac_theta_theta(double t, const Vec& f, const Vec& theta) const;

    /// Unchecked right-hand side for the integrator and optimizer inner loops.
    Vec rhs_unchecked(double t, const Vec& f, const Vec& theta) const { return def_.rhs(t, f, theta); }
    Mat jac_theta_unchecked(double t, const Vec& f, const Vec& theta) const { return def_.jac_theta(t, f, theta); }

    OdeSystem with_box(ParameterBox box) const;
    /// Same right-hand side with every Jacobian replaced by finite differences.
    OdeSystem with_fd_jacobians() const;

private:
    void check_theta(const Vec& theta) const;

    Definition def_;
    bool analytic_[3] = {false, false, false};
};

/// Central-difference step used throughout: max(1e-6, 1e-6 |x|).
double fd_step(double x);

/// Finite-difference Jacobians of an arbitrary right-hand side. Theta
/// derivatives switch to one-sided stencils when a central step would leave
/// the box.
Eigen::MatrixXd fd_jac_theta(const OdeSystem::RhsFn& rhs, const ParameterBox& box, double t,
                             const Eigen::VectorXd& f, const Eigen::VectorXd& theta);
Eigen::MatrixXd fd_jac_state(const OdeSystem::RhsFn& rhs, double t, const Eigen::VectorXd& f,
                             const Eigen::VectorXd& theta);
std::vector<Eigen::MatrixXd> fd_jac_theta_theta(const OdeSystem::RhsFn& rhs, const ParameterBox& box, double t,
                                                const Eigen::VectorXd& f, const Eigen::VectorXd& theta);

/// Builds a system from its right-hand side only; all Jacobians are FD.
OdeSystem fd_jacobians(std::string name, int state_dim, int param_dim, ParameterBox box, OdeSystem::RhsFn rhs);

/// Prey-predator system F_1 = th1 f1 - th2 f1 f2, F_2 = -th3 f2 + th4 f1 f2 on [0,20]^4.
OdeSystem lotka_volterra();
/// Feedback PK/PD model dR/dt = k_in - k_out R (1 + M), dM/dt = k_tol (R - M), on [0,20]^3.
OdeSystem feedback_pkpd();

/// Lookup by registry key ("lotka_volterra", "feedback_pkpd").
OdeSystem system_by_name(const std::string& name);

/// RK4 states on a uniform grid with cubic Hermite dense output.
class Trajectory {
public:
    Trajectory(std::vector<double> grid, std::vector<Eigen::VectorXd> states, std::vector<Eigen::VectorXd> slopes);

    const std::vector<double>& grid() const { return grid_; }
    const std::vector<Eigen::VectorXd>& states() const { return states_; }
    const std::vector<Eigen::VectorXd>& slopes() const { return slopes_; }

    Eigen::VectorXd state(double t) const;
    /// Derivative of the Hermite interpolant.
    Eigen::VectorXd derivative(double t) const;

private:
    std::size_t interval(double t) const;

    std::vector<double> grid_;
    std::vector<Eigen::VectorXd> states_;
    std::vector<Eigen::VectorXd> slopes_;
};

/// Classical fourth-order Runge-Kutta over [0,1] with `steps` uniform steps.
Trajectory rk4_solve(const OdeSystem& system, const Eigen::VectorXd& theta, const Eigen::VectorXd& initial, int steps = 1000);

}  // namespace odebayes
