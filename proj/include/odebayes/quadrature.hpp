#pragma once

#include <functional>
#include <span>
#include <vector>

namespace odebayes {

/// Nodes and positive weights for integrals over [0,1].
class Quadrature {
public:
    /// Q-point Gauss-Legendre rule mapped to [0,1].
    static Quadrature gauss_legendre(int nodes);
    /// Gauss-Legendre with `nodes_per_piece` points on each [breaks[l], breaks[l+1]].
    static Quadrature composite(std::span<const double> breaks, int nodes_per_piece);

    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }
    std::size_t size() const { return nodes_.size(); }

    double integrate(const std::function<double(double)>& f) const;

private:
    Quadrature(std::vector<double> nodes, std::vector<double> weights)
        : nodes_(std::move(nodes)), weights_(std::move(weights)) {}

    std::vector<double> nodes_;
    std::vector<double> weights_;
};

/// Continuous weight w on [0,1] with w(0) = w(1) = 0 and w > 0 inside.
class WeightFn {
public:
    using Fn = std::function<double(double)>;

    /// Validates the endpoint zeros and positivity on a 999-point interior grid.
    explicit WeightFn(Fn w, Fn derivative = {});

    /// w(t) = t (1 - t).
    static WeightFn parabolic();
    /// c * w, with c > 0.
    WeightFn scaled(double c) const;

    double operator()(double t) const { return w_(t); }
    /// w'(t); central differences when no analytic derivative was given.
    double derivative(double t) const;
    bool has_analytic_derivative() const { return static_cast<bool>(dw_); }

private:
    Fn w_;
    Fn dw_;
};

}  // namespace odebayes
