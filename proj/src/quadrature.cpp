#include "odebayes/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace odebayes {

namespace {

// Nodes and weights on [-1,1] by Newton iteration on the Legendre recurrence.
void legendre_rule(int q, std::vector<double>& x, std::vector<double>& w) {
    x.assign(static_cast<std::size_t>(q), 0.0);
    w.assign(static_cast<std::size_t>(q), 0.0);
    for (int i = 0; i < (q + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (q + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= q; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = q * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // Recompute the derivative at the converged node.
        double p0 = 1.0, p1 = 0.0;
        for (int k = 1; k <= q; ++k) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
        }
        dp = q * (z * p0 - p1) / (z * z - 1.0);
        const double weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[static_cast<std::size_t>(i)] = -z;
        x[static_cast<std::size_t>(q - 1 - i)] = z;
        w[static_cast<std::size_t>(i)] = weight;
        w[static_cast<std::size_t>(q - 1 - i)] = weight;
    }
}

}  // namespace

Quadrature Quadrature::gauss_legendre(int nodes) {
    const double breaks[] = {0.0, 1.0};
    return composite(breaks, nodes);
}

Quadrature Quadrature::composite(std::span<const double> breaks, int nodes_per_piece) {
    if (nodes_per_piece < 1) throw std::invalid_argument("quadrature needs at least one node");
    if (breaks.size() < 2 || breaks.front() != 0.0 || breaks.back() != 1.0)
        throw std::invalid_argument("quadrature breakpoints must start at 0 and end at 1");
    std::vector<double> x, w;
    legendre_rule(nodes_per_piece, x, w);
    std::vector<double> nodes, weights;
    nodes.reserve(x.size() * (breaks.size() - 1));
    weights.reserve(nodes.capacity());
    for (std::size_t l = 0; l + 1 < breaks.size(); ++l) {
        const double a = breaks[l], b = breaks[l + 1];
        if (!(b > a)) throw std::invalid_argument("quadrature breakpoints must be increasing");
        const double half = 0.5 * (b - a);
        for (std::size_t k = 0; k < x.size(); ++k) {
            nodes.push_back(a + half * (x[k] + 1.0));
            weights.push_back(half * w[k]);
        }
    }
    return {std::move(nodes), std::move(weights)};
}

double Quadrature::integrate(const std::function<double(double)>& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) sum += weights_[i] * f(nodes_[i]);
    return sum;
}

WeightFn::WeightFn(Fn w, Fn derivative) : w_(std::move(w)), dw_(std::move(derivative)) {
    if (!w_) throw std::invalid_argument("weight function is empty");
    if (std::abs(w_(0.0)) > 1e-12 || std::abs(w_(1.0)) > 1e-12) throw std::invalid_argument("weight function must vanish at 0 and 1");
    for (int i = 1; i < 1000; ++i) {
        const double t = i / 1000.0;
        const double v = w_(t);
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("weight function must be positive and finite on (0,1)");
    }
}

WeightFn WeightFn::parabolic() {
    return WeightFn([](double t) { return t * (1.0 - t); }, [](double t) { return 1.0 - 2.0 * t; });
}

WeightFn WeightFn::scaled(double c) const {
    if (!(c > 0.0)) throw std::invalid_argument("weight scale must be positive");
    Fn dw;
    if (dw_) dw = [d = dw_, c](double t) { return c * d(t); };
    return WeightFn([w = w_, c](double t) { return c * w(t); }, std::move(dw));
}

double WeightFn::derivative(double t) const {
    if (dw_) return dw_(t);
    constexpr double h = 1e-6;
    if (t - h < 0.0) return (-3.0 * w_(t) + 4.0 * w_(t + h) - w_(t + 2 * h)) / (2 * h);
    if (t + h > 1.0) return (3.0 * w_(t) - 4.0 * w_(t - h) + w_(t - 2 * h)) / (2 * h);
    return (w_(t + h) - w_(t - h)) / (2 * h);
}

}  // namespace odebayes
