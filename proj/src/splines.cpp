#include "odebayes/splines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace odebayes {

namespace {

constexpr int kMaxOrder = 10;

void check_point(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream msg;
        msg << "spline evaluation point " << t << " outside [0,1]";
        throw std::domain_error(msg.str());
    }
}

}  // namespace

SplineBasis::SplineBasis(int order, int num_intervals) : order_(order), num_intervals_(num_intervals) {
    if (order < 2) throw std::invalid_argument("spline order must be at least 2");
    if (order > kMaxOrder) throw std::invalid_argument("spline order above 10 is not supported");
    if (num_intervals < 1) throw std::invalid_argument("number of knot intervals must be at least 1");

    knots_.reserve(static_cast<std::size_t>(dim() + order_));
    knots_.insert(knots_.end(), static_cast<std::size_t>(order_), 0.0);
    for (int l = 1; l < num_intervals_; ++l) knots_.push_back(static_cast<double>(l) / num_intervals_);
    knots_.insert(knots_.end(), static_cast<std::size_t>(order_), 1.0);
}

std::vector<double> SplineBasis::interior_knots() const {
    return {knots_.begin() + order_, knots_.end() - order_};
}

std::vector<double> SplineBasis::breakpoints() const {
    std::vector<double> b(static_cast<std::size_t>(num_intervals_ + 1));
    for (int l = 0; l <= num_intervals_; ++l) b[static_cast<std::size_t>(l)] = static_cast<double>(l) / num_intervals_;
    return b;
}

int SplineBasis::span_of(double t) const {
    check_point(t);
    // Knots are exact multiples of 1/k_n, so compare against them rather than
    // trusting floor(t * k_n) near interior knots.
    int l = std::min(static_cast<int>(t * num_intervals_), num_intervals_ - 1);
    const double* u = knots_.data() + order_ - 1;
    while (l > 0 && t < u[l]) --l;
    while (l < num_intervals_ - 1 && t >= u[l + 1]) ++l;
    return l;
}

int SplineBasis::eval_local(double t, int deriv, Eigen::Ref<Eigen::VectorXd> local) const {
    if (deriv < 0 || deriv >= order_) throw std::domain_error("derivative order must satisfy 0 <= r < m");
    const int p = order_ - 1;
    const int span = span_of(t);
    const int i = span + p;  // knot index with U[i] <= t < U[i+1]
    const auto& U = knots_;

    // Triangular table of basis values and knot differences (de Boor-Cox).
    std::array<std::array<double, kMaxOrder>, kMaxOrder> ndu{};
    std::array<double, kMaxOrder> left{}, right{};
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - U[i + 1 - j];
        right[j] = U[i + j] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu[j][r] = right[r + 1] + left[j - r];
            const double tmp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        ndu[j][j] = saved;
    }

    if (deriv == 0) {
        for (int j = 0; j <= p; ++j) local[j] = ndu[j][p];
        return span;
    }

    // Derivatives from differences of lower-order basis functions.
    std::array<std::array<double, kMaxOrder>, 2> a{};
    for (int r = 0; r <= p; ++r) {
        int s1 = 0, s2 = 1;
        a[0][0] = 1.0;
        double d = 0.0;
        for (int k = 1; k <= deriv; ++k) {
            d = 0.0;
            const int rk = r - k, pk = p - k;
            if (r >= k) {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            const int j1 = rk >= -1 ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                d += a[s2][j] * ndu[rk + j][pk];
            }
            if (r <= pk) {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            std::swap(s1, s2);
        }
        local[r] = d;
    }
    double factor = p;
    for (int k = 1; k < deriv; ++k) factor *= (p - k);
    for (int j = 0; j <= p; ++j) local[j] *= factor;
    return span;
}

Eigen::VectorXd SplineBasis::eval(double t, int deriv) const {
    Eigen::VectorXd local(order_);
    const int first = eval_local(t, deriv, local);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    out.segment(first, order_) = local;
    return out;
}

double SplineBasis::integral(int j) const {
    if (j < 0 || j >= dim()) throw std::out_of_range("basis index out of range");
    return (knots_[static_cast<std::size_t>(j + order_)] - knots_[static_cast<std::size_t>(j)]) / order_;
}

Eigen::MatrixXd derivative_matrix(const SplineBasis& basis, std::span<const double> points, int deriv) {
    const int m = basis.order();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), basis.dim());
    Eigen::VectorXd local(m);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const int first = basis.eval_local(points[i], deriv, local);
        out.row(static_cast<Eigen::Index>(i)).segment(first, m) = local.transpose();
    }
    return out;
}

DesignMatrix design_matrix(const SplineBasis& basis, std::span<const double> points) {
    return {basis, std::vector<double>(points.begin(), points.end()), derivative_matrix(basis, points, 0)};
}

Eigen::LLT<Eigen::MatrixXd> gram_factor(const DesignMatrix& X) {
    const Eigen::MatrixXd gram = X.values.transpose() * X.values;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);

    bool singular = llt.info() != Eigen::Success;
    if (!singular) {
        const Eigen::VectorXd pivots = llt.matrixLLT().diagonal();
        singular = !(pivots.minCoeff() > 0.0) || pivots.minCoeff() * pivots.minCoeff() < 1e-13 * pivots.maxCoeff() * pivots.maxCoeff();
    }
    if (!singular) return llt;

    const auto& basis = X.basis;
    std::ostringstream msg;
    msg << "rank-deficient spline design: ";
    if (X.rows() < basis.dim()) {
        msg << X.rows() << " design points for " << basis.dim() << " basis functions";
        throw RankDeficientError(msg.str());
    }
    std::vector<int> count(static_cast<std::size_t>(basis.num_intervals()), 0);
    for (double x : X.points) ++count[static_cast<std::size_t>(basis.span_of(x))];
    const auto breaks = basis.breakpoints();
    bool named = false;
    for (std::size_t l = 0; l < count.size(); ++l) {
        if (count[l] == 0) {
            msg << (named ? ", " : "") << "knot span [" << breaks[l] << ", " << breaks[l + 1] << (l + 1 == count.size() ? "]" : ")")
                << " contains no design points";
            named = true;
        }
    }
    if (!named) msg << "design points do not separate the basis functions";
    throw RankDeficientError(msg.str());
}

Eigen::MatrixXd least_squares_fit(const DesignMatrix& X, const Eigen::MatrixXd& Y) {
    if (Y.rows() != X.rows()) throw std::invalid_argument("response length does not match design matrix");
    const auto llt = gram_factor(X);
    return llt.solve(X.values.transpose() * Y);
}

Eigen::VectorXd least_squares_fit(const DesignMatrix& X, const Eigen::VectorXd& y) {
    return least_squares_fit(X, Eigen::MatrixXd(y)).col(0);
}

std::vector<double> midpoint_design(int n) {
    if (n < 1) throw std::invalid_argument("design size must be positive");
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) x[static_cast<std::size_t>(i - 1)] = (2.0 * i - 1.0) / (2.0 * n);
    return x;
}

}  // namespace odebayes
