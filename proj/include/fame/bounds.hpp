#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fame/domain.hpp"
#include "fame/network.hpp"

namespace fame {

struct BoundConfig {
    /// How pre-activation bounds of hidden ReLU layers are obtained.
    enum class Intermediate { interval, backward };
    /// Lower line of an unstable ReLU: adaptive picks slope 1 when u > -l.
    enum class LowerSlope { adaptive, zero };

    Intermediate intermediate = Intermediate::interval;
    LowerSlope lower_slope = LowerSlope::adaptive;
    bool clip = true;  // clip eps-boxes to [0,1] when building domains
};

/// Pre-activation bounds of every ReLU stage, indexed by stage position.
struct IntervalBounds {
    std::vector<std::size_t> stage;  // index into Network::stages()
    std::vector<Vector> lower, upper;
};

/// Linear functions of the input enclosing f_i - f_c for every adversary
/// class i (rows ordered as MarginSpec::adversary_classes()):
///   lower_W x + lower_w <= f_i(x) - f_c(x) <= upper_W x + upper_w.
struct LinearBounds {
    Matrix upper_W;
    Vector upper_w;
    Matrix lower_W;
    Vector lower_w;
    MarginSpec spec;
};

namespace detail {

struct Relaxation {
    Vector upper_slope, upper_intercept, lower_slope;
};

inline Relaxation relax_relu(const Vector& l, const Vector& u, BoundConfig::LowerSlope rule) {
    const Eigen::Index n = l.size();
    Relaxation r{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
    for (Eigen::Index j = 0; j < n; ++j) {
        if (u(j) <= 0.0) continue;
        if (l(j) >= 0.0) {
            r.upper_slope(j) = r.lower_slope(j) = 1.0;
            continue;
        }
        const double s = u(j) / (u(j) - l(j));
        r.upper_slope(j) = s;
        r.upper_intercept(j) = -s * l(j);
        // Ties (u == -l) take slope 0.
        r.lower_slope(j) = (rule == BoundConfig::LowerSlope::adaptive && u(j) > -l(j)) ? 1.0 : 0.0;
    }
    return r;
}

/// Linear map of the input bounding C * h_end from above (upper=true) or
/// below, where h_end is the output of stages [0, end). `relax[t]` holds the
/// relaxation for every ReLU stage t < end.
struct LinearFunction {
    Matrix A;
    Vector c;
};

inline LinearFunction backward(const Network& net, std::size_t end, Matrix lambda, const std::vector<Relaxation>& relax, bool upper) {
    Vector bias = Vector::Zero(lambda.rows());
    for (std::size_t t = end; t-- > 0;) {
        const Stage& s = net.stages()[t];
        if (s.kind == Stage::Kind::affine) {
            bias.noalias() += lambda * s.bias;
            lambda = lambda * s.weights;
        } else {
            const Relaxation& r = relax[t];
            const Matrix pos = lambda.cwiseMax(0.0);
            const Matrix neg = lambda.cwiseMin(0.0);
            if (upper) {
                bias.noalias() += pos * r.upper_intercept;
                lambda = pos * r.upper_slope.asDiagonal();
                lambda.noalias() += neg * r.lower_slope.asDiagonal();
            } else {
                bias.noalias() += neg * r.upper_intercept;
                lambda = pos * r.lower_slope.asDiagonal();
                lambda.noalias() += neg * r.upper_slope.asDiagonal();
            }
        }
    }
    return {std::move(lambda), std::move(bias)};
}

/// Sum of the `m` largest values; all of them when m >= size.
inline double top_sum(std::vector<double>& v, std::size_t m) {
    if (m < v.size()) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end(), std::greater<>());
        v.resize(m);
    }
    double s = 0.0;
    for (double d : v) s += d;
    return s;
}

/// Worst-case deviation of row.x' above row.x for feature j (>= 0).
inline double upward_deviation(double w, double lo, double hi, double x) { return w >= 0.0 ? w * (hi - x) : w * (lo - x); }
/// Worst-case deviation below (>= 0, magnitude).
inline double downward_deviation(double w, double lo, double hi, double x) { return w >= 0.0 ? w * (x - lo) : w * (x - hi); }

/// max (or min) of row . x' + constant over the domain, honoring the l0 budget.
inline double concretize_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, double constant, const PerturbationDomain& dom, bool upper) {
    const Vector& x = dom.nominal();
    double base = row.dot(x) + constant;
    double exempt = 0.0;
    std::vector<double> devs;
    devs.reserve(dom.size());
    const auto& unb = dom.unbudgeted();
    for (std::size_t j = 0; j < dom.size(); ++j) {
        if (dom.is_fixed(j)) continue;
        const auto e = static_cast<Eigen::Index>(j);
        const double d = upper ? upward_deviation(row(e), dom.lower()(e), dom.upper()(e), x(e))
                               : downward_deviation(row(e), dom.lower()(e), dom.upper()(e), x(e));
        if (dom.l0_budget() && set_contains(unb, j)) exempt += d;
        else devs.push_back(d);
    }
    const double spread = exempt + top_sum(devs, dom.l0_budget() ? *dom.l0_budget() : devs.size());
    return upper ? base + spread : base - spread;
}

inline void check_bounds(Vector& l, Vector& u, std::size_t stage) {
    for (Eigen::Index j = 0; j < l.size(); ++j) {
        if (!(std::isfinite(l(j)) && std::isfinite(u(j))))
            throw SoundnessError("non-finite pre-activation bound at stage " + std::to_string(stage));
        if (l(j) > u(j)) {
            // Rounding can cross bounds of a degenerate (point) neuron.
            if (l(j) - u(j) > 1e-9 * (1.0 + std::abs(l(j)) + std::abs(u(j))))
                throw SoundnessError("crossing pre-activation bounds at stage " + std::to_string(stage) + ", neuron " + std::to_string(j));
            std::swap(l(j), u(j));
        }
    }
}

}  // namespace detail

/// Interval (box) propagation of the full domain box; the l0 budget is not
/// used here.
inline IntervalBounds interval_propagate(const Network& net, const PerturbationDomain& dom) {
    if (dom.size() != net.input_size()) throw DimensionError("domain has " + std::to_string(dom.size()) + " features, network expects " + std::to_string(net.input_size()));
    IntervalBounds out;
    Vector lo = dom.lower(), hi = dom.upper();
    for (std::size_t t = 0; t < net.stages().size(); ++t) {
        const Stage& s = net.stages()[t];
        if (s.kind == Stage::Kind::affine) {
            const Vector mid = (lo + hi) * 0.5;
            const Vector rad = (hi - lo) * 0.5;
            const Vector c = s.weights * mid + s.bias;
            const Vector r = s.weights.cwiseAbs() * rad;
            lo = c - r;
            hi = c + r;
        } else {
            detail::check_bounds(lo, hi, t);
            out.stage.push_back(t);
            out.lower.push_back(lo);
            out.upper.push_back(hi);
            lo = lo.cwiseMax(0.0);
            hi = hi.cwiseMax(0.0);
        }
    }
    return out;
}

namespace detail {

/// Pre-activation bounds for every ReLU stage plus the matching relaxations.
/// In backward mode each layer is bounded by a CROWN pass concretized over
/// the domain (including its l0 budget) and intersected with the interval
/// bounds.
inline std::vector<Relaxation> relaxations(const Network& net, const PerturbationDomain& dom, const BoundConfig& cfg, IntervalBounds* record = nullptr) {
    std::vector<Relaxation> relax(net.stages().size());
    Vector lo = dom.lower(), hi = dom.upper();
    for (std::size_t t = 0; t < net.stages().size(); ++t) {
        const Stage& s = net.stages()[t];
        if (s.kind == Stage::Kind::affine) {
            const Vector mid = (lo + hi) * 0.5;
            const Vector rad = (hi - lo) * 0.5;
            const Vector c = s.weights * mid + s.bias;
            const Vector r = s.weights.cwiseAbs() * rad;
            lo = c - r;
            hi = c + r;
            continue;
        }
        if (cfg.intermediate == BoundConfig::Intermediate::backward && t > 0) {
            const auto n = static_cast<Eigen::Index>(s.size);
            const Matrix I = Matrix::Identity(n, n);
            const LinearFunction up = backward(net, t, I, relax, true);
            const LinearFunction dn = backward(net, t, I, relax, false);
            for (Eigen::Index j = 0; j < n; ++j) {
                hi(j) = std::min(hi(j), concretize_row(up.A.row(j), up.c(j), dom, true));
                lo(j) = std::max(lo(j), concretize_row(dn.A.row(j), dn.c(j), dom, false));
            }
        }
        check_bounds(lo, hi, t);
        relax[t] = relax_relu(lo, hi, cfg.lower_slope);
        if (record) {
            record->stage.push_back(t);
            record->lower.push_back(lo);
            record->upper.push_back(hi);
        }
        lo = lo.cwiseMax(0.0);
        hi = hi.cwiseMax(0.0);
    }
    return relax;
}

}  // namespace detail

/// Intermediate bounds as selected by cfg (interval or backward).
inline IntervalBounds intermediate_bounds(const Network& net, const PerturbationDomain& dom, const BoundConfig& cfg) {
    if (dom.size() != net.input_size()) throw DimensionError("domain does not match network input size");
    IntervalBounds out;
    detail::relaxations(net, dom, cfg, &out);
    return out;
}

/// CROWN bounds of the margins f_i - f_c as linear functions of the input.
inline LinearBounds crown_margin_bounds(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const BoundConfig& cfg = {}) {
    if (dom.size() != net.input_size()) throw DimensionError("domain has " + std::to_string(dom.size()) + " features, network expects " + std::to_string(net.input_size()));
    if (spec.num_classes != net.num_classes() || spec.true_class >= net.num_classes()) throw DimensionError("margin spec does not match the network");
    const auto relax = detail::relaxations(net, dom, cfg);
    const Matrix C = spec.objective();
    auto up = detail::backward(net, net.stages().size(), C, relax, true);
    auto dn = detail::backward(net, net.stages().size(), C, relax, false);
    return {std::move(up.A), std::move(up.c), std::move(dn.A), std::move(dn.c), spec};
}

/// Worst-case (largest) value of every f_i - f_c over the domain. With an
/// l0 budget m only the m largest per-feature deviations count, plus all
/// deviations of the domain's unbudgeted features.
inline Vector concretize_upper(const LinearBounds& lb, const PerturbationDomain& dom) {
    if (static_cast<std::size_t>(lb.upper_W.cols()) != dom.size()) throw DimensionError("linear bounds do not match the domain");
    Vector out(lb.upper_W.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = detail::concretize_row(lb.upper_W.row(i), lb.upper_w(i), dom, true);
    return out;
}

inline Vector concretize_lower(const LinearBounds& lb, const PerturbationDomain& dom) {
    if (static_cast<std::size_t>(lb.lower_W.cols()) != dom.size()) throw DimensionError("linear bounds do not match the domain");
    Vector out(lb.lower_W.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = detail::concretize_row(lb.lower_W.row(i), lb.lower_w(i), dom, false);
    return out;
}

/// c_{i,j}: worst-case increase of the upper margin bound of class i when
/// feature j ranges over its interval. Zero for fixed features.
inline Matrix per_feature_contributions(const LinearBounds& lb, const PerturbationDomain& dom) {
    if (static_cast<std::size_t>(lb.upper_W.cols()) != dom.size()) throw DimensionError("linear bounds do not match the domain");
    Matrix c = Matrix::Zero(lb.upper_W.rows(), lb.upper_W.cols());
    const Vector& x = dom.nominal();
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        if (dom.is_fixed(static_cast<std::size_t>(j))) continue;
        const double up = dom.upper()(j) - x(j);
        const double dn = dom.lower()(j) - x(j);
        for (Eigen::Index i = 0; i < c.rows(); ++i) {
            const double w = lb.upper_W(i, j);
            c(i, j) = std::max(std::max(w, 0.0) * up, std::min(w, 0.0) * dn);
        }
    }
    return c;
}

}  // namespace fame
