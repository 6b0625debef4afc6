#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "fame/domain.hpp"
#include "fame/network.hpp"

namespace fame {

struct AttackConfig {
    enum class Method { fgs, pgd };

    Method method = Method::fgs;
    std::size_t steps = 20;
    double step_size = 0.0;  // 0 selects a quarter of the widest half-width
    std::size_t restarts = 3;
    std::uint64_t seed = 0;

    void validate() const {
        if (step_size < 0.0) throw std::invalid_argument("attack step size must be positive");
        if (method == Method::pgd && steps < 1) throw std::invalid_argument("pgd needs at least one step");
    }
};

/// Rows are d(f_i - f_c)/dx for each adversary class i. At a ReLU kink the
/// slope-0 subgradient is used.
inline Matrix gradient_margins(const Network& net, const Vector& x, const MarginSpec& spec) {
    check_input(net, x);
    std::vector<Vector> masks(net.stages().size());
    Vector h = x;
    for (std::size_t t = 0; t < net.stages().size(); ++t) {
        const Stage& s = net.stages()[t];
        if (s.kind == Stage::Kind::affine) {
            h = s.weights * h + s.bias;
        } else {
            masks[t] = (h.array() > 0.0).cast<double>();
            h = h.cwiseMax(0.0);
        }
    }
    Matrix G = spec.objective();
    for (std::size_t t = net.stages().size(); t-- > 0;) {
        const Stage& s = net.stages()[t];
        if (s.kind == Stage::Kind::affine) G = G * s.weights;
        else G = G * masks[t].asDiagonal();
    }
    return G;
}

namespace detail {

inline bool violates(const Network& net, const Vector& x, const MarginSpec& spec) {
    const Vector m = margins(net, x, spec);
    return m.size() > 0 && m.minCoeff() <= 0.0;
}

/// Features allowed to move: everything free when there is no budget,
/// otherwise the unbudgeted features plus the m budgeted features with the
/// largest score (ties by lowest index).
inline std::vector<bool> support(const PerturbationDomain& dom, const Vector& score) {
    std::vector<bool> keep(dom.size(), false);
    std::vector<std::size_t> budgeted;
    for (std::size_t j = 0; j < dom.size(); ++j) {
        if (dom.is_fixed(j)) continue;
        if (!dom.l0_budget() || set_contains(dom.unbudgeted(), j)) keep[j] = true;
        else budgeted.push_back(j);
    }
    if (dom.l0_budget()) {
        const std::size_t m = std::min(*dom.l0_budget(), budgeted.size());
        std::stable_sort(budgeted.begin(), budgeted.end(), [&](std::size_t a, std::size_t b) {
            return score(static_cast<Eigen::Index>(a)) > score(static_cast<Eigen::Index>(b));
        });
        for (std::size_t r = 0; r < m; ++r) keep[budgeted[r]] = true;
    }
    return keep;
}

inline Vector half_widths(const PerturbationDomain& dom) { return (dom.upper() - dom.lower()) * 0.5; }

/// Clamps into the box and resets coordinates outside `keep` to nominal.
inline void project(const PerturbationDomain& dom, const std::vector<bool>& keep, Vector& x) {
    for (std::size_t j = 0; j < dom.size(); ++j) {
        const auto e = static_cast<Eigen::Index>(j);
        if (!keep[j]) x(e) = dom.nominal()(e);
        else x(e) = std::clamp(x(e), dom.lower()(e), dom.upper()(e));
    }
}

inline std::optional<Vector> fgs(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec) {
    const Vector& x0 = dom.nominal();
    const Matrix G = gradient_margins(net, x0, spec);
    const Vector hw = half_widths(dom);
    for (Eigen::Index r = 0; r < G.rows(); ++r) {
        const Vector g = G.row(r).transpose();
        const auto keep = support(dom, (g.cwiseProduct(hw)).cwiseAbs());
        Vector x = x0;
        for (std::size_t j = 0; j < dom.size(); ++j) {
            const auto e = static_cast<Eigen::Index>(j);
            if (!keep[j]) continue;
            if (g(e) > 0.0) x(e) = dom.upper()(e);
            else if (g(e) < 0.0) x(e) = dom.lower()(e);
        }
        if (violates(net, x, spec)) return x;
    }
    return std::nullopt;
}

inline std::optional<Vector> pgd(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const AttackConfig& cfg) {
    const Vector hw = half_widths(dom);
    const double width = hw.size() ? hw.maxCoeff() : 0.0;
    if (width <= 0.0) return violates(net, dom.nominal(), spec) ? std::optional<Vector>(dom.nominal()) : std::nullopt;
    const double alpha = cfg.step_size > 0.0 ? cfg.step_size : width / 4.0;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (std::size_t run = 0; run <= cfg.restarts; ++run) {
        Vector x = dom.nominal();
        if (run > 0) {
            Vector score(static_cast<Eigen::Index>(dom.size()));
            for (Eigen::Index j = 0; j < score.size(); ++j) score(j) = unit(rng);
            const auto keep = support(dom, score);
            for (std::size_t j = 0; j < dom.size(); ++j) {
                const auto e = static_cast<Eigen::Index>(j);
                if (keep[j]) x(e) = dom.lower()(e) + unit(rng) * (dom.upper()(e) - dom.lower()(e));
            }
        }
        if (violates(net, x, spec)) return x;
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            const Vector m = margins(net, x, spec);
            Eigen::Index worst = 0;
            m.minCoeff(&worst);
            const Vector g = gradient_margins(net, x, spec).row(worst).transpose();
            const auto keep = support(dom, g.cwiseProduct(hw).cwiseAbs());
            for (Eigen::Index j = 0; j < x.size(); ++j)
                if (g(j) > 0.0) x(j) += alpha;
                else if (g(j) < 0.0) x(j) -= alpha;
            project(dom, keep, x);
            if (violates(net, x, spec)) return x;
        }
    }
    return std::nullopt;
}

}  // namespace detail

/// Gradient-based search for an input in `dom` where some margin
/// f_c - f_i is <= 0. A returned point always re-verifies by forward
/// evaluation and lies in the domain; no return is inconclusive.
inline std::optional<Vector> find_counterexample(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const AttackConfig& cfg = {}) {
    cfg.validate();
    if (dom.size() != net.input_size()) throw DimensionError("domain does not match network input size");
    // PGD mode tries the single FGS step first; it is cheap and often enough.
    std::optional<Vector> found = detail::fgs(net, dom, spec);
    if (!found && cfg.method == AttackConfig::Method::pgd) found = detail::pgd(net, dom, spec, cfg);
    if (found && !(dom.contains(*found) && detail::violates(net, *found, spec))) return std::nullopt;
    return found;
}

}  // namespace fame
