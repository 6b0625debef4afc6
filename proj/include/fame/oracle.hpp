#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <optional>
#include <vector>

#include "fame/attack.hpp"
#include "fame/bounds.hpp"
#include "fame/certificate.hpp"
#include "fame/explanation.hpp"

namespace fame {

struct OracleConfig {
    double tol = 1e-4;              // boxes narrower than this in every free dim are not split
    std::size_t node_budget = 100000;
    std::size_t corner_dims = 6;    // corners enumerated over the widest dims (2^6 points)
    BoundConfig bounds{BoundConfig::Intermediate::backward, BoundConfig::LowerSlope::adaptive, true};
    AttackConfig attack{AttackConfig::Method::pgd, 20, 0.0, 0, 0};
};

struct VerifyResult {
    enum class Status { unsat, sat, unknown };

    Status status = Status::unknown;
    std::optional<Vector> counterexample;
    std::size_t nodes = 0;
    std::size_t max_depth = 0;
    double wall_ms = 0.0;
    std::string reason;  // why the result is unknown
};

inline const char* status_name(VerifyResult::Status s) {
    switch (s) {
        case VerifyResult::Status::unsat: return "UNSAT";
        case VerifyResult::Status::sat: return "SAT";
        default: return "UNKNOWN";
    }
}

inline nlohmann::json to_json(const VerifyResult& r) {
    nlohmann::json j{{"status", status_name(r.status)},
                     {"stats", {{"nodes", r.nodes}, {"depth", r.max_depth}, {"wall_ms", r.wall_ms}}}};
    if (r.counterexample) j["counterexample"] = std::vector<double>(r.counterexample->data(), r.counterexample->data() + r.counterexample->size());
    else j["counterexample"] = nullptr;
    if (!r.reason.empty()) j["reason"] = r.reason;
    return j;
}

namespace detail {

struct Box {
    Vector lower, upper;
    std::size_t depth = 0;
};

inline PerturbationDomain box_domain(const Box& b, const FeatureSet& fixed) {
    PerturbationDomain d((b.lower + b.upper) * 0.5, b.lower, b.upper);
    d.fix(fixed);
    return d;
}

/// Corners over the widest free dims (others at the midpoint), the midpoint
/// itself, then a gradient attack.
inline std::optional<Vector> search_box(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const OracleConfig& cfg) {
    FeatureSet free = dom.free_set();
    std::stable_sort(free.begin(), free.end(), [&](std::size_t a, std::size_t b) {
        const auto ea = static_cast<Eigen::Index>(a), eb = static_cast<Eigen::Index>(b);
        return dom.upper()(ea) - dom.lower()(ea) > dom.upper()(eb) - dom.lower()(eb);
    });
    const std::size_t d = std::min(free.size(), cfg.corner_dims);
    const Vector mid = dom.nominal();
    if (violates(net, mid, spec)) return mid;
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
        Vector x = mid;
        for (std::size_t b = 0; b < d; ++b) {
            const auto e = static_cast<Eigen::Index>(free[b]);
            x(e) = (mask >> b & 1u) ? dom.upper()(e) : dom.lower()(e);
        }
        if (violates(net, x, spec)) return x;
    }
    return find_counterexample(net, dom, spec, cfg.attack);
}

}  // namespace detail

/// Complete verification by input splitting: a box is closed when the CROWN
/// upper bound of every f_i - f_c is < 0, a counterexample ends the search
/// (SAT), and otherwise the widest free dimension is bisected. Boxes are
/// explored depth-first, lower half first, so results are deterministic.
inline VerifyResult verify_complete(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const OracleConfig& cfg = {}) {
    if (dom.size() != net.input_size()) throw DimensionError("domain does not match network input size");
    if (dom.l0_budget()) throw std::invalid_argument("the complete verifier does not support l0 budgets");
    const auto start = std::chrono::steady_clock::now();
    VerifyResult res;
    const FeatureSet fixed = dom.fixed_set();
    const FeatureSet free = dom.free_set();
    std::vector<detail::Box> stack{{dom.lower(), dom.upper(), 0}};
    bool undecided = false;

    auto finish = [&](VerifyResult::Status s) {
        res.status = s;
        res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return res;
    };

    while (!stack.empty()) {
        detail::Box box = std::move(stack.back());
        stack.pop_back();
        if (res.nodes >= cfg.node_budget) {
            res.reason = "node budget exhausted";
            return finish(VerifyResult::Status::unknown);
        }
        ++res.nodes;
        res.max_depth = std::max(res.max_depth, box.depth);

        const PerturbationDomain bd = detail::box_domain(box, fixed);
        const Vector ub = concretize_upper(crown_margin_bounds(net, bd, spec, cfg.bounds), bd);
        if (ub.size() == 0 || ub.maxCoeff() < 0.0) continue;

        if (auto cex = detail::search_box(net, bd, spec, cfg)) {
            res.counterexample = std::move(cex);
            return finish(VerifyResult::Status::sat);
        }

        std::size_t split = 0;
        double widest = -1.0;
        for (std::size_t j : free) {
            const auto e = static_cast<Eigen::Index>(j);
            const double w = box.upper(e) - box.lower(e);
            if (w > widest) {
                widest = w;
                split = j;
            }
        }
        if (widest < cfg.tol) {
            undecided = true;
            continue;
        }
        const auto e = static_cast<Eigen::Index>(split);
        const double m = 0.5 * (box.lower(e) + box.upper(e));
        detail::Box lo = box, hi = std::move(box);
        lo.upper(e) = m;
        hi.lower(e) = m;
        lo.depth = hi.depth = lo.depth + 1;
        stack.push_back(std::move(hi));
        stack.push_back(std::move(lo));
    }
    if (undecided) {
        res.reason = "undecided box below split tolerance";
        return finish(VerifyResult::Status::unknown);
    }
    return finish(VerifyResult::Status::unsat);
}

/// Checker backed by the complete verifier.
inline FreeSetChecker exact_checker(const Network& net, const PerturbationDomain& base, const MarginSpec& spec, const OracleConfig& cfg = {}) {
    return [&net, base, spec, cfg](const FeatureSet& free) {
        switch (verify_complete(net, base.restricted_to(free), spec, cfg).status) {
            case VerifyResult::Status::unsat: return CheckStatus::holds;
            case VerifyResult::Status::sat: return CheckStatus::violated;
            default: return CheckStatus::unknown;
        }
    };
}

struct DeletionResult {
    FeatureSet explanation;
    FeatureSet free;
    std::size_t checks = 0;
    std::size_t unknowns = 0;  // features kept fixed because the checker could not decide
};

/// Deletion-based explanation: starting from `initial_free`, visit features
/// in `order` and keep each one free iff the checker proves the property
/// with it freed. UNKNOWN keeps the feature fixed.
inline DeletionResult sequential_deletion_axp(std::size_t num_features, const std::vector<std::size_t>& order, const FreeSetChecker& checker, const FeatureSet& initial_free = {}) {
    DeletionResult out;
    out.free = make_set(initial_free);
    for (std::size_t j : order) {
        if (j >= num_features) throw std::out_of_range("feature index out of range in traversal order");
        if (set_contains(out.free, j)) continue;
        FeatureSet trial = set_union(out.free, {j});
        ++out.checks;
        const CheckStatus s = checker(trial);
        if (s == CheckStatus::holds) out.free = std::move(trial);
        else if (s == CheckStatus::unknown) ++out.unknowns;
    }
    out.explanation = set_difference(iota_set(num_features), out.free);
    return out;
}

/// Reference MKP solution by enumerating every subset of the candidates.
inline KnapsackSolution brute_force_knapsack(const BatchCertificate& cert, std::size_t n_limit = 20, std::optional<std::size_t> m_cap = std::nullopt) {
    const std::size_t n = cert.candidates.size();
    if (n > n_limit) throw std::invalid_argument("brute force limited to " + std::to_string(n_limit) + " candidates, got " + std::to_string(n));
    KnapsackSolution best;
    best.method = KnapsackSolution::Method::brute_force;
    best.optimal = true;
    best.phi = phi(cert, {});
    best.degenerate = cert.degenerate();
    bool found = best.phi <= 0.0;
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
        FeatureSet s;
        for (std::size_t p = 0; p < n; ++p)
            if (mask >> p & 1u) s.push_back(cert.candidates[p]);
        if (m_cap && s.size() > *m_cap) continue;
        if (found && (s.size() < best.selected.size() || (s.size() == best.selected.size() && !(s < best.selected)))) continue;
        const double v = phi(cert, s);
        if (v <= 0.0) {
            best.selected = std::move(s);
            best.phi = v;
            found = true;
        }
    }
    return best;
}

}  // namespace fame
