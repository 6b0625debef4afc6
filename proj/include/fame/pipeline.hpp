#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fame/attack.hpp"
#include "fame/bounds.hpp"
#include "fame/certificate.hpp"
#include "fame/explanation.hpp"

namespace fame {

struct PipelineConfig {
    enum class Solver { greedy, exact };
    enum class Schedule { full, geometric };
    enum class Refinement { singleton, binary, none };
    enum class Order { bounds, index, random };

    Solver solver = Solver::greedy;
    bool cardinality = true;
    Schedule schedule = Schedule::full;
    Refinement refinement = Refinement::singleton;
    bool attack_phase = true;
    std::size_t max_rounds = 0;  // 0: up to |F|
    double time_budget_s = 0.0;  // 0: unlimited
    Order order = Order::bounds;
    std::uint64_t seed = 0;
    BoundConfig bounds;
    AttackConfig attack;
    ExactConfig exact;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) { return std::chrono::duration<double, std::milli>(Clock::now() - since).count(); }

/// Budgets m tried in one round: 1..n, or 1,2,4,... followed by n.
inline std::vector<std::size_t> budgets(std::size_t n, PipelineConfig::Schedule s) {
    std::vector<std::size_t> out;
    if (s == PipelineConfig::Schedule::full) {
        for (std::size_t m = 1; m <= n; ++m) out.push_back(m);
    } else {
        for (std::size_t m = 1; m < n; m *= 2) out.push_back(m);
        if (n) out.push_back(n);
    }
    return out;
}

inline KnapsackSolution solve(const BatchCertificate& cert, std::optional<std::size_t> cap, const PipelineConfig& cfg) {
    return cfg.solver == PipelineConfig::Solver::exact ? exact_batch_free(cert, cap, cfg.exact) : greedy_batch_free(cert, cap);
}

/// Certificate on the refined domain: A varies freely, at most m of the
/// remaining free features move.
inline BatchCertificate refined_certificate(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const BoundConfig& bcfg,
                                            const FeatureSet& freed, std::size_t m, std::optional<LinearBounds>* cache = nullptr) {
    const PerturbationDomain d = dom.with_budget(m, freed);
    if (cache) {
        if (!*cache) *cache = crown_margin_bounds(net, d, spec, bcfg);
        return make_certificate(**cache, d);
    }
    return make_certificate(crown_margin_bounds(net, d, spec, bcfg), d);
}

struct RoundResult {
    std::optional<KnapsackSolution> best;
    bool degenerate = true;  // every certificate tried was degenerate
};

/// One batch-freeing round: the best (largest) solution over the budget
/// schedule, or a single full-box solve when cardinality mode is off.
/// Ties keep the smallest budget.
inline RoundResult batch_round(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const PipelineConfig& cfg, const FeatureSet& freed) {
    RoundResult out;
    const std::size_t remaining = dom.num_free() - freed.size();
    if (remaining == 0) {
        out.degenerate = false;
        return out;
    }
    // Interval intermediates ignore the budget, so one relaxation serves every m.
    std::optional<LinearBounds> cache;
    auto* reuse = cfg.bounds.intermediate == BoundConfig::Intermediate::interval ? &cache : nullptr;
    auto consider = [&](std::size_t m, std::optional<std::size_t> cap) {
        const BatchCertificate cert = refined_certificate(net, dom, spec, cfg.bounds, freed, m, reuse);
        KnapsackSolution sol = solve(cert, cap, cfg);
        if (!sol.degenerate) out.degenerate = false;
        if (!out.best || sol.objective() > out.best->objective()) out.best = std::move(sol);
    };
    if (cfg.cardinality) {
        for (std::size_t m : budgets(remaining, cfg.schedule)) consider(m, m);
    } else {
        consider(remaining, std::nullopt);
    }
    return out;
}

}  // namespace detail

/// Features in `candidates` ordered for refinement scans.
inline std::vector<std::size_t> traversal_order(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const PipelineConfig& cfg,
                                                const FeatureSet& freed, const FeatureSet& candidates) {
    std::vector<std::size_t> order(candidates.begin(), candidates.end());
    switch (cfg.order) {
        case PipelineConfig::Order::index:
            break;
        case PipelineConfig::Order::random: {
            std::mt19937_64 rng(cfg.seed);
            std::shuffle(order.begin(), order.end(), rng);
            break;
        }
        case PipelineConfig::Order::bounds: {
            // Most freeable first: ascending normalized cost on the full box
            // with the current free set; raw cost when the certificate is degenerate.
            const std::size_t remaining = dom.num_free() - freed.size();
            if (remaining == 0) break;
            const BatchCertificate cert = detail::refined_certificate(net, dom, spec, cfg.bounds, freed, remaining);
            const bool degenerate = cert.degenerate();
            std::vector<std::pair<double, std::size_t>> scored;
            for (std::size_t j : order) {
                const double s = degenerate ? (cert.contributions.rows() ? cert.contributions.col(static_cast<Eigen::Index>(j)).maxCoeff() : 0.0)
                                            : normalized_cost(cert, j);
                scored.emplace_back(s, j);
            }
            std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            for (std::size_t r = 0; r < order.size(); ++r) order[r] = scored[r].second;
            break;
        }
    }
    return order;
}

/// Scans `order` and frees the first feature whose recomputed certificate
/// passes, then restarts the scan; stops after a full scan frees nothing.
/// The result is singleton-maximal. `calls` counts certificate evaluations.
inline FeatureSet iterative_singleton_free(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const BoundConfig& bcfg,
                                           FeatureSet freed, const std::vector<std::size_t>& order, std::size_t* calls = nullptr) {
    freed = make_set(std::move(freed));
    for (bool found = true; found;) {
        found = false;
        for (std::size_t j : order) {
            if (set_contains(freed, j) || dom.is_fixed(j)) continue;
            FeatureSet trial = set_union(freed, {j});
            if (calls) ++*calls;
            if (recomputed_phi(net, dom, spec, bcfg, trial) <= 0.0) {
                freed = std::move(trial);
                found = true;
                break;
            }
        }
    }
    return freed;
}

struct BinarySearchResult {
    FeatureSet freed;      // newly freed candidates
    FeatureSet necessary;  // candidates that must stay fixed
    std::size_t checks = 0;
    std::size_t unknowns = 0;
};

/// Divide-and-conquer freeing. A group is checked as a whole together with
/// everything freed so far; failing groups are halved and both halves are
/// processed in order. With a monotone checker the freed set equals that of
/// sequential deletion over `candidates` in the same order.
inline BinarySearchResult binary_search_free(const std::vector<std::size_t>& candidates, const FreeSetChecker& checker, const FeatureSet& base_free = {}) {
    BinarySearchResult out;
    FeatureSet freed = make_set(base_free);
    auto check = [&](std::span<const std::size_t> group) {
        ++out.checks;
        const CheckStatus s = checker(set_union(freed, make_set({group.begin(), group.end()})));
        if (s == CheckStatus::unknown) ++out.unknowns;
        return s == CheckStatus::holds;
    };
    auto accept = [&](std::span<const std::size_t> group) {
        freed = set_union(freed, make_set({group.begin(), group.end()}));
        out.freed.insert(out.freed.end(), group.begin(), group.end());
    };
    auto solve = [&](auto&& self, std::span<const std::size_t> group, bool known_failed) -> void {
        if (group.empty()) return;
        if (!known_failed && check(group)) {
            accept(group);
            return;
        }
        if (group.size() == 1) {
            out.necessary.push_back(group[0]);
            return;
        }
        const std::size_t half = (group.size() + 1) / 2;
        self(self, group.first(half), false);
        self(self, group.subspan(half), false);
    };
    solve(solve, std::span<const std::size_t>(candidates), false);
    out.freed = make_set(std::move(out.freed));
    out.necessary = make_set(std::move(out.necessary));
    return out;
}

/// Attack-based necessary-feature detection: feature i is necessary when an
/// attack finds a counterexample with `freed` plus i free and the rest of
/// the explanation fixed. All detected features can be added at once.
inline FeatureSet simultaneous_add(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const FeatureSet& freed,
                                   const FeatureSet& explanation, const AttackConfig& attack) {
    FeatureSet necessary;
    for (std::size_t i : explanation) {
        if (dom.is_fixed(i) || set_contains(freed, i)) continue;
        const PerturbationDomain d = dom.restricted_to(set_union(freed, {i}));
        if (find_counterexample(net, d, spec, attack)) necessary.push_back(i);
    }
    return necessary;
}

namespace detail {

inline void require_property(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec) {
    if (dom.size() != net.input_size()) throw DimensionError("domain does not match network input size");
    if (!property_holds(net, dom.nominal(), spec))
        throw MisclassifiedError("the network does not classify the nominal input as class " + std::to_string(spec.true_class));
}

inline Explanation finish(const PerturbationDomain& dom, FeatureSet freed, Explanation e) {
    e.free = make_set(std::move(freed));
    e.explanation = set_difference(iota_set(dom.size()), e.free);
    return e;
}

}  // namespace detail

/// One bound computation (per budget when cardinality mode is on) and one
/// batch-freeing solve on the full domain.
inline Explanation single_round(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const PipelineConfig& cfg = {}) {
    detail::require_property(net, dom, spec);
    const auto t0 = detail::Clock::now();
    detail::RoundResult r = detail::batch_round(net, dom, spec, cfg, {});
    Explanation e;
    e.kind = Explanation::Kind::abstract_wAXp;
    FeatureSet freed;
    if (r.best) {
        freed = r.best->selected;
        e.certificate_value = r.best->phi;
        e.solution = r.best;
    }
    e.degenerate = r.degenerate;
    e.phases.push_back({"batch", detail::elapsed_ms(t0), freed.size(), 0});
    return detail::finish(dom, std::move(freed), std::move(e));
}

inline Explanation single_round(const Network& net, const Vector& x, double eps, const MarginSpec& spec, const PipelineConfig& cfg = {}) {
    return single_round(net, PerturbationDomain::linf_ball(x, eps, cfg.bounds.clip), spec, cfg);
}

/// Recursive batch freeing over refined domains, followed by the configured
/// refinement. Rounds stop when no budget frees anything new.
inline Explanation recursive_free(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const PipelineConfig& cfg = {}) {
    detail::require_property(net, dom, spec);
    const auto start = detail::Clock::now();
    auto out_of_time = [&] { return cfg.time_budget_s > 0.0 && detail::elapsed_ms(start) > cfg.time_budget_s * 1e3; };

    Explanation e;
    FeatureSet freed;
    double batch_phi = 0.0;
    const std::size_t max_rounds = cfg.max_rounds ? cfg.max_rounds : dom.num_free() + 1;
    for (std::size_t round = 0; freed.size() < dom.num_free(); ++round) {
        if (round >= max_rounds || out_of_time()) {
            e.incomplete = true;
            break;
        }
        const auto t0 = detail::Clock::now();
        detail::RoundResult r = detail::batch_round(net, dom, spec, cfg, freed);
        if (round == 0) e.degenerate = r.degenerate;
        const std::size_t gained = r.best ? r.best->objective() : 0;
        e.phases.push_back({"round " + std::to_string(round + 1), detail::elapsed_ms(t0), gained, 0});
        if (gained == 0) break;
        freed = set_union(freed, r.best->selected);
        batch_phi = r.best->phi;
        e.solution = std::move(r.best);
    }

    e.kind = Explanation::Kind::abstract_wAXp;
    const FeatureSet remaining = set_difference(dom.free_set(), freed);
    if (cfg.refinement != PipelineConfig::Refinement::none && !remaining.empty() && !out_of_time()) {
        const auto t0 = detail::Clock::now();
        const std::size_t before = freed.size();
        const auto order = traversal_order(net, dom, spec, cfg, freed, remaining);
        if (cfg.refinement == PipelineConfig::Refinement::singleton) {
            freed = iterative_singleton_free(net, dom, spec, cfg.bounds, freed, order, &e.certificate_calls);
            e.phases.push_back({"singleton", detail::elapsed_ms(t0), freed.size() - before, 0});
        } else {
            const auto bs = binary_search_free(order, abstract_checker(net, dom, spec, cfg.bounds), freed);
            e.certificate_calls += bs.checks;
            freed = set_union(freed, bs.freed);
            e.phases.push_back({"binary", detail::elapsed_ms(t0), bs.freed.size(), 0});
        }
    }
    if (cfg.refinement == PipelineConfig::Refinement::singleton && !e.incomplete && !out_of_time())
        e.kind = Explanation::Kind::abstract_minimal_wAXp;

    // Record Phi on the final domain; if the recomputed relaxation is looser
    // than the batch certificate that admitted the set, keep the latter.
    const double final_phi = recomputed_phi(net, dom, spec, cfg.bounds, freed);
    e.certificate_value = (final_phi <= 0.0 || freed.empty()) ? final_phi : batch_phi;
    return detail::finish(dom, std::move(freed), std::move(e));
}

inline Explanation recursive_free(const Network& net, const Vector& x, double eps, const MarginSpec& spec, const PipelineConfig& cfg = {}) {
    return recursive_free(net, PerturbationDomain::linf_ball(x, eps, cfg.bounds.clip), spec, cfg);
}

struct RefinementReport {
    std::size_t candidate_set_size = 0;  // |X^A| before exact refinement
    std::size_t distance = 0;            // features moved from X^A to free
    std::size_t attack_added = 0;
    FeatureSet refined_explanation;
    FeatureSet freed;
    FeatureSet necessary;
    bool lower_bound = false;  // the checker returned UNKNOWN at least once
    bool degraded = false;     // the abstract checker stood in for the exact one
    std::size_t checks = 0;
    std::vector<PhaseStats> phases;
};

/// Exact refinement of an abstract explanation: attacks mark necessary
/// features, then binary search with `checker` frees what the relaxation
/// could not certify. distance = |X^A \ X^A*|.
inline RefinementReport distance_to_minimality(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const Explanation& abstract,
                                               const FreeSetChecker& checker, const PipelineConfig& cfg = {}, bool degraded = false) {
    RefinementReport rep;
    rep.degraded = degraded;
    rep.candidate_set_size = abstract.explanation.size();
    FeatureSet candidates;
    for (std::size_t j : abstract.explanation)
        if (!dom.is_fixed(j)) candidates.push_back(j);

    if (cfg.attack_phase) {
        const auto t0 = detail::Clock::now();
        rep.necessary = simultaneous_add(net, dom, spec, abstract.free, candidates, cfg.attack);
        rep.attack_added = rep.necessary.size();
        rep.phases.push_back({"attack", detail::elapsed_ms(t0), 0, rep.attack_added});
    }
    const auto t0 = detail::Clock::now();
    const FeatureSet rest = set_difference(candidates, rep.necessary);
    const auto order = traversal_order(net, dom, spec, cfg, abstract.free, rest);
    const auto bs = binary_search_free(order, checker, abstract.free);
    rep.freed = bs.freed;
    rep.necessary = set_union(rep.necessary, bs.necessary);
    rep.checks = bs.checks;
    rep.lower_bound = bs.unknowns > 0;
    rep.distance = bs.freed.size();
    rep.refined_explanation = set_difference(abstract.explanation, bs.freed);
    rep.phases.push_back({"exact", detail::elapsed_ms(t0), rep.distance, bs.necessary.size()});
    return rep;
}

}  // namespace fame
