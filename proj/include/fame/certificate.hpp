#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fame/bounds.hpp"

namespace fame {

/// Candidates are only scored when every capacity -b^i exceeds this.
inline constexpr double kCapacityGuard = 1e-12;

/// Phi(A) = max_i ( baseline_i + sum_{j in A} contributions(i, j) ).
/// `baseline` already includes the contribution of features freed in
/// earlier rounds (the unbudgeted set of the domain it was built from).
struct BatchCertificate {
    Vector baseline;       // one entry per adversary class
    Matrix contributions;  // (k-1) x n, all >= 0
    FeatureSet candidates; // features that may still be freed

    std::size_t num_features() const { return static_cast<std::size_t>(contributions.cols()); }

    /// True when some capacity -b^i is not safely positive.
    bool degenerate() const { return baseline.size() > 0 && baseline.maxCoeff() >= -kCapacityGuard; }
};

inline BatchCertificate make_certificate(const LinearBounds& lb, const PerturbationDomain& dom) {
    BatchCertificate cert;
    cert.contributions = per_feature_contributions(lb, dom);
    cert.baseline = lb.upper_W * dom.nominal() + lb.upper_w;
    FeatureSet exempt = dom.l0_budget() ? dom.unbudgeted() : FeatureSet{};
    for (std::size_t j : exempt) cert.baseline += cert.contributions.col(static_cast<Eigen::Index>(j));
    cert.candidates = set_difference(dom.free_set(), exempt);
    return cert;
}

inline double phi(const BatchCertificate& cert, const FeatureSet& A) {
    if (cert.baseline.size() == 0) return -std::numeric_limits<double>::infinity();
    Vector v = cert.baseline;
    for (std::size_t j : A) {
        if (j >= cert.num_features()) throw std::out_of_range("feature index " + std::to_string(j) + " out of range");
        v += cert.contributions.col(static_cast<Eigen::Index>(j));
    }
    return v.maxCoeff();
}

struct KnapsackSolution {
    enum class Method { greedy, exact, brute_force };

    FeatureSet selected;
    double phi = 0.0;
    bool optimal = false;
    bool degenerate = false;
    Method method = Method::greedy;
    std::size_t nodes = 0;

    std::size_t objective() const { return selected.size(); }
};

inline const char* method_name(KnapsackSolution::Method m) {
    switch (m) {
        case KnapsackSolution::Method::greedy: return "greedy";
        case KnapsackSolution::Method::exact: return "exact";
        default: return "brute_force";
    }
}

inline nlohmann::json to_json(const KnapsackSolution& s) {
    return {{"method", method_name(s.method)}, {"selected", s.selected}, {"phi", s.phi}, {"optimal", s.optimal}};
}

/// max_i c_{i,j} / (-b^i): the normalized cost used to rank candidates.
inline double normalized_cost(const BatchCertificate& cert, std::size_t j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < cert.baseline.size(); ++i)
        s = std::max(s, cert.contributions(i, static_cast<Eigen::Index>(j)) / -cert.baseline(i));
    return s;
}

namespace detail {

/// Drops trailing picks until phi recomputed in index order is <= 0.
inline void settle(const BatchCertificate& cert, std::vector<std::size_t>& picks, KnapsackSolution& sol) {
    for (;;) {
        sol.selected = make_set(picks);
        sol.phi = phi(cert, sol.selected);
        if (sol.phi <= 0.0 || picks.empty()) return;
        picks.pop_back();
    }
}

}  // namespace detail

/// Greedy feature freeing: candidates are visited once in order of
/// increasing normalized cost (ties by index) and kept when the certificate
/// stays non-positive and the cardinality cap allows.
inline KnapsackSolution greedy_batch_free(const BatchCertificate& cert, std::optional<std::size_t> m_cap = std::nullopt) {
    KnapsackSolution sol;
    sol.method = KnapsackSolution::Method::greedy;
    if (cert.degenerate()) {
        sol.degenerate = true;
        sol.phi = phi(cert, {});
        return sol;
    }
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(cert.candidates.size());
    for (std::size_t j : cert.candidates) order.emplace_back(normalized_cost(cert, j), j);
    std::sort(order.begin(), order.end());

    const std::size_t cap = m_cap.value_or(std::numeric_limits<std::size_t>::max());
    Vector load = cert.baseline;
    std::vector<std::size_t> picks;
    for (const auto& [score, j] : order) {
        if (picks.size() >= cap) break;
        const auto col = cert.contributions.col(static_cast<Eigen::Index>(j));
        if ((load + col).maxCoeff() <= 0.0) {
            load += col;
            picks.push_back(j);
        }
    }
    detail::settle(cert, picks, sol);
    // k = 2 is a single-constraint problem: ascending cost order is optimal.
    sol.optimal = cert.baseline.size() <= 1 && m_cap == std::nullopt;
    return sol;
}

struct ExactConfig {
    double time_limit_s = 10.0;
};

/// Maximum-cardinality feasible set by depth-first branch and bound. The
/// bound at a node is, per class, the number of remaining items that fit in
/// the residual capacity when taken cheapest first; the minimum over classes
/// bounds the whole problem. Items are branched include-first in index
/// order, so among optimal sets the lexicographically smallest is returned.
inline KnapsackSolution exact_batch_free(const BatchCertificate& cert, std::optional<std::size_t> m_cap = std::nullopt, ExactConfig cfg = {}) {
    KnapsackSolution sol;
    sol.method = KnapsackSolution::Method::exact;
    if (cert.degenerate()) {
        sol.degenerate = true;
        sol.phi = phi(cert, {});
        sol.optimal = true;
        return sol;
    }
    const KnapsackSolution greedy = greedy_batch_free(cert, m_cap);

    const auto& items = cert.candidates;
    const std::size_t n = items.size();
    const auto k = cert.baseline.size();
    const std::size_t cap = std::min(m_cap.value_or(n), n);

    // cost[i][p]: contribution of item p to class i; sorted[i]: items by cost.
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(k), std::vector<double>(n));
    std::vector<std::vector<std::size_t>> sorted(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        auto& ci = cost[static_cast<std::size_t>(i)];
        for (std::size_t p = 0; p < n; ++p) ci[p] = cert.contributions(i, static_cast<Eigen::Index>(items[p]));
        auto& si = sorted[static_cast<std::size_t>(i)];
        si.resize(n);
        std::iota(si.begin(), si.end(), std::size_t{0});
        std::stable_sort(si.begin(), si.end(), [&](std::size_t a, std::size_t b) { return ci[a] < ci[b]; });
    }

    std::vector<double> residual(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) residual[static_cast<std::size_t>(i)] = -cert.baseline(i);

    const auto start = std::chrono::steady_clock::now();
    bool timed_out = false;
    std::size_t nodes = 0;
    std::ptrdiff_t best = static_cast<std::ptrdiff_t>(greedy.objective()) - 1;
    std::vector<std::size_t> chosen, incumbent;

    auto bound = [&](std::size_t depth, std::size_t count) {
        std::size_t b = std::min(cap - count, n - depth);
        for (std::size_t i = 0; i < static_cast<std::size_t>(k) && b > 0; ++i) {
            double room = residual[i];
            std::size_t fit = 0;
            for (std::size_t p : sorted[i]) {
                if (p < depth) continue;
                if (cost[i][p] > room || fit == b) break;
                room -= cost[i][p];
                ++fit;
            }
            b = std::min(b, fit);
        }
        return count + b;
    };

    auto dfs = [&](auto&& self, std::size_t depth) -> void {
        if (timed_out) return;
        if ((++nodes & 1023u) == 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > cfg.time_limit_s) {
            timed_out = true;
            return;
        }
        if (static_cast<std::ptrdiff_t>(bound(depth, chosen.size())) <= best) return;
        if (depth == n) {
            best = static_cast<std::ptrdiff_t>(chosen.size());
            incumbent = chosen;
            return;
        }
        bool fits = chosen.size() < cap;
        for (std::size_t i = 0; fits && i < static_cast<std::size_t>(k); ++i) fits = cost[i][depth] <= residual[i];
        if (fits) {
            for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) residual[i] -= cost[i][depth];
            chosen.push_back(items[depth]);
            self(self, depth + 1);
            chosen.pop_back();
            for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) residual[i] += cost[i][depth];
        }
        self(self, depth + 1);
    };
    dfs(dfs, 0);

    sol.nodes = nodes;
    if (timed_out && incumbent.size() < greedy.objective()) {
        sol.selected = greedy.selected;
        sol.phi = greedy.phi;
        return sol;
    }
    std::vector<std::size_t> picks = incumbent;
    detail::settle(cert, picks, sol);
    sol.optimal = !timed_out && sol.selected.size() == incumbent.size();
    return sol;
}

}  // namespace fame
