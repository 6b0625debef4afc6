#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fame/bounds.hpp"
#include "fame/certificate.hpp"

namespace fame {

struct PhaseStats {
    std::string name;
    double duration_ms = 0.0;
    std::size_t freed = 0;
    std::size_t added = 0;
};

/// Fixed features X and freed features A = F \ X of an explanation.
struct Explanation {
    enum class Kind { abstract_wAXp, abstract_minimal_wAXp, exact_AXp };

    FeatureSet explanation;
    FeatureSet free;
    Kind kind = Kind::abstract_wAXp;
    double certificate_value = 0.0;
    bool degenerate = false;  // Phi(empty) > 0 on the full domain
    bool incomplete = false;  // a round or time budget stopped the search
    std::vector<PhaseStats> phases;
    std::optional<KnapsackSolution> solution;  // last batch solve
    std::size_t certificate_calls = 0;         // singleton/binary certificate evaluations
};

inline const char* kind_name(Explanation::Kind k) {
    switch (k) {
        case Explanation::Kind::abstract_wAXp: return "abstract_wAXp";
        case Explanation::Kind::abstract_minimal_wAXp: return "abstract_minimal_wAXp";
        default: return "exact_AXp";
    }
}

/// Outcome of asking whether freeing a set of features keeps the property.
enum class CheckStatus { holds, violated, unknown };

/// Decides whether the property holds when exactly the given features are
/// free and every other feature of the base domain is fixed.
using FreeSetChecker = std::function<CheckStatus(const FeatureSet& free)>;

/// Worst-case margin bound max_i (f_i - f_c) with only `free` varying,
/// recomputing the relaxation on that restricted domain.
inline double recomputed_phi(const Network& net, const PerturbationDomain& base, const MarginSpec& spec, const BoundConfig& cfg, const FeatureSet& free) {
    const PerturbationDomain dom = base.restricted_to(free);
    const Vector ub = concretize_upper(crown_margin_bounds(net, dom, spec, cfg), dom);
    return ub.size() ? ub.maxCoeff() : -std::numeric_limits<double>::infinity();
}

/// Certificate check: holds iff the recomputed Phi is <= 0. Never unknown.
inline FreeSetChecker abstract_checker(const Network& net, const PerturbationDomain& base, const MarginSpec& spec, const BoundConfig& cfg) {
    return [&net, base, spec, cfg](const FeatureSet& free) {
        return recomputed_phi(net, base, spec, cfg, free) <= 0.0 ? CheckStatus::holds : CheckStatus::violated;
    };
}

}  // namespace fame
