#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fame/network.hpp"

namespace fame {

/// Sorted, duplicate-free list of feature indices.
using FeatureSet = std::vector<std::size_t>;

inline FeatureSet make_set(FeatureSet s) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

inline FeatureSet set_union(const FeatureSet& a, const FeatureSet& b) {
    FeatureSet out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline FeatureSet set_difference(const FeatureSet& a, const FeatureSet& b) {
    FeatureSet out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline bool set_contains(const FeatureSet& s, std::size_t j) { return std::binary_search(s.begin(), s.end(), j); }

inline FeatureSet iota_set(std::size_t n) {
    FeatureSet out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = j;
    return out;
}

/// Box around a nominal input with pinned (fixed) features and an optional
/// cardinality budget: at most `l0_budget` of the budgeted free features may
/// leave their nominal value at once. Features in `unbudgeted` are free and
/// exempt from the budget; this is how an already-freed set A is carried in
/// the refined domain where A varies freely plus at most m further features.
class PerturbationDomain {
public:
    PerturbationDomain() = default;

    PerturbationDomain(Vector nominal, Vector lower, Vector upper)
        : nominal_(std::move(nominal)), lower_(std::move(lower)), upper_(std::move(upper)), fixed_(static_cast<std::size_t>(nominal_.size()), false) {
        if (lower_.size() != nominal_.size() || upper_.size() != nominal_.size())
            throw DimensionError("domain bounds and nominal input differ in length");
        for (Eigen::Index j = 0; j < nominal_.size(); ++j)
            if (!(lower_(j) <= nominal_(j) && nominal_(j) <= upper_(j)))
                throw std::invalid_argument("domain bounds do not contain the nominal value at feature " + std::to_string(j));
    }

    /// l-infinity ball of radius eps, optionally clipped to [0,1].
    static PerturbationDomain linf_ball(const Vector& x, double eps, bool clip = true) {
        if (!(eps >= 0.0)) throw std::invalid_argument("epsilon must be non-negative");
        Vector lo = x.array() - eps;
        Vector hi = x.array() + eps;
        if (clip) {
            lo = lo.cwiseMax(0.0).cwiseMin(x);
            hi = hi.cwiseMin(1.0).cwiseMax(x);
        }
        return PerturbationDomain(x, std::move(lo), std::move(hi));
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(nominal_.size()); }
    const Vector& nominal() const noexcept { return nominal_; }
    const Vector& lower() const noexcept { return lower_; }
    const Vector& upper() const noexcept { return upper_; }
    bool is_fixed(std::size_t j) const { return fixed_[j]; }
    const std::optional<std::size_t>& l0_budget() const noexcept { return budget_; }
    const FeatureSet& unbudgeted() const noexcept { return unbudgeted_; }

    FeatureSet fixed_set() const {
        FeatureSet out;
        for (std::size_t j = 0; j < size(); ++j)
            if (fixed_[j]) out.push_back(j);
        return out;
    }
    FeatureSet free_set() const {
        FeatureSet out;
        for (std::size_t j = 0; j < size(); ++j)
            if (!fixed_[j]) out.push_back(j);
        return out;
    }
    std::size_t num_free() const { return static_cast<std::size_t>(std::count(fixed_.begin(), fixed_.end(), false)); }

    /// Pins the given features to their nominal values.
    PerturbationDomain& fix(const FeatureSet& features) {
        for (std::size_t j : features) {
            check_index(j);
            fixed_[j] = true;
            lower_(static_cast<Eigen::Index>(j)) = upper_(static_cast<Eigen::Index>(j)) = nominal_(static_cast<Eigen::Index>(j));
        }
        unbudgeted_ = set_difference(unbudgeted_, features);
        return *this;
    }

    /// Copy in which every feature outside `free` is pinned.
    PerturbationDomain restricted_to(const FeatureSet& free) const {
        PerturbationDomain d = *this;
        d.budget_.reset();
        d.unbudgeted_.clear();
        d.fix(set_difference(iota_set(size()), make_set(free)));
        return d;
    }

    /// Copy with an l0 budget m over the free features outside `exempt`.
    PerturbationDomain with_budget(std::size_t m, const FeatureSet& exempt = {}) const {
        PerturbationDomain d = *this;
        d.unbudgeted_.clear();
        for (std::size_t j : exempt) {
            check_index(j);
            if (!fixed_[j]) d.unbudgeted_.push_back(j);
        }
        d.unbudgeted_ = make_set(d.unbudgeted_);
        const std::size_t budgeted = num_free() - d.unbudgeted_.size();
        if (m > budgeted)
            throw std::invalid_argument("l0 budget " + std::to_string(m) + " exceeds the " + std::to_string(budgeted) + " budgeted free features");
        d.budget_ = m;
        return d;
    }

    PerturbationDomain without_budget() const {
        PerturbationDomain d = *this;
        d.budget_.reset();
        d.unbudgeted_.clear();
        return d;
    }

    bool contains(const Vector& x, double tol = 0.0) const {
        if (static_cast<std::size_t>(x.size()) != size()) return false;
        std::size_t moved = 0;
        for (std::size_t j = 0; j < size(); ++j) {
            const auto e = static_cast<Eigen::Index>(j);
            if (fixed_[j] && x(e) != nominal_(e)) return false;
            if (x(e) < lower_(e) - tol || x(e) > upper_(e) + tol) return false;
            if (budget_ && x(e) != nominal_(e) && !set_contains(unbudgeted_, j)) ++moved;
        }
        return !budget_ || moved <= *budget_;
    }

private:
    void check_index(std::size_t j) const {
        if (j >= size()) throw std::out_of_range("feature index " + std::to_string(j) + " out of range for " + std::to_string(size()) + " features");
    }

    Vector nominal_, lower_, upper_;
    std::vector<bool> fixed_;
    std::optional<std::size_t> budget_;
    FeatureSet unbudgeted_;
};

}  // namespace fame
