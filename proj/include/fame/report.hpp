#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fame/input_io.hpp"
#include "fame/oracle.hpp"
#include "fame/pipeline.hpp"

namespace fame {

inline nlohmann::json to_json(const PipelineConfig& c) {
    using P = PipelineConfig;
    return {
        {"solver", c.solver == P::Solver::exact ? "exact" : "greedy"},
        {"cardinality", c.cardinality},
        {"schedule", c.schedule == P::Schedule::full ? "full" : "geometric"},
        {"refine", c.refinement == P::Refinement::singleton ? "singleton" : c.refinement == P::Refinement::binary ? "binary" : "none"},
        {"attack_phase", c.attack_phase},
        {"max_rounds", c.max_rounds},
        {"time_budget_s", c.time_budget_s},
        {"order", c.order == P::Order::bounds ? "bounds" : c.order == P::Order::index ? "index" : "random"},
        {"seed", c.seed},
        {"intermediate", c.bounds.intermediate == BoundConfig::Intermediate::interval ? "interval" : "backward"},
        {"lower_slope", c.bounds.lower_slope == BoundConfig::LowerSlope::adaptive ? "adaptive" : "zero"},
        {"clip", c.bounds.clip},
        {"attack", {{"method", c.attack.method == AttackConfig::Method::fgs ? "fgs" : "pgd"},
                    {"steps", c.attack.steps},
                    {"step_size", c.attack.step_size},
                    {"restarts", c.attack.restarts},
                    {"seed", c.attack.seed}}},
        {"exact_time_limit_s", c.exact.time_limit_s},
    };
}

/// What the report records about the run besides the explanation itself.
struct ReportContext {
    std::string input;
    double epsilon = 0.0;
    std::size_t true_class = 0;
    Shape input_shape;
    nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json phase_json(const PhaseStats& p) {
    return {{"name", p.name}, {"duration_ms", p.duration_ms}, {"freed", p.freed}, {"added", p.added}};
}

inline nlohmann::json explanation_report(const Explanation& e, const ReportContext& ctx, const std::optional<RefinementReport>& refined = std::nullopt) {
    nlohmann::json phases = nlohmann::json::array();
    for (const auto& p : e.phases) phases.push_back(phase_json(p));
    nlohmann::json j{
        {"input", ctx.input},
        {"epsilon", ctx.epsilon},
        {"true_class", ctx.true_class},
        {"explanation", e.explanation},
        {"free", e.free},
        {"kind", kind_name(e.kind)},
        {"phi", std::isfinite(e.certificate_value) ? nlohmann::json(e.certificate_value) : nlohmann::json(nullptr)},
        {"degenerate", e.degenerate},
        {"incomplete", e.incomplete},
        {"num_features", e.explanation.size() + e.free.size()},
        {"input_shape", ctx.input_shape},
        {"config", ctx.config},
    };
    j["solution"] = e.solution ? to_json(*e.solution) : nlohmann::json(nullptr);
    if (refined) {
        for (const auto& p : refined->phases) phases.push_back(phase_json(p));
        j["candidate_set_size"] = refined->candidate_set_size;
        j["distance_to_minimality"] = refined->distance;
        j["distance_lower_bound"] = refined->lower_bound;
        j["distance_degraded"] = refined->degraded;
        j["refined_explanation"] = refined->refined_explanation;
        j["attack_added"] = refined->attack_added;
    } else {
        j["candidate_set_size"] = e.explanation.size();
        j["distance_to_minimality"] = nullptr;
    }
    j["phases"] = std::move(phases);
    return j;
}

namespace detail {

/// (height, width, channels) of the raster an input of this shape maps to.
/// Flat inputs render as a square when possible, otherwise as one row.
inline std::array<std::size_t, 3> raster_dims(const Shape& shape) {
    if (shape.size() == 3) return {shape[1], shape[2], shape[0]};
    const std::size_t n = shape_size(shape);
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side == n) return {side, side, 1};
    return {1, n, 1};
}

inline void check_indices(const FeatureSet& s, std::size_t n) {
    for (std::size_t j : s)
        if (j >= n) throw std::out_of_range("feature index " + std::to_string(j) + " out of range for input size " + std::to_string(n));
}

}  // namespace detail

/// Grayscale mask: a pixel is 255 when any of its channels is in the
/// explanation, 0 otherwise.
inline Image render_mask(const Shape& shape, const FeatureSet& explanation) {
    const auto [h, w, c] = detail::raster_dims(shape);
    detail::check_indices(explanation, h * w * c);
    Image img{w, h, 1, std::vector<std::uint8_t>(h * w, 0)};
    for (std::size_t j : explanation) img.pixels[j % (h * w)] = 255;
    return img;
}

/// Feature indices whose pixel is white. Exact inverse of render_mask for
/// single-channel inputs.
inline FeatureSet mask_indices(const Image& mask, const Shape& shape) {
    const auto [h, w, c] = detail::raster_dims(shape);
    if (mask.width != w || mask.height != h || mask.channels != 1) throw DimensionError("mask size does not match input shape " + shape_string(shape));
    FeatureSet out;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < h * w; ++p)
            if (mask.pixels[p] == 255) out.push_back(ch * h * w + p);
    return out;
}

/// Colour overlay: explanation pixels are blended towards red, the rest
/// keep the input's grey level.
inline Image render_overlay(const Shape& shape, const Vector& input, const FeatureSet& explanation) {
    const auto [h, w, c] = detail::raster_dims(shape);
    if (static_cast<std::size_t>(input.size()) != h * w * c) throw DimensionError("input does not match shape " + shape_string(shape));
    detail::check_indices(explanation, h * w * c);
    std::vector<bool> marked(h * w, false);
    for (std::size_t j : explanation) marked[j % (h * w)] = true;
    Image img{w, h, 3, std::vector<std::uint8_t>(h * w * 3)};
    for (std::size_t p = 0; p < h * w; ++p) {
        double v = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) v += input(static_cast<Eigen::Index>(ch * h * w + p));
        const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(v / static_cast<double>(c), 0.0, 1.0) * 255.0));
        if (marked[p]) {
            img.pixels[3 * p] = static_cast<std::uint8_t>(127 + g / 2);
            img.pixels[3 * p + 1] = static_cast<std::uint8_t>(g / 2);
            img.pixels[3 * p + 2] = static_cast<std::uint8_t>(g / 2);
        } else {
            img.pixels[3 * p] = img.pixels[3 * p + 1] = img.pixels[3 * p + 2] = g;
        }
    }
    return img;
}

/// One dataset sample in an evaluation run. `status` is one of ok, robust,
/// misclassified, degenerate, error.
struct EvalRow {
    std::string sample_id;
    std::string status;
    std::optional<std::size_t> label;
    std::size_t size = 0;
    std::size_t freed = 0;
    std::optional<std::size_t> candidate_set_size;
    std::optional<std::size_t> distance;
    double time_ms = 0.0;
    std::string message;
};

struct EvalAggregates {
    std::size_t samples = 0, counted = 0, robust = 0, misclassified = 0, degenerate = 0, errors = 0;
    std::optional<double> mean_size, mean_time_ms, mean_candidate_set_size, mean_distance;
};

/// Means over non-robust ok rows; the other statuses are only counted.
inline EvalAggregates aggregate(const std::vector<EvalRow>& rows) {
    EvalAggregates a;
    a.samples = rows.size();
    double size = 0, time = 0, cand = 0, dist = 0;
    std::size_t n_cand = 0, n_dist = 0;
    for (const auto& r : rows) {
        if (r.status == "robust") ++a.robust;
        else if (r.status == "misclassified") ++a.misclassified;
        else if (r.status == "degenerate") ++a.degenerate;
        else if (r.status == "error") ++a.errors;
        if (r.status != "ok") continue;
        ++a.counted;
        size += static_cast<double>(r.size);
        time += r.time_ms;
        if (r.candidate_set_size) cand += static_cast<double>(*r.candidate_set_size), ++n_cand;
        if (r.distance) dist += static_cast<double>(*r.distance), ++n_dist;
    }
    if (a.counted) {
        a.mean_size = size / static_cast<double>(a.counted);
        a.mean_time_ms = time / static_cast<double>(a.counted);
    }
    if (n_cand) a.mean_candidate_set_size = cand / static_cast<double>(n_cand);
    if (n_dist) a.mean_distance = dist / static_cast<double>(n_dist);
    return a;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

template <class T>
std::string opt(const std::optional<T>& v) {
    if (!v) return {};
    std::ostringstream os;
    os << *v;
    return os.str();
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace detail

/// Per-sample table without timings, so reruns compare byte for byte.
inline std::string eval_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream os;
    os << "sample_id,status,label,size,freed,candidate_set_size,distance\n";
    for (const auto& r : rows)
        os << detail::csv_field(r.sample_id) << ',' << r.status << ',' << detail::opt(r.label) << ',' << r.size << ',' << r.freed << ','
           << detail::opt(r.candidate_set_size) << ',' << detail::opt(r.distance) << '\n';
    return os.str();
}

inline std::string timings_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream os;
    os << "sample_id,time_ms\n" << std::fixed << std::setprecision(3);
    for (const auto& r : rows) os << detail::csv_field(r.sample_id) << ',' << r.time_ms << '\n';
    return os.str();
}

inline nlohmann::json eval_json(const std::vector<EvalRow>& rows, const nlohmann::json& config) {
    const EvalAggregates a = aggregate(rows);
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json s{{"sample_id", r.sample_id}, {"status", r.status}, {"size", r.size}, {"freed", r.freed}};
        s["label"] = r.label ? nlohmann::json(*r.label) : nlohmann::json(nullptr);
        s["candidate_set_size"] = r.candidate_set_size ? nlohmann::json(*r.candidate_set_size) : nlohmann::json(nullptr);
        s["distance"] = r.distance ? nlohmann::json(*r.distance) : nlohmann::json(nullptr);
        if (!r.message.empty()) s["message"] = r.message;
        samples.push_back(std::move(s));
    }
    return {
        {"config", config},
        {"samples", std::move(samples)},
        {"aggregates",
         {{"samples", a.samples},
          {"counted", a.counted},
          {"robust", a.robust},
          {"misclassified", a.misclassified},
          {"degenerate", a.degenerate},
          {"errors", a.errors},
          {"mean_size", detail::opt_json(a.mean_size)},
          {"mean_candidate_set_size", detail::opt_json(a.mean_candidate_set_size)},
          {"mean_distance", detail::opt_json(a.mean_distance)}}},
    };
}

}  // namespace fame
