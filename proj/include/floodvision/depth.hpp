#pragma once

// Grounding, outlier filtering and scene-level aggregation of flood depths.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "floodvision/kg.hpp"
#include "floodvision/vlm.hpp"

namespace floodvision::depth {

enum class HeightSource { kg, provisional };

inline std::string_view to_string(HeightSource s) {
    return s == HeightSource::kg ? "kg" : "provisional";
}

struct GroundedObject {
    std::size_t index = 0;  // position in the observation
    std::string raw_label;
    std::optional<kg::MatchResult> match;
    double resolved_height_cm = 0.0;
    std::optional<double> height_std_cm;  // reported only, never used in the estimate
    HeightSource height_source = HeightSource::provisional;
    double submerged_ratio = 0.0;
    double depth_cm = 0.0;

    bool operator==(const GroundedObject&) const = default;
};

struct PendingEvent {
    std::string label;
    double height_cm = 0.0;

    bool operator==(const PendingEvent&) const = default;
};

struct FilterPolicy {
    double full_submergence_threshold = 0.95;
    double mad_k = 2.5;
    double mad_scale = 1.4826;
    std::size_t min_n_for_mad = 3;

    void validate() const {
        if (!(full_submergence_threshold > 0.0 && full_submergence_threshold <= 1.0)) {
            throw std::invalid_argument("filter.full_submergence_threshold must be in (0, 1]");
        }
        if (!(mad_k > 0.0)) throw std::invalid_argument("filter.mad_k must be > 0");
        if (!(mad_scale > 0.0)) throw std::invalid_argument("filter.mad_scale must be > 0");
    }

    bool operator==(const FilterPolicy&) const = default;
};

enum class ExclusionReason { fully_submerged, mad_outlier };

inline std::string_view to_string(ExclusionReason r) {
    return r == ExclusionReason::fully_submerged ? "fully_submerged" : "mad_outlier";
}

struct Excluded {
    GroundedObject object;
    ExclusionReason reason;

    bool operator==(const Excluded&) const = default;
};

struct FilterResult {
    std::vector<GroundedObject> retained;
    std::vector<Excluded> excluded;
};

struct SceneDepthEstimate {
    std::vector<GroundedObject> retained;
    std::vector<Excluded> excluded;
    double depth_min_cm = 0.0;
    double depth_avg_cm = 0.0;
    double depth_max_cm = 0.0;
    std::size_t n_used = 0;
};

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

struct GroundingResult {
    std::vector<GroundedObject> objects;
    std::vector<PendingEvent> pending;
};

/// Canonical KG heights override the model's guesses. Pending (quarantined)
/// entities never override; those objects keep their provisional height and
/// emit a pending event like any unmatched label.
inline GroundingResult ground_objects(const kg::KnowledgeGraph& graph,
                                      const vlm::SceneObservation& obs) {
    GroundingResult out;
    for (std::size_t i = 0; i < obs.objects.size(); ++i) {
        const auto& o = obs.objects[i];
        GroundedObject g;
        g.index = i;
        g.raw_label = o.raw_label;
        g.submerged_ratio = o.submerged_ratio;
        auto match = kg::match_entity(graph, o.raw_label);
        const kg::KgEntity* entity = match ? graph.find(match->entity) : nullptr;
        if (entity && entity->status == kg::EntityStatus::canonical) {
            g.match = std::move(match);
            g.resolved_height_cm = entity->height_mean_cm;
            g.height_std_cm = entity->height_std_cm;
            g.height_source = HeightSource::kg;
        } else {
            g.resolved_height_cm = o.provisional_height_cm;
            g.height_source = HeightSource::provisional;
            if (!kg::canonicalize(o.raw_label, graph.qualifier_lexicon).empty()) {
                out.pending.push_back({o.raw_label, o.provisional_height_cm});
            }
        }
        g.depth_cm = g.submerged_ratio * g.resolved_height_cm;
        out.objects.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Outlier filtering
// ---------------------------------------------------------------------------

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty sample");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

namespace detail {

// One MAD pass over `kept`; returns the indices (into `kept`) to drop, or an
// empty vector if nothing should be dropped.
inline std::vector<std::size_t> mad_pass(const std::vector<GroundedObject>& kept,
                                         const FilterPolicy& policy) {
    if (kept.size() < policy.min_n_for_mad) return {};
    std::vector<double> depths;
    depths.reserve(kept.size());
    for (const auto& g : kept) depths.push_back(g.depth_cm);
    const double m = median(depths);
    std::vector<double> deviations;
    deviations.reserve(depths.size());
    for (double d : depths) deviations.push_back(std::abs(d - m));
    const double mad = policy.mad_scale * median(deviations);

    std::vector<std::size_t> drop;
    for (std::size_t i = 0; i < depths.size(); ++i) {
        const bool outlier = mad > 0.0 ? deviations[i] > policy.mad_k * mad : depths[i] != m;
        if (outlier) drop.push_back(i);
    }
    if (drop.size() == kept.size()) return {};
    return drop;
}

}  // namespace detail

/// Two-pass filter. Pass 1 drops fully submerged references (ratio at or above
/// the threshold). Pass 2 drops median-absolute-deviation outliers and is
/// re-applied to the survivors until nothing changes, so the result is a fixed
/// point: filtering the retained set again retains everything. Neither pass
/// ever drops every object.
inline FilterResult filter_outliers(const std::vector<GroundedObject>& objects,
                                    const FilterPolicy& policy = {}) {
    if (objects.empty()) throw std::invalid_argument("filter_outliers: no objects");

    FilterResult out;
    std::vector<GroundedObject> kept;
    for (const auto& g : objects) {
        if (g.submerged_ratio >= policy.full_submergence_threshold) {
            out.excluded.push_back({g, ExclusionReason::fully_submerged});
        } else {
            kept.push_back(g);
        }
    }
    if (kept.empty()) {
        kept = objects;
        out.excluded.clear();
    }

    for (;;) {
        const auto drop = detail::mad_pass(kept, policy);
        if (drop.empty()) break;
        std::vector<GroundedObject> next;
        std::size_t d = 0;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (d < drop.size() && drop[d] == i) {
                out.excluded.push_back({kept[i], ExclusionReason::mad_outlier});
                ++d;
            } else {
                next.push_back(kept[i]);
            }
        }
        kept = std::move(next);
    }
    out.retained = std::move(kept);
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

inline SceneDepthEstimate aggregate(std::vector<GroundedObject> retained) {
    if (retained.empty()) throw std::invalid_argument("aggregate: no retained objects");
    SceneDepthEstimate est;
    double sum = 0.0;
    est.depth_min_cm = retained.front().depth_cm;
    est.depth_max_cm = retained.front().depth_cm;
    for (const auto& g : retained) {
        sum += g.depth_cm;
        est.depth_min_cm = std::min(est.depth_min_cm, g.depth_cm);
        est.depth_max_cm = std::max(est.depth_max_cm, g.depth_cm);
    }
    // Rounding in the sum can push the mean an ulp outside [min, max].
    est.depth_avg_cm = std::clamp(sum / static_cast<double>(retained.size()), est.depth_min_cm,
                                  est.depth_max_cm);
    est.n_used = retained.size();
    est.retained = std::move(retained);
    return est;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct NoEstimate {
    std::string reason;
    std::vector<GroundedObject> objects;
};

struct SceneFailure {
    std::string error;
    std::string raw_response;
};

struct SceneEstimateOutcome {
    std::string image;
    std::variant<SceneDepthEstimate, NoEstimate, SceneFailure> result;
    std::vector<PendingEvent> pending;
    std::vector<std::string> warnings;

    const SceneDepthEstimate* estimate() const { return std::get_if<SceneDepthEstimate>(&result); }
    const NoEstimate* no_estimate() const { return std::get_if<NoEstimate>(&result); }
    const SceneFailure* failure() const { return std::get_if<SceneFailure>(&result); }
};

inline constexpr std::string_view kNoReferenceObjects = "no reference objects";

/// Ground -> filter -> aggregate for an already parsed observation.
inline SceneEstimateOutcome estimate_from_observation(const kg::KnowledgeGraph& graph,
                                                      const vlm::SceneObservation& obs,
                                                      const FilterPolicy& policy,
                                                      std::string image) {
    SceneEstimateOutcome out;
    out.image = std::move(image);
    out.warnings = obs.warnings;
    if (obs.objects.empty()) {
        out.result = NoEstimate{std::string(kNoReferenceObjects), {}};
        return out;
    }
    auto grounded = ground_objects(graph, obs);
    out.pending = std::move(grounded.pending);
    auto filtered = filter_outliers(grounded.objects, policy);
    if (filtered.retained.empty()) {
        out.result = NoEstimate{"no objects retained after filtering", grounded.objects};
        return out;
    }
    auto est = aggregate(std::move(filtered.retained));
    est.excluded = std::move(filtered.excluded);
    out.result = std::move(est);
    return out;
}

/// Full per-image pipeline. A reply that fails to parse or validate is
/// re-requested once; transport errors are retried inside the backend.
inline SceneEstimateOutcome estimate_scene(const kg::KnowledgeGraph& graph,
                                           vlm::VlmBackend& backend, const std::string& model_id,
                                           const vlm::ImagePayload& image,
                                           const vlm::PromptSpec& prompt,
                                           const FilterPolicy& policy) {
    std::string raw;
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            raw = vlm::request_observation(backend, image, prompt);
        } catch (const std::exception& e) {
            return {image.source_path, SceneFailure{e.what(), raw}, {}, {}};
        }
        try {
            auto obs = vlm::parse_observation(raw, model_id);
            return estimate_from_observation(graph, obs, policy, image.source_path);
        } catch (const vlm::ReplyError& e) {
            if (attempt == 1) return {image.source_path, SceneFailure{e.what(), raw}, {}, {}};
        }
    }
    return {image.source_path, SceneFailure{"unreachable", raw}, {}, {}};
}

}  // namespace floodvision::depth
