#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "floodvision/depth.hpp"
#include "oracles.hpp"
#include "scripted_backend.hpp"
#include "test_paths.hpp"

using namespace floodvision;
using namespace floodvision::depth;
using Catch::Approx;

namespace {

kg::KnowledgeGraph small_kg() {
    return kg::load_kg(R"({"version": "1", "entities": [
        {"id": "suv_tire", "label": "SUV tire", "aliases": ["suv wheel"], "height_mean_cm": 78.0, "height_std_cm": 5.0},
        {"id": "fire_hydrant", "label": "fire hydrant", "aliases": ["hydrant"], "height_mean_cm": 76.0, "height_std_cm": 8.0},
        {"id": "curb", "label": "curb", "height_mean_cm": 15.0, "height_std_cm": 2.0}
    ], "relations": []})");
}

vlm::SceneObservation observation(std::vector<vlm::ObjectObservation> objects) {
    vlm::SceneObservation obs;
    obs.objects = std::move(objects);
    obs.model_id = "test";
    return obs;
}

std::vector<GroundedObject> with_depths(const std::vector<std::pair<double, double>>& ratio_depth) {
    std::vector<GroundedObject> out;
    for (std::size_t i = 0; i < ratio_depth.size(); ++i) {
        GroundedObject g;
        g.index = i;
        g.raw_label = "o" + std::to_string(i);
        g.submerged_ratio = ratio_depth[i].first;
        g.depth_cm = ratio_depth[i].second;
        g.resolved_height_cm = g.submerged_ratio > 0 ? g.depth_cm / g.submerged_ratio : 1.0;
        out.push_back(g);
    }
    return out;
}

std::vector<double> depths_of(const std::vector<GroundedObject>& v) {
    std::vector<double> d;
    for (const auto& g : v) d.push_back(g.depth_cm);
    std::sort(d.begin(), d.end());
    return d;
}

}  // namespace

TEST_CASE("ground_objects: KG heights override provisional guesses", "[depth]") {
    const auto kg = small_kg();
    const auto g = ground_objects(kg, observation({{"rear SUV tire", 60.0, 0.5, ""},
                                                   {"traffic cone", 47.0, 0.4, ""},
                                                   {"curb", 99.0, 0.0, ""}}));
    REQUIRE(g.objects.size() == 3);
    CHECK(g.objects[0].resolved_height_cm == 78.0);
    CHECK(g.objects[0].height_source == HeightSource::kg);
    CHECK(g.objects[0].depth_cm == 39.0);
    CHECK(g.objects[0].match->tier == kg::MatchTier::qualifier_stripped);
    CHECK(g.objects[0].height_std_cm == 5.0);

    CHECK(g.objects[1].resolved_height_cm == 47.0);
    CHECK(g.objects[1].height_source == HeightSource::provisional);
    CHECK_FALSE(g.objects[1].match);
    CHECK(g.objects[1].depth_cm == Approx(18.8).epsilon(1e-12));

    CHECK(g.objects[2].depth_cm == 0.0);

    REQUIRE(g.pending.size() == 1);
    CHECK(g.pending[0] == PendingEvent{"traffic cone", 47.0});
}

TEST_CASE("ground_objects: empty canonical labels and pending matches", "[depth]") {
    auto kg = kg::add_pending(small_kg(), "traffic cone", 47.0);
    const auto g = ground_objects(kg, observation({{"rear left", 30.0, 0.5, ""},
                                                   {"traffic cone", 55.0, 0.5, ""}}));
    CHECK(g.objects[0].height_source == HeightSource::provisional);
    CHECK(g.objects[0].resolved_height_cm == 30.0);
    // Pending entries are quarantined: the model's own height is used and the
    // observation is queued again for the running mean.
    CHECK(g.objects[1].height_source == HeightSource::provisional);
    CHECK(g.objects[1].resolved_height_cm == 55.0);
    REQUIRE(g.pending.size() == 1);
    CHECK(g.pending[0].label == "traffic cone");
}

TEST_CASE("override dominance for random provisional heights", "[depth][property]") {
    const auto kg = small_kg();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> h(0.01, 1000.0), r(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const auto g = ground_objects(kg, observation({{"hydrant", h(rng), r(rng), ""}}));
        CHECK(g.objects[0].resolved_height_cm == 76.0);
        CHECK(g.pending.empty());
    }
}

TEST_CASE("filter_outliers: documented examples", "[depth]") {
    SECTION("fully submerged exclusion") {
        const auto r = filter_outliers(with_depths({{0.5, 30}, {0.6, 36}, {1.0, 60}}));
        CHECK(depths_of(r.retained) == std::vector<double>{30, 36});
        REQUIRE(r.excluded.size() == 1);
        CHECK(r.excluded[0].reason == ExclusionReason::fully_submerged);
        CHECK(r.excluded[0].object.depth_cm == 60);
    }
    SECTION("single fully submerged object is kept") {
        const auto r = filter_outliers(with_depths({{1.0, 15}}));
        CHECK(r.retained.size() == 1);
        CHECK(r.excluded.empty());
    }
    SECTION("all fully submerged are kept") {
        const auto r = filter_outliers(with_depths({{0.97, 15}, {1.0, 8}}));
        CHECK(r.retained.size() == 2);
    }
    SECTION("MAD outlier") {
        const auto r = filter_outliers(with_depths({{0.1, 10}, {0.1, 11}, {0.1, 12}, {0.1, 60}}));
        CHECK(depths_of(r.retained) == std::vector<double>{10, 11, 12});
        REQUIRE(r.excluded.size() == 1);
        CHECK(r.excluded[0].reason == ExclusionReason::mad_outlier);
        CHECK(r.excluded[0].object.depth_cm == 60);
    }
    SECTION("MAD of zero drops everything off the median") {
        const auto r = filter_outliers(with_depths({{0.1, 20}, {0.1, 20}, {0.1, 20}, {0.1, 21}}));
        CHECK(depths_of(r.retained) == std::vector<double>{20, 20, 20});
    }
    SECTION("two objects are never MAD filtered") {
        const auto r = filter_outliers(with_depths({{0.1, 1}, {0.1, 90}}));
        CHECK(r.retained.size() == 2);
    }
    SECTION("empty input") {
        CHECK_THROWS_AS(filter_outliers({}), std::invalid_argument);
    }
}

TEST_CASE("filter_outliers matches the brute-force oracle on small grids", "[depth][oracle]") {
    // Full grid {0..100 step 5}, sizes <= 6, runs in the acceptance suite; here
    // a coarser grid keeps the unit run short.
    const std::vector<double> grid{0, 10, 20, 50, 80, 95, 100};
    std::vector<std::size_t> idx;
    std::size_t mismatches = 0, cases = 0;
    auto visit = [&](auto&& self, std::size_t start, std::size_t size) -> void {
        if (!idx.empty()) {
            std::vector<oracle::Item> items;
            std::vector<std::pair<double, double>> rd;
            for (auto i : idx) {
                items.push_back({grid[i] / 100.0, grid[i]});
                rd.push_back({grid[i] / 100.0, grid[i]});
            }
            const auto expected = oracle::filter(items);
            const auto got = filter_outliers(with_depths(rd));
            std::vector<std::size_t> kept;
            for (const auto& g : got.retained) kept.push_back(g.index);
            std::sort(kept.begin(), kept.end());
            ++cases;
            if (kept != expected.retained) ++mismatches;
        }
        if (size == 6) return;
        for (std::size_t i = start; i < grid.size(); ++i) {
            idx.push_back(i);
            self(self, i, size + 1);
            idx.pop_back();
        }
    };
    visit(visit, 0, 0);
    CHECK(cases > 1000);
    CHECK(mismatches == 0);
}

TEST_CASE("filter properties on random inputs", "[depth][property]") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ratio(0.0, 1.0), height(5.0, 300.0), scale(0.1, 10.0);
    for (int trial = 0; trial < 3000; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 8);
        std::vector<std::pair<double, double>> rd;
        for (int i = 0; i < n; ++i) {
            const double r = rng() % 6 == 0 ? 1.0 : ratio(rng);
            rd.push_back({r, r * height(rng)});
        }
        const auto objects = with_depths(rd);
        const auto first = filter_outliers(objects);
        REQUIRE_FALSE(first.retained.empty());
        CHECK(first.retained.size() + first.excluded.size() == objects.size());

        // Idempotence: the retained set is a fixed point.
        const auto second = filter_outliers(first.retained);
        CHECK(second.excluded.empty());
        CHECK(second.retained == first.retained);

        // Permutation invariance.
        auto shuffled = objects;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto perm = filter_outliers(shuffled);
        CHECK(depths_of(perm.retained) == depths_of(first.retained));

        // Scale equivariance.
        const double c = scale(rng);
        auto scaled = objects;
        for (auto& g : scaled) g.depth_cm *= c, g.resolved_height_cm *= c;
        const auto sr = filter_outliers(scaled);
        std::vector<std::size_t> a, b;
        for (const auto& g : first.retained) a.push_back(g.index);
        for (const auto& g : sr.retained) b.push_back(g.index);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        const auto e1 = aggregate(first.retained), e2 = aggregate(sr.retained);
        CHECK(e2.depth_avg_cm == Approx(c * e1.depth_avg_cm).epsilon(1e-9));
        CHECK(e2.depth_min_cm == Approx(c * e1.depth_min_cm).epsilon(1e-9));
        CHECK(e2.depth_max_cm == Approx(c * e1.depth_max_cm).epsilon(1e-9));
    }
}

TEST_CASE("aggregate", "[depth]") {
    auto est = aggregate(with_depths({{0.1, 30}, {0.1, 40}, {0.1, 50}}));
    CHECK(est.depth_min_cm == 30);
    CHECK(est.depth_avg_cm == 40);
    CHECK(est.depth_max_cm == 50);
    CHECK(est.n_used == 3);
    est = aggregate(with_depths({{0.1, 25}}));
    CHECK((est.depth_min_cm == 25 && est.depth_avg_cm == 25 && est.depth_max_cm == 25));
    est = aggregate(with_depths({{0.1, 10}, {0.1, 20}}));
    CHECK((est.depth_min_cm == 10 && est.depth_avg_cm == 15 && est.depth_max_cm == 20));
    CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
}

TEST_CASE("aggregate is monotone in the submerged ratios", "[depth][property]") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0), height(5.0, 300.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 3);
        std::vector<GroundedObject> lo, hi;
        for (int i = 0; i < n; ++i) {
            const double h = height(rng), r = unit(rng), r2 = std::min(1.0, r + unit(rng) * (1 - r));
            GroundedObject a;
            a.resolved_height_cm = h;
            a.submerged_ratio = r;
            a.depth_cm = r * h;
            GroundedObject b = a;
            b.submerged_ratio = r2;
            b.depth_cm = r2 * h;
            lo.push_back(a);
            hi.push_back(b);
        }
        const auto a = aggregate(lo), b = aggregate(hi);
        CHECK(a.depth_min_cm <= b.depth_min_cm);
        CHECK(a.depth_avg_cm <= b.depth_avg_cm);
        CHECK(a.depth_max_cm <= b.depth_max_cm);
    }
}

TEST_CASE("estimate_scene orchestrates the pipeline", "[depth]") {
    const auto kg = small_kg();
    const auto image = vlm::make_image(std::string("\x89PNG\r\n\x1a\n", 8), "scene.png");
    const auto prompt = vlm::build_prompt();

    SECTION("two matched objects") {
        ScriptedBackend backend({R"({"objects": [
            {"label": "suv tire", "height_cm": 70, "submerged_ratio": 0.5, "rationale": ""},
            {"label": "hydrant", "height_cm": 90, "submerged_ratio": 0.5, "rationale": ""}]})"});
        const auto out = estimate_scene(kg, backend, "mock", image, prompt, {});
        REQUIRE(out.estimate());
        CHECK(out.estimate()->n_used == 2);
        CHECK(out.estimate()->depth_avg_cm == Approx(38.5));
        CHECK(out.pending.empty());
        CHECK(backend.calls == 1);
    }
    SECTION("no reference objects") {
        ScriptedBackend backend({R"({"objects": []})"});
        const auto out = estimate_scene(kg, backend, "mock", image, prompt, {});
        REQUIRE(out.no_estimate());
        CHECK(out.no_estimate()->reason == "no reference objects");
    }
    SECTION("malformed twice fails after one re-request") {
        ScriptedBackend backend({"{\"objects\": [", "{\"objects\": ["});
        const auto out = estimate_scene(kg, backend, "mock", image, prompt, {});
        REQUIRE(out.failure());
        CHECK(out.failure()->raw_response == "{\"objects\": [");
        CHECK(out.image == "scene.png");
        CHECK(backend.calls == 2);
    }
    SECTION("schema violation then valid reply recovers") {
        ScriptedBackend backend({R"({"objects": [{"label": "curb", "height_cm": 15, "submerged_ratio": 2, "rationale": ""}]})",
                                 R"({"objects": [{"label": "curb", "height_cm": 15, "submerged_ratio": 0.5, "rationale": ""}]})"});
        const auto out = estimate_scene(kg, backend, "mock", image, prompt, {});
        REQUIRE(out.estimate());
        CHECK(out.estimate()->depth_avg_cm == 7.5);
        CHECK(backend.calls == 2);
    }
    SECTION("transport errors are not re-requested") {
        ScriptedBackend backend({});
        const auto out = estimate_scene(kg, backend, "mock", image, prompt, {});
        REQUIRE(out.failure());
        CHECK(backend.calls == 1);
    }
}
