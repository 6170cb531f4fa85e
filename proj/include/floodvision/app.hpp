#pragma once

// Application layer shared by the command-line tool and the integration
// tests: configuration, per-scene result files, batch runs, KG write-back.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "floodvision/depth.hpp"
#include "floodvision/evaluation.hpp"
#include "floodvision/kg.hpp"
#include "floodvision/vlm.hpp"

namespace floodvision::app {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kApiKeyEnv = "FLOODVISION_API_KEY";
inline constexpr std::string_view kSummaryFile = "batch_summary.json";

/// Bad configuration or input; maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct AppConfig {
    vlm::BackendConfig backend;
    std::string kg_path;
    depth::FilterPolicy filter;
    std::string output_dir;

    int parallelism() const { return backend.parallelism; }
};

inline vlm::BackendKind parse_backend_kind(const std::string& s) {
    if (s == "mock") return vlm::BackendKind::mock;
    if (s == "http") return vlm::BackendKind::http;
    throw UsageError("backend.kind must be \"mock\" or \"http\", got \"" + s + "\"");
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, const std::string& path, T& out) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw UsageError("config key " + path + "." + key + " has the wrong type");
    }
}

inline void reject_unknown(const nlohmann::json& obj, const std::string& path,
                           std::initializer_list<std::string_view> known) {
    for (const auto& [k, _] : obj.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw UsageError("unknown config key " + path + "." + k);
        }
    }
}

inline std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
}

}  // namespace detail

/// Parses a config document. Relative paths are resolved against `base_dir`.
inline AppConfig parse_config(std::string_view text, const fs::path& base_dir) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw UsageError("config must be a JSON object");
    detail::reject_unknown(doc, "config", {"backend", "kg_path", "filter", "output_dir"});

    AppConfig c;
    if (auto it = doc.find("backend"); it != doc.end()) {
        const auto& b = *it;
        detail::reject_unknown(b, "backend",
                               {"kind", "base_url", "model_name", "timeout_s", "max_retries",
                                "fixture_dir", "parallelism", "backoff_base_s"});
        std::string kind = "mock";
        detail::read_key(b, "kind", "backend", kind);
        c.backend.kind = parse_backend_kind(kind);
        detail::read_key(b, "base_url", "backend", c.backend.base_url);
        detail::read_key(b, "model_name", "backend", c.backend.model_name);
        detail::read_key(b, "timeout_s", "backend", c.backend.timeout_s);
        detail::read_key(b, "max_retries", "backend", c.backend.max_retries);
        detail::read_key(b, "fixture_dir", "backend", c.backend.fixture_dir);
        detail::read_key(b, "parallelism", "backend", c.backend.parallelism);
        detail::read_key(b, "backoff_base_s", "backend", c.backend.backoff_base_s);
        c.backend.fixture_dir = detail::resolve(base_dir, c.backend.fixture_dir);
    }
    detail::read_key(doc, "kg_path", "config", c.kg_path);
    c.kg_path = detail::resolve(base_dir, c.kg_path);
    detail::read_key(doc, "output_dir", "config", c.output_dir);
    c.output_dir = detail::resolve(base_dir, c.output_dir);
    if (auto it = doc.find("filter"); it != doc.end()) {
        const auto& f = *it;
        detail::reject_unknown(f, "filter",
                               {"full_submergence_threshold", "mad_k", "mad_scale", "min_n_for_mad"});
        detail::read_key(f, "full_submergence_threshold", "filter", c.filter.full_submergence_threshold);
        detail::read_key(f, "mad_k", "filter", c.filter.mad_k);
        detail::read_key(f, "mad_scale", "filter", c.filter.mad_scale);
        detail::read_key(f, "min_n_for_mad", "filter", c.filter.min_n_for_mad);
    }
    return c;
}

inline AppConfig load_config(const fs::path& path) {
    std::string text;
    try {
        text = vlm::read_file(path);
    } catch (const std::exception&) {
        throw UsageError("cannot read config file " + path.string());
    }
    try {
        return parse_config(text, path.parent_path());
    } catch (const UsageError& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
}

/// Checks invariants and fills the API key from the environment.
inline void finalize_config(AppConfig& c) {
    try {
        c.backend.validate();
        c.filter.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (c.backend.kind == vlm::BackendKind::http) {
        const char* key = std::getenv(std::string(kApiKeyEnv).c_str());
        if (!key || !*key) {
            throw UsageError("environment variable " + std::string(kApiKeyEnv) +
                             " must be set for backend.kind = http");
        }
        c.backend.api_key = key;
    }
}

/// Configuration snapshot echoed into outputs. Excludes settings that cannot
/// change results (parallelism) and secrets.
inline nlohmann::json config_echo(const AppConfig& c) {
    nlohmann::json backend{{"kind", c.backend.kind == vlm::BackendKind::mock ? "mock" : "http"},
                           {"max_retries", c.backend.max_retries},
                           {"timeout_s", c.backend.timeout_s}};
    if (c.backend.kind == vlm::BackendKind::mock) {
        backend["fixture_dir"] = c.backend.fixture_dir;
    } else {
        backend["base_url"] = c.backend.base_url;
        backend["model_name"] = c.backend.model_name;
    }
    return {{"backend", backend},
            {"kg_path", c.kg_path},
            {"filter",
             {{"full_submergence_threshold", c.filter.full_submergence_threshold},
              {"mad_k", c.filter.mad_k},
              {"mad_scale", c.filter.mad_scale},
              {"min_n_for_mad", c.filter.min_n_for_mad}}}};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Write-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline kg::KnowledgeGraph read_kg(const fs::path& path) {
    std::string text;
    try {
        text = vlm::read_file(path);
    } catch (const std::exception&) {
        throw UsageError("cannot read knowledge graph " + path.string());
    }
    return kg::load_kg(text);
}

// ---------------------------------------------------------------------------
// Per-scene results
// ---------------------------------------------------------------------------

inline nlohmann::json object_json(const depth::GroundedObject& g,
                                  std::optional<depth::ExclusionReason> reason) {
    return {{"label", g.raw_label},
            {"entity", g.match ? nlohmann::json(g.match->entity.value) : nlohmann::json(nullptr)},
            {"match_tier", g.match ? nlohmann::json(kg::to_string(g.match->tier)) : nlohmann::json(nullptr)},
            {"height_source", depth::to_string(g.height_source)},
            {"height_cm", g.resolved_height_cm},
            {"height_std_cm", g.height_std_cm ? nlohmann::json(*g.height_std_cm) : nlohmann::json(nullptr)},
            {"ratio", g.submerged_ratio},
            {"depth_cm", g.depth_cm},
            {"excluded", reason.has_value()},
            {"exclusion_reason", reason ? nlohmann::json(depth::to_string(*reason)) : nlohmann::json(nullptr)}};
}

inline std::string_view status_name(const depth::SceneEstimateOutcome& o) {
    if (o.estimate()) return "estimate";
    if (o.no_estimate()) return "no_estimate";
    return "failure";
}

inline nlohmann::json result_json(const depth::SceneEstimateOutcome& o,
                                  const std::optional<std::string>& id,
                                  const nlohmann::json& echo) {
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    if (id) j["id"] = *id;
    j["image"] = o.image;
    j["status"] = status_name(o);
    j["depth_min_cm"] = nullptr;
    j["depth_avg_cm"] = nullptr;
    j["depth_max_cm"] = nullptr;
    j["n_used"] = 0;

    std::vector<std::pair<std::size_t, nlohmann::json>> objects;
    if (const auto* est = o.estimate()) {
        j["depth_min_cm"] = est->depth_min_cm;
        j["depth_avg_cm"] = est->depth_avg_cm;
        j["depth_max_cm"] = est->depth_max_cm;
        j["n_used"] = est->n_used;
        for (const auto& g : est->retained) objects.emplace_back(g.index, object_json(g, std::nullopt));
        for (const auto& x : est->excluded) objects.emplace_back(x.object.index, object_json(x.object, x.reason));
    } else if (const auto* none = o.no_estimate()) {
        j["reason"] = none->reason;
        for (const auto& g : none->objects) objects.emplace_back(g.index, object_json(g, std::nullopt));
    } else if (const auto* fail = o.failure()) {
        j["error"] = fail->error;
        j["raw_response"] = fail->raw_response;
    }
    std::sort(objects.begin(), objects.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    j["objects"] = nlohmann::json::array();
    for (auto& [_, obj] : objects) j["objects"].push_back(std::move(obj));

    j["pending_entries"] = nlohmann::json::array();
    for (const auto& p : o.pending) j["pending_entries"].push_back({{"label", p.label}, {"height_cm", p.height_cm}});
    j["warnings"] = o.warnings;
    j["config"] = echo;
    return j;
}

/// Invalid UTF-8 in model output is replaced rather than rejected.
inline std::string dump(const nlohmann::json& j) {
    return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

// ---------------------------------------------------------------------------
// Single-image and batch runs
// ---------------------------------------------------------------------------

inline depth::SceneEstimateOutcome run_scene(const kg::KnowledgeGraph& graph,
                                             vlm::VlmBackend& backend, const AppConfig& config,
                                             const fs::path& image_path,
                                             const std::string& display_path,
                                             const vlm::PromptSpec& prompt) {
    vlm::ImagePayload image;
    try {
        image = vlm::load_image(image_path);
    } catch (const std::exception& e) {
        return {display_path, depth::SceneFailure{e.what(), ""}, {}, {}};
    }
    image.source_path = display_path;
    return depth::estimate_scene(graph, backend, vlm::model_id(config.backend), image, prompt,
                                 config.filter);
}

/// Runs `task(i)` for i in [0, n) on `parallelism` worker threads.
template <typename Task>
void parallel_for(std::size_t n, int parallelism, Task&& task) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, parallelism)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i, 0);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = next++; i < n; i = next++) task(i, w);
        });
    }
    for (auto& t : pool) t.join();
}

inline void check_record_ids(const std::vector<eval::ManifestRecord>& records) {
    for (const auto& r : records) {
        if (r.id.find_first_of("/\\") != std::string::npos || r.id.front() == '.' ||
            r.id + ".json" == kSummaryFile) {
            throw UsageError("manifest id '" + r.id + "' cannot be used as a result file name");
        }
    }
}

struct BatchSummary {
    std::size_t n_images = 0;
    std::size_t n_estimate = 0;
    std::size_t n_no_estimate = 0;
    std::size_t n_failure = 0;
    std::size_t pending_applied = 0;
    std::size_t pending_skipped = 0;
};

using BackendFactory = std::function<std::unique_ptr<vlm::VlmBackend>(const vlm::BackendConfig&)>;

struct BatchOptions {
    bool apply_pending = false;
    bool baseline = false;  // KG-free single-depth prompt
    BackendFactory backend_factory = [](const vlm::BackendConfig& c) { return vlm::make_backend(c); };
};

namespace detail {

inline nlohmann::json baseline_json(const eval::ManifestRecord& r, const std::string& status,
                                    std::optional<double> depth, const std::string& error,
                                    const std::string& raw, const nlohmann::json& echo) {
    nlohmann::json j{{"tool_version", kToolVersion}, {"id", r.id}, {"image", r.image_path},
                     {"status", status}, {"depth_cm", depth ? nlohmann::json(*depth) : nlohmann::json(nullptr)},
                     {"config", echo}};
    if (!error.empty()) {
        j["error"] = error;
        j["raw_response"] = raw;
    }
    return j;
}

inline nlohmann::json run_baseline_scene(vlm::VlmBackend& backend, const eval::ManifestRecord& r,
                                         const fs::path& image_path, const nlohmann::json& echo,
                                         const vlm::PromptSpec& prompt) {
    vlm::ImagePayload image;
    try {
        image = vlm::load_image(image_path);
    } catch (const std::exception& e) {
        return baseline_json(r, "failure", std::nullopt, e.what(), "", echo);
    }
    image.source_path = r.image_path;
    std::string raw;
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            raw = backend.complete(image, prompt);
        } catch (const std::exception& e) {
            return baseline_json(r, "failure", std::nullopt, e.what(), raw, echo);
        }
        try {
            return baseline_json(r, "estimate", vlm::parse_baseline_reply(raw), "", "", echo);
        } catch (const vlm::ReplyError& e) {
            if (attempt == 1) return baseline_json(r, "failure", std::nullopt, e.what(), raw, echo);
        }
    }
    return baseline_json(r, "failure", std::nullopt, "unreachable", raw, echo);
}

}  // namespace detail

/// Processes every manifest record, writes `<output_dir>/<id>.json` plus a
/// batch summary, and optionally folds pending entries back into the KG file.
inline BatchSummary run_batch(const AppConfig& config, const fs::path& manifest_path,
                              const BatchOptions& options = {}) {
    std::string manifest_text;
    try {
        manifest_text = vlm::read_file(manifest_path);
    } catch (const std::exception&) {
        throw UsageError("cannot read manifest " + manifest_path.string());
    }
    std::vector<eval::ManifestRecord> records;
    try {
        records = eval::load_manifest(manifest_text);
    } catch (const eval::ManifestError& e) {
        throw UsageError(manifest_path.string() + ": " + e.what());
    }
    check_record_ids(records);
    if (config.output_dir.empty()) throw UsageError("no output directory configured (output_dir / --out)");

    const kg::KnowledgeGraph graph = read_kg(config.kg_path);
    const nlohmann::json echo = config_echo(config);
    const fs::path base = manifest_path.parent_path();
    const vlm::PromptSpec prompt = options.baseline ? vlm::build_baseline_prompt() : vlm::build_prompt();

    std::vector<std::unique_ptr<vlm::VlmBackend>> backends;
    for (int i = 0; i < config.parallelism(); ++i) backends.push_back(options.backend_factory(config.backend));

    std::vector<nlohmann::json> results(records.size());
    std::vector<std::vector<depth::PendingEvent>> pending(records.size());
    parallel_for(records.size(), config.parallelism(), [&](std::size_t i, std::size_t worker) {
        const auto& r = records[i];
        const fs::path image_path = detail::resolve(base, r.image_path);
        if (options.baseline) {
            results[i] = detail::run_baseline_scene(*backends[worker], r, image_path, echo, prompt);
            return;
        }
        auto outcome = run_scene(graph, *backends[worker], config, image_path, r.image_path, prompt);
        pending[i] = outcome.pending;
        results[i] = result_json(outcome, r.id, echo);
    });

    BatchSummary summary;
    summary.n_images = records.size();
    nlohmann::json scenes = nlohmann::json::array();
    const fs::path out_dir = config.output_dir;
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string status = results[i].at("status").get<std::string>();
        if (status == "estimate") ++summary.n_estimate;
        else if (status == "no_estimate") ++summary.n_no_estimate;
        else ++summary.n_failure;
        const std::string file = records[i].id + ".json";
        write_file_atomic(out_dir / file, dump(results[i]));
        scenes.push_back({{"id", records[i].id}, {"status", status}, {"file", file}});
    }

    if (options.apply_pending) {
        kg::KnowledgeGraph updated = graph;
        for (const auto& events : pending) {
            for (const auto& ev : events) {
                try {
                    updated = kg::add_pending(std::move(updated), ev.label, ev.height_cm);
                    ++summary.pending_applied;
                } catch (const kg::PreconditionError&) {
                    ++summary.pending_skipped;
                }
            }
        }
        if (auto report = kg::validate(updated); !report.empty()) {
            throw kg::KgValidationError(std::move(report));
        }
        write_file_atomic(config.kg_path, kg::save_kg(updated));
    }

    nlohmann::json s{{"tool_version", kToolVersion},
                     {"mode", options.baseline ? "baseline" : "grounded"},
                     {"n_images", summary.n_images},
                     {"n_estimate", summary.n_estimate},
                     {"n_no_estimate", summary.n_no_estimate},
                     {"n_failure", summary.n_failure},
                     {"apply_pending", options.apply_pending},
                     {"pending_applied", summary.pending_applied},
                     {"pending_skipped", summary.pending_skipped},
                     {"scenes", scenes},
                     {"config", echo}};
    write_file_atomic(out_dir / kSummaryFile, dump(s));
    return summary;
}

// ---------------------------------------------------------------------------
// Evaluation I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<nlohmann::json> read_result_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw UsageError("results directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto& p = entry.path();
        if (entry.is_regular_file() && p.extension() == ".json" && p.filename() != kSummaryFile) {
            files.push_back(p);
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<nlohmann::json> out;
    for (const auto& p : files) {
        try {
            auto j = nlohmann::json::parse(vlm::read_file(p));
            if (!j.contains("id") || !j.contains("status")) {
                throw UsageError(p.string() + ": missing 'id' or 'status'");
            }
            out.push_back(std::move(j));
        } catch (const nlohmann::json::exception& e) {
            throw UsageError(p.string() + ": " + e.what());
        }
    }
    return out;
}

inline std::optional<double> opt_number(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
}

}  // namespace detail

inline eval::OutcomeMap read_outcomes(const fs::path& dir) {
    eval::OutcomeMap out;
    for (const auto& j : detail::read_result_dir(dir)) {
        std::optional<eval::DepthTriple> t;
        if (j.at("status") == "estimate") {
            auto mn = detail::opt_number(j, "depth_min_cm");
            auto av = detail::opt_number(j, "depth_avg_cm");
            auto mx = detail::opt_number(j, "depth_max_cm");
            if (mn && av && mx) t = eval::DepthTriple{*mn, *av, *mx};
        }
        out[j.at("id").get<std::string>()] = t;
    }
    return out;
}

inline eval::BaselineMap read_baseline(const fs::path& dir) {
    eval::BaselineMap out;
    for (const auto& j : detail::read_result_dir(dir)) {
        std::optional<double> d;
        if (j.at("status") == "estimate") d = detail::opt_number(j, "depth_cm");
        out[j.at("id").get<std::string>()] = d;
    }
    return out;
}

inline eval::MetricsReport run_evaluation(const fs::path& manifest_path, const fs::path& results_dir,
                                          const std::optional<fs::path>& baseline_dir,
                                          const fs::path& out_dir) {
    std::vector<eval::ManifestRecord> records;
    try {
        records = eval::load_manifest(vlm::read_file(manifest_path));
    } catch (const eval::ManifestError& e) {
        throw UsageError(manifest_path.string() + ": " + e.what());
    } catch (const std::runtime_error&) {
        throw UsageError("cannot read manifest " + manifest_path.string());
    }
    const auto outcomes = read_outcomes(results_dir);
    std::optional<eval::BaselineMap> baseline;
    if (baseline_dir) baseline = read_baseline(*baseline_dir);
    eval::MetricsReport report;
    try {
        report = eval::evaluate(records, outcomes, baseline);
    } catch (const eval::ManifestError& e) {
        throw UsageError(e.what());
    }
    const auto exported = eval::export_report(report);
    write_file_atomic(out_dir / "metrics.json", exported.metrics_json);
    write_file_atomic(out_dir / "residuals.csv", exported.residuals_csv);
    return report;
}

}  // namespace floodvision::app
