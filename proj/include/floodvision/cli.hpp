#pragma once

// `floodvision` command-line entry point. Exit codes: 0 success, 1 runtime
// failure, 2 validation or usage error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "floodvision/app.hpp"
#include "floodvision/sim.hpp"

namespace floodvision::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace fs = std::filesystem;

/// Flags that override config-file keys.
struct Overrides {
    std::string config_path;
    std::string kg_path;
    std::string output_dir;
    std::string backend_kind;
    std::string base_url;
    std::string model_name;
    std::string fixture_dir;
    std::optional<int> parallelism;
    std::optional<int> max_retries;
    std::optional<double> timeout_s;

    void attach(CLI::App& cmd, bool with_output) {
        cmd.add_option("--config", config_path, "JSON config file");
        cmd.add_option("--kg", kg_path, "knowledge graph file (overrides kg_path)");
        if (with_output) cmd.add_option("--out", output_dir, "output directory (overrides output_dir)");
        cmd.add_option("--backend", backend_kind, "backend kind: mock or http");
        cmd.add_option("--base-url", base_url, "chat-completions base URL");
        cmd.add_option("--model", model_name, "model name for the http backend");
        cmd.add_option("--fixture-dir", fixture_dir, "mock reply directory");
        cmd.add_option("--parallelism", parallelism, "concurrent scenes");
        cmd.add_option("--max-retries", max_retries, "transport retries per request");
        cmd.add_option("--timeout", timeout_s, "request timeout in seconds");
    }

    app::AppConfig resolve() const {
        app::AppConfig c;
        if (!config_path.empty()) c = app::load_config(config_path);
        if (!kg_path.empty()) c.kg_path = kg_path;
        if (!output_dir.empty()) c.output_dir = output_dir;
        if (!backend_kind.empty()) c.backend.kind = app::parse_backend_kind(backend_kind);
        if (!base_url.empty()) c.backend.base_url = base_url;
        if (!model_name.empty()) c.backend.model_name = model_name;
        if (!fixture_dir.empty()) c.backend.fixture_dir = fixture_dir;
        if (parallelism) c.backend.parallelism = *parallelism;
        if (max_retries) c.backend.max_retries = *max_retries;
        if (timeout_s) c.backend.timeout_s = *timeout_s;
        if (c.kg_path.empty()) throw app::UsageError("no knowledge graph given (kg_path / --kg)");
        app::finalize_config(c);
        return c;
    }
};

inline int cmd_kg_validate(const std::string& path, std::ostream& out, std::ostream& err) {
    try {
        const auto graph = app::read_kg(path);
        out << path << ": valid (" << graph.entities.size() << " entities, "
            << graph.relations.size() << " relations)\n";
        return kExitOk;
    } catch (const kg::KgValidationError& e) {
        err << path << ": " << e.report().size() << " violation(s)\n" << kg::describe(e.report());
    } catch (const kg::KgParseError& e) {
        err << path << ": " << e.what() << "\n";
    } catch (const app::UsageError& e) {
        err << e.what() << "\n";
    }
    return kExitUsage;
}

inline int cmd_kg_show(const std::string& path, const std::string& id, std::ostream& out) {
    const auto graph = app::read_kg(path);
    const kg::EntityId key{id};
    const kg::KgEntity* e = graph.find(key);
    if (!e) throw app::UsageError("unknown entity '" + id + "' in " + path);
    auto doc = kg::to_json(graph);
    nlohmann::json entity;
    for (const auto& j : doc["entities"]) {
        if (j["id"] == id) entity = j;
    }
    nlohmann::json relations = nlohmann::json::array();
    for (const auto& r : graph.relations) {
        if (r.subject == key || r.object == key) {
            relations.push_back({{"subject", r.subject.value},
                                 {"predicate", kg::to_string(r.predicate)},
                                 {"object", r.object.value}});
        }
    }
    out << app::dump({{"entity", entity}, {"relations", relations}});
    return kExitOk;
}

inline int cmd_estimate(const Overrides& o, const std::string& image, std::ostream& out) {
    const auto config = o.resolve();
    const auto graph = app::read_kg(config.kg_path);
    auto backend = vlm::make_backend(config.backend);
    const auto outcome =
        app::run_scene(graph, *backend, config, image, image, vlm::build_prompt());
    out << app::dump(app::result_json(outcome, std::nullopt, app::config_echo(config)));
    return outcome.failure() ? kExitFailure : kExitOk;
}

inline int cmd_batch(const Overrides& o, const std::string& manifest, bool apply_pending,
                     bool baseline, std::ostream& out) {
    const auto config = o.resolve();
    app::BatchOptions options;
    options.apply_pending = apply_pending;
    options.baseline = baseline;
    const auto s = app::run_batch(config, manifest, options);
    out << "processed " << s.n_images << " images: " << s.n_estimate << " estimate, "
        << s.n_no_estimate << " no_estimate, " << s.n_failure << " failure\n";
    if (apply_pending) {
        out << "pending entries applied: " << s.pending_applied << " (skipped " << s.pending_skipped
            << ")\n";
    }
    out << "results written to " << config.output_dir << "\n";
    return kExitOk;
}

inline int cmd_evaluate(const std::string& manifest, const std::string& results,
                        const std::string& baseline, const std::string& out_dir,
                        std::ostream& out) {
    std::optional<fs::path> baseline_dir;
    if (!baseline.empty()) baseline_dir = baseline;
    const auto report = app::run_evaluation(manifest, results, baseline_dir, out_dir);
    for (const auto& [variant, m] : report.variants) {
        out << eval::to_string(variant) << ": mae_cm="
            << (m.mae_cm ? eval::format_number(*m.mae_cm) : "n/a")
            << " pearson_r=" << (m.pearson_r ? eval::format_number(*m.pearson_r) : "n/a")
            << " n_scored=" << m.n_scored << " n_failed=" << m.n_failed << "\n";
    }
    return kExitOk;
}

struct SimulateFlags {
    std::string kg_path;
    std::uint64_t seed = 42;
    std::int64_t n = 1000;
    double sigma_h = 0.3;
    double sigma_r = 0.05;
    double mislabel = 0.1;
    double depth_min = 5.0;
    double depth_max = 80.0;
    std::string out_path;
};

inline int cmd_simulate(const SimulateFlags& f, std::ostream& out) {
    const auto graph = app::read_kg(f.kg_path);
    sim::SimConfig config{f.seed, f.n, f.depth_min, f.depth_max};
    sim::NoiseModel noise{f.sigma_h, f.sigma_r, f.mislabel};
    try {
        config.validate();
        noise.validate();
    } catch (const std::invalid_argument& e) {
        throw app::UsageError(e.what());
    }
    const auto report = sim::run_study(graph, config, noise);
    auto j = sim::to_json(report, config, noise);
    j["tool_version"] = app::kToolVersion;
    j["config"]["kg_path"] = f.kg_path;
    const std::string text = app::dump(j);
    if (f.out_path.empty()) {
        out << text;
    } else {
        app::write_file_atomic(f.out_path, text);
        out << "mae_grounded_cm=" << eval::format_number(report.mae_grounded_cm)
            << " mae_baseline_cm=" << eval::format_number(report.mae_baseline_cm) << "\n";
    }
    return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App root{"Flood depth estimation from street images with a reference-object knowledge graph"};
    root.require_subcommand(1);
    root.set_version_flag("--version", std::string(app::kToolVersion));

    Overrides estimate_opts;
    std::string image;
    auto* estimate = root.add_subcommand("estimate", "estimate flood depth for one image");
    estimate->add_option("--image", image, "image file (JPEG or PNG)")->required();
    estimate_opts.attach(*estimate, false);

    Overrides batch_opts;
    std::string manifest;
    bool apply_pending = false;
    bool baseline = false;
    auto* batch = root.add_subcommand("batch", "estimate every image listed in a manifest");
    batch->add_option("--manifest", manifest, "CSV manifest id,image_path,ground_truth_cm[,lat,lon]")
        ->required();
    batch->add_flag("--apply-pending", apply_pending, "write provisional heights back to the KG file");
    batch->add_flag("--baseline", baseline, "KG-free single-depth prompt instead of the grounded pipeline");
    batch_opts.attach(*batch, true);

    auto* kg_cmd = root.add_subcommand("kg", "knowledge graph curation");
    kg_cmd->require_subcommand(1);
    std::string kg_path, kg_id;
    auto* validate = kg_cmd->add_subcommand("validate", "check a KG file");
    validate->add_option("path", kg_path, "KG file")->required();
    auto* show = kg_cmd->add_subcommand("show", "print one entity and its relations");
    show->add_option("id", kg_id, "entity id")->required();
    show->add_option("--kg", kg_path, "KG file")->required();

    std::string eval_manifest, eval_results, eval_baseline, eval_out;
    auto* evaluate = root.add_subcommand("evaluate", "score batch results against ground truth");
    evaluate->add_option("--manifest", eval_manifest, "CSV manifest")->required();
    evaluate->add_option("--results", eval_results, "batch output directory")->required();
    evaluate->add_option("--baseline", eval_baseline, "baseline batch output directory");
    evaluate->add_option("--out", eval_out, "report directory")->required();

    SimulateFlags sim_flags;
    auto* simulate = root.add_subcommand("simulate", "run the synthetic grounding study");
    simulate->add_option("--kg", sim_flags.kg_path, "KG file")->required();
    simulate->add_option("--seed", sim_flags.seed, "random seed");
    simulate->add_option("--n", sim_flags.n, "number of scenes");
    simulate->add_option("--sigma-h", sim_flags.sigma_h, "log-scale sd of height hallucination");
    simulate->add_option("--sigma-r", sim_flags.sigma_r, "sd of submerged-ratio noise");
    simulate->add_option("--mislabel", sim_flags.mislabel, "probability a label cannot be matched");
    simulate->add_option("--depth-min", sim_flags.depth_min, "minimum true depth in cm");
    simulate->add_option("--depth-max", sim_flags.depth_max, "maximum true depth in cm");
    simulate->add_option("--out", sim_flags.out_path, "report file (stdout when omitted)");

    try {
        root.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        root.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForVersion& e) {
        root.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        root.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*estimate) return cmd_estimate(estimate_opts, image, out);
        if (*batch) return cmd_batch(batch_opts, manifest, apply_pending, baseline, out);
        if (*validate) return cmd_kg_validate(kg_path, out, err);
        if (*show) return cmd_kg_show(kg_path, kg_id, out);
        if (*evaluate) return cmd_evaluate(eval_manifest, eval_results, eval_baseline, eval_out, out);
        if (*simulate) return cmd_simulate(sim_flags, out);
    } catch (const app::UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kg::KgValidationError& e) {
        err << "error: " << e.what();
        return kExitUsage;
    } catch (const kg::KgParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace floodvision::cli
