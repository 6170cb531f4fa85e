#pragma once

// Ground-truth manifests, accuracy metrics and plot-ready report exports.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

namespace floodvision::eval {

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ManifestRecord {
    std::string id;
    std::string image_path;
    double ground_truth_cm = 0.0;
    std::optional<double> latitude;
    std::optional<double> longitude;

    bool operator==(const ManifestRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Number formatting / parsing
// ---------------------------------------------------------------------------

/// Shortest representation that round-trips.
inline std::string format_number(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Splits one CSV line; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back().push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back().push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else if (c != '\r') {
            fields.back().push_back(c);
        }
    }
    return fields;
}

inline std::vector<ManifestRecord> load_manifest(std::string_view csv) {
    std::vector<std::string> lines;
    {
        std::string cur;
        for (char c : csv) {
            if (c == '\n') lines.push_back(std::move(cur)), cur.clear();
            else cur.push_back(c);
        }
        if (!cur.empty()) lines.push_back(std::move(cur));
    }
    if (lines.empty()) throw ManifestError("manifest is empty; expected header id,image_path,ground_truth_cm[,lat,lon]");

    const auto header = split_csv_line(lines.front());
    const std::vector<std::string> base{"id", "image_path", "ground_truth_cm"};
    const std::vector<std::string> geo{"id", "image_path", "ground_truth_cm", "lat", "lon"};
    if (header != base && header != geo) {
        throw ManifestError("manifest header must be id,image_path,ground_truth_cm[,lat,lon]; got '" +
                            lines.front() + "'");
    }
    const bool has_geo = header.size() == 5;

    std::vector<ManifestRecord> records;
    std::set<std::string> seen;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = "manifest line " + std::to_string(i + 1);
        if (lines[i].find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = split_csv_line(lines[i]);
        if (f.size() != header.size()) {
            throw ManifestError(where + ": expected " + std::to_string(header.size()) +
                                " fields, got " + std::to_string(f.size()));
        }
        ManifestRecord r;
        r.id = f[0];
        r.image_path = f[1];
        if (r.id.empty()) throw ManifestError(where + ": empty id");
        if (r.image_path.empty()) throw ManifestError(where + ": empty image_path");
        auto gt = parse_number(f[2]);
        if (!gt) throw ManifestError(where + ": unparseable ground_truth_cm '" + f[2] + "'");
        if (*gt < 0.0) throw ManifestError(where + ": negative ground_truth_cm '" + f[2] + "'");
        r.ground_truth_cm = *gt;
        if (has_geo) {
            for (int k : {3, 4}) {
                if (f[k].empty()) continue;
                auto v = parse_number(f[k]);
                if (!v) throw ManifestError(where + ": unparseable " + header[k] + " '" + f[k] + "'");
                (k == 3 ? r.latitude : r.longitude) = *v;
            }
        }
        if (!seen.insert(r.id).second) throw ManifestError(where + ": duplicate id '" + r.id + "'");
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double mae(const std::vector<double>& predicted, const std::vector<double>& truth) {
    if (predicted.size() != truth.size()) throw MetricError("mae: length mismatch");
    if (predicted.empty()) throw MetricError("mae: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - truth[i]);
    return sum / static_cast<double>(predicted.size());
}

/// Sample Pearson correlation; absent when fewer than two points or either
/// variance is zero.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw MetricError("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class Variant { min, avg, max, baseline };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::min: return "min";
        case Variant::avg: return "avg";
        case Variant::max: return "max";
        case Variant::baseline: return "baseline";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    for (Variant v : {Variant::min, Variant::avg, Variant::max, Variant::baseline}) {
        if (to_string(v) == s) return v;
    }
    return std::nullopt;
}

/// The min/avg/max triple of a scene with an estimate.
struct DepthTriple {
    double min_cm = 0.0;
    double avg_cm = 0.0;
    double max_cm = 0.0;
};

/// Per manifest id: the triple, or nullopt for no_estimate / failure.
using OutcomeMap = std::map<std::string, std::optional<DepthTriple>>;
using BaselineMap = std::map<std::string, std::optional<double>>;

struct VariantMetrics {
    std::optional<double> mae_cm;
    std::optional<double> pearson_r;
    std::size_t n_scored = 0;
    std::size_t n_failed = 0;

    bool operator==(const VariantMetrics&) const = default;
};

struct Residual {
    std::string id;
    Variant variant = Variant::avg;
    double predicted_cm = 0.0;
    double truth_cm = 0.0;
    double error_cm = 0.0;

    bool operator==(const Residual&) const = default;
};

struct MetricsReport {
    std::size_t n_records = 0;
    std::map<Variant, VariantMetrics> variants;
    std::vector<Residual> residuals;

    bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport evaluate(const std::vector<ManifestRecord>& manifest,
                              const OutcomeMap& outcomes,
                              const std::optional<BaselineMap>& baseline = std::nullopt) {
    std::set<std::string> ids;
    for (const auto& r : manifest) ids.insert(r.id);
    for (const auto& [id, _] : outcomes) {
        if (!ids.contains(id)) throw ManifestError("outcome for unknown manifest id '" + id + "'");
    }
    if (baseline) {
        for (const auto& [id, _] : *baseline) {
            if (!ids.contains(id)) throw ManifestError("baseline for unknown manifest id '" + id + "'");
        }
    }

    MetricsReport report;
    report.n_records = manifest.size();

    std::vector<Variant> variants{Variant::min, Variant::avg, Variant::max};
    if (baseline) variants.push_back(Variant::baseline);

    for (Variant v : variants) {
        std::vector<double> predicted, truth;
        VariantMetrics m;
        for (const auto& r : manifest) {
            std::optional<double> p;
            if (v == Variant::baseline) {
                if (auto it = baseline->find(r.id); it != baseline->end()) p = it->second;
            } else if (auto it = outcomes.find(r.id); it != outcomes.end() && it->second) {
                const auto& t = *it->second;
                p = v == Variant::min ? t.min_cm : v == Variant::avg ? t.avg_cm : t.max_cm;
            }
            if (!p) {
                ++m.n_failed;
                continue;
            }
            predicted.push_back(*p);
            truth.push_back(r.ground_truth_cm);
            report.residuals.push_back({r.id, v, *p, r.ground_truth_cm, *p - r.ground_truth_cm});
        }
        m.n_scored = predicted.size();
        if (!predicted.empty()) m.mae_cm = mae(predicted, truth);
        m.pearson_r = pearson(predicted, truth);
        report.variants[v] = m;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json variants = nlohmann::json::object();
    for (const auto& [v, m] : r.variants) {
        variants[std::string(to_string(v))] = {{"mae_cm", optional_json(m.mae_cm)},
                                               {"pearson_r", optional_json(m.pearson_r)},
                                               {"n_scored", m.n_scored},
                                               {"n_failed", m.n_failed}};
    }
    nlohmann::json residuals = nlohmann::json::array();
    for (const auto& x : r.residuals) {
        residuals.push_back({{"id", x.id},
                             {"variant", to_string(x.variant)},
                             {"predicted_cm", x.predicted_cm},
                             {"truth_cm", x.truth_cm},
                             {"error_cm", x.error_cm}});
    }
    return {{"n_records", r.n_records}, {"variants", variants}, {"residuals", residuals}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
    auto opt = [](const nlohmann::json& v) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    MetricsReport r;
    r.n_records = j.at("n_records").get<std::size_t>();
    for (const auto& [name, m] : j.at("variants").items()) {
        auto v = parse_variant(name);
        if (!v) throw std::invalid_argument("unknown variant '" + name + "'");
        r.variants[*v] = {opt(m.at("mae_cm")), opt(m.at("pearson_r")),
                          m.at("n_scored").get<std::size_t>(), m.at("n_failed").get<std::size_t>()};
    }
    for (const auto& x : j.at("residuals")) {
        auto v = parse_variant(x.at("variant").get<std::string>());
        if (!v) throw std::invalid_argument("unknown residual variant");
        r.residuals.push_back({x.at("id").get<std::string>(), *v, x.at("predicted_cm").get<double>(),
                               x.at("truth_cm").get<double>(), x.at("error_cm").get<double>()});
    }
    return r;
}

struct ReportExport {
    std::string metrics_json;
    std::string residuals_csv;
};

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

inline ReportExport export_report(const MetricsReport& r) {
    ReportExport out;
    out.metrics_json = to_json(r).dump(2) + "\n";
    std::ostringstream csv;
    csv << "id,variant,predicted_cm,truth_cm,error_cm\n";
    for (const auto& x : r.residuals) {
        csv << csv_field(x.id) << ',' << to_string(x.variant) << ',' << format_number(x.predicted_cm)
            << ',' << format_number(x.truth_cm) << ',' << format_number(x.error_cm) << '\n';
    }
    out.residuals_csv = csv.str();
    return out;
}

}  // namespace floodvision::eval
