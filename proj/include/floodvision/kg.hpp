#pragma once

// Flood-scene knowledge graph: canonical reference-object heights plus
// subClassOf / partOf relations used for curation and consistency checks.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace floodvision::kg {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class KgParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Violation {
    std::string rule;     // e.g. "cycle", "duplicate alias"
    std::string subject;  // entity id or relation triple
    std::string detail;

    bool operator==(const Violation&) const = default;
};

using ValidationReport = std::vector<Violation>;

inline std::string describe(const ValidationReport& report) {
    std::ostringstream os;
    for (const auto& v : report) {
        os << v.rule << ": " << v.subject;
        if (!v.detail.empty()) os << " (" << v.detail << ")";
        os << "\n";
    }
    return os.str();
}

class KgValidationError : public std::runtime_error {
public:
    explicit KgValidationError(ValidationReport report)
        : std::runtime_error("knowledge graph validation failed:\n" + describe(report)),
          report_(std::move(report)) {}

    const ValidationReport& report() const noexcept { return report_; }

private:
    ValidationReport report_;
};

class UnknownEntityError : public std::runtime_error {
public:
    explicit UnknownEntityError(const std::string& id)
        : std::runtime_error("unknown entity: " + id) {}
};

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Stable key of a graph node. Format is `[a-z0-9]+(_[a-z0-9]+)*`; the type
/// does not enforce it so that malformed graphs can still be reported on.
struct EntityId {
    std::string value;

    EntityId() = default;
    explicit EntityId(std::string v) : value(std::move(v)) {}

    auto operator<=>(const EntityId&) const = default;
    bool operator==(const EntityId&) const = default;
};

inline bool is_valid_entity_id(std::string_view s) {
    if (s.empty()) return false;
    bool prev_underscore = true;  // disallows a leading underscore
    for (char c : s) {
        if (c == '_') {
            if (prev_underscore) return false;
            prev_underscore = true;
        } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            prev_underscore = false;
        } else {
            return false;
        }
    }
    return !prev_underscore;
}

enum class EntityStatus { canonical, pending };

struct KgEntity {
    EntityId id;
    std::string label;
    std::vector<std::string> aliases;
    double height_mean_cm = 0.0;
    double height_std_cm = 0.0;
    std::optional<EntityId> category;
    std::string source;
    EntityStatus status = EntityStatus::canonical;
    std::int64_t observation_count = 1;

    bool operator==(const KgEntity&) const = default;
};

enum class Predicate { sub_class_of, part_of };

inline std::string_view to_string(Predicate p) {
    return p == Predicate::sub_class_of ? "subClassOf" : "partOf";
}

inline std::string_view to_string(EntityStatus s) {
    return s == EntityStatus::canonical ? "canonical" : "pending";
}

struct KgRelation {
    EntityId subject;
    Predicate predicate = Predicate::sub_class_of;
    EntityId object;

    auto operator<=>(const KgRelation&) const = default;
    bool operator==(const KgRelation&) const = default;
};

inline std::string describe(const KgRelation& r) {
    return r.subject.value + " " + std::string(to_string(r.predicate)) + " " + r.object.value;
}

inline const std::vector<std::string>& default_qualifier_lexicon() {
    static const std::vector<std::string> lexicon = {
        "front", "rear",   "back",    "left",   "right",      "near",
        "far",   "nearest", "farthest", "first", "second",    "third",
        "foreground", "background", "partially", "visible"};
    return lexicon;
}

struct KnowledgeGraph {
    std::string version = "1";
    std::vector<std::string> qualifier_lexicon = default_qualifier_lexicon();
    std::map<EntityId, KgEntity> entities;
    std::set<KgRelation> relations;

    const KgEntity* find(const EntityId& id) const {
        auto it = entities.find(id);
        return it == entities.end() ? nullptr : &it->second;
    }

    bool operator==(const KnowledgeGraph&) const = default;
};

enum class MatchTier { exact_id = 0, exact_alias = 1, qualifier_stripped = 2, token_subset = 3 };

inline std::string_view to_string(MatchTier t) {
    switch (t) {
        case MatchTier::exact_id: return "exact_id";
        case MatchTier::exact_alias: return "exact_alias";
        case MatchTier::qualifier_stripped: return "qualifier_stripped";
        case MatchTier::token_subset: return "token_subset";
    }
    return "?";
}

struct MatchResult {
    EntityId entity;
    MatchTier tier = MatchTier::exact_id;
    std::string matched_text;

    bool operator==(const MatchResult&) const = default;
};

struct HeightStats {
    double mean_cm = 0.0;
    double std_cm = 0.0;
};

// ---------------------------------------------------------------------------
// Label normalization
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens, char sep = ' ') {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(sep);
        out += tokens[i];
    }
    return out;
}

/// Lowercases, maps every non-alphanumeric byte (punctuation, underscores,
/// whitespace, non-ASCII) to a separator and collapses separators to single
/// spaces. Qualifiers are kept.
inline std::string normalize_label(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (unsigned char c : raw) {
        if (std::isalnum(c) && c < 0x80) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

inline bool is_qualifier(const std::string& token, const std::vector<std::string>& lexicon) {
    return std::find(lexicon.begin(), lexicon.end(), token) != lexicon.end();
}

inline std::string canonicalize(std::string_view raw_label,
                                const std::vector<std::string>& lexicon) {
    auto tokens = split_tokens(normalize_label(raw_label));
    std::erase_if(tokens, [&](const std::string& t) { return is_qualifier(t, lexicon); });
    return join_tokens(tokens);
}

inline std::string canonicalize(std::string_view raw_label) {
    return canonicalize(raw_label, default_qualifier_lexicon());
}

inline std::string id_to_text(const EntityId& id) {
    std::string s = id.value;
    std::replace(s.begin(), s.end(), '_', ' ');
    return s;
}

inline EntityId text_to_id(std::string_view canonical_text) {
    std::string s(canonical_text);
    std::replace(s.begin(), s.end(), ' ', '_');
    return EntityId{std::move(s)};
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

// Reports one violation per back edge found by an iterative DFS.
inline void find_cycles(const std::map<EntityId, std::vector<EntityId>>& adjacency,
                        Predicate predicate, ValidationReport& report) {
    enum class Mark { white, grey, black };
    std::map<EntityId, Mark> mark;
    for (const auto& [node, _] : adjacency) mark[node] = Mark::white;

    for (const auto& [root, _] : adjacency) {
        if (mark[root] != Mark::white) continue;
        // Stack of (node, next child index).
        std::vector<std::pair<EntityId, std::size_t>> stack{{root, 0}};
        mark[root] = Mark::grey;
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            auto it = adjacency.find(node);
            if (it == adjacency.end() || idx >= it->second.size()) {
                mark[node] = Mark::black;
                stack.pop_back();
                continue;
            }
            const EntityId next = it->second[idx++];
            auto& m = mark[next];
            if (m == Mark::grey) {
                std::string path;
                bool on_cycle = false;
                for (const auto& [n, _i] : stack) {
                    if (n == next) on_cycle = true;
                    if (on_cycle) path += n.value + " -> ";
                }
                path += next.value;
                report.push_back({"cycle", std::string(to_string(predicate)), path});
            } else if (m == Mark::white) {
                m = Mark::grey;
                stack.emplace_back(next, 0);
            }
        }
    }
}

}  // namespace detail

inline ValidationReport validate(const KnowledgeGraph& kg) {
    ValidationReport report;

    std::map<std::string, EntityId> alias_owner;
    for (const auto& [key, e] : kg.entities) {
        if (e.id != key) {
            report.push_back({"id mismatch", key.value, "entity stores id " + e.id.value});
        }
        if (!is_valid_entity_id(key.value)) {
            report.push_back({"invalid id", key.value, "must match [a-z0-9]+(_[a-z0-9]+)*"});
        }
        if (!(e.height_mean_cm > 0.0)) {
            std::ostringstream d;
            d << "height_mean_cm = " << e.height_mean_cm;
            report.push_back({"non-positive height", key.value, d.str()});
        }
        if (!(e.height_std_cm >= 0.0)) {
            std::ostringstream d;
            d << "height_std_cm = " << e.height_std_cm;
            report.push_back({"negative height std", key.value, d.str()});
        }
        if (e.observation_count < 1) {
            report.push_back({"invalid observation count", key.value,
                              std::to_string(e.observation_count)});
        }
        if (e.category && !kg.entities.contains(*e.category)) {
            report.push_back({"dangling category", key.value, e.category->value});
        }
        for (const auto& alias : e.aliases) {
            const std::string canon = canonicalize(alias, kg.qualifier_lexicon);
            if (canon.empty()) {
                report.push_back({"empty alias", key.value, "alias '" + alias + "'"});
                continue;
            }
            auto [it, inserted] = alias_owner.emplace(canon, key);
            if (!inserted) {
                report.push_back({"duplicate alias", key.value,
                                  "alias '" + canon + "' already claimed by " + it->second.value});
            }
        }
    }

    std::map<Predicate, std::map<EntityId, std::vector<EntityId>>> adjacency;
    for (const auto& r : kg.relations) {
        const bool subject_ok = kg.entities.contains(r.subject);
        const bool object_ok = kg.entities.contains(r.object);
        if (!subject_ok || !object_ok) {
            report.push_back({"dangling relation", describe(r),
                              !subject_ok ? "unknown subject" : "unknown object"});
            continue;
        }
        if (r.subject == r.object) {
            report.push_back({"self-relation", describe(r), ""});
            continue;
        }
        adjacency[r.predicate][r.subject].push_back(r.object);
    }
    for (const auto& [pred, adj] : adjacency) detail::find_cycles(adj, pred, report);

    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline void require_keys(const nlohmann::json& obj, std::string_view where,
                         std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw KgParseError(std::string(where) + ": expected an object");
    for (const auto& [k, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw KgParseError(std::string(where) + ": unknown field '" + k + "'");
        }
    }
}

inline const nlohmann::json& field(const nlohmann::json& obj, std::string_view where,
                                   const char* name) {
    auto it = obj.find(name);
    if (it == obj.end()) {
        throw KgParseError(std::string(where) + ": missing field '" + name + "'");
    }
    return *it;
}

inline std::string string_field(const nlohmann::json& obj, std::string_view where,
                                const char* name) {
    const auto& v = field(obj, where, name);
    if (!v.is_string()) throw KgParseError(std::string(where) + ": '" + name + "' must be a string");
    return v.get<std::string>();
}

inline double number_field(const nlohmann::json& obj, std::string_view where, const char* name) {
    const auto& v = field(obj, where, name);
    if (!v.is_number()) throw KgParseError(std::string(where) + ": '" + name + "' must be a number");
    return v.get<double>();
}

inline Predicate parse_predicate(const std::string& s, std::string_view where) {
    if (s == "subClassOf") return Predicate::sub_class_of;
    if (s == "partOf") return Predicate::part_of;
    throw KgParseError(std::string(where) + ": unknown predicate '" + s + "'");
}

inline EntityStatus parse_status(const std::string& s, std::string_view where) {
    if (s == "canonical") return EntityStatus::canonical;
    if (s == "pending") return EntityStatus::pending;
    throw KgParseError(std::string(where) + ": unknown status '" + s + "'");
}

}  // namespace detail

/// Parses and validates a KG document. Throws KgParseError for structural
/// problems and KgValidationError listing every violated invariant.
inline KnowledgeGraph load_kg(std::string_view document) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw KgParseError(std::string("malformed KG document: ") + e.what());
    }
    detail::require_keys(doc, "document",
                         {"version", "qualifier_lexicon", "entities", "relations"});

    KnowledgeGraph kg;
    kg.version = detail::string_field(doc, "document", "version");
    if (auto it = doc.find("qualifier_lexicon"); it != doc.end()) {
        if (!it->is_array()) throw KgParseError("document: 'qualifier_lexicon' must be an array");
        kg.qualifier_lexicon.clear();
        for (const auto& q : *it) {
            if (!q.is_string()) throw KgParseError("qualifier_lexicon: entries must be strings");
            kg.qualifier_lexicon.push_back(normalize_label(q.get<std::string>()));
        }
    }

    ValidationReport load_issues;
    const auto& entities = detail::field(doc, "document", "entities");
    if (!entities.is_array()) throw KgParseError("document: 'entities' must be an array");
    for (std::size_t i = 0; i < entities.size(); ++i) {
        const auto& j = entities[i];
        const std::string where = "entities[" + std::to_string(i) + "]";
        detail::require_keys(j, where,
                             {"id", "label", "aliases", "height_mean_cm", "height_std_cm",
                              "category", "source", "status", "observation_count"});
        KgEntity e;
        e.id = EntityId{detail::string_field(j, where, "id")};
        e.label = detail::string_field(j, where, "label");
        if (auto it = j.find("aliases"); it != j.end()) {
            if (!it->is_array()) throw KgParseError(where + ": 'aliases' must be an array");
            for (const auto& a : *it) {
                if (!a.is_string()) throw KgParseError(where + ": aliases must be strings");
                e.aliases.push_back(a.get<std::string>());
            }
        }
        e.height_mean_cm = detail::number_field(j, where, "height_mean_cm");
        e.height_std_cm = detail::number_field(j, where, "height_std_cm");
        if (auto it = j.find("category"); it != j.end() && !it->is_null()) {
            if (!it->is_string()) throw KgParseError(where + ": 'category' must be a string");
            e.category = EntityId{it->get<std::string>()};
        }
        e.source = j.contains("source") ? detail::string_field(j, where, "source") : "";
        e.status = j.contains("status")
                       ? detail::parse_status(detail::string_field(j, where, "status"), where)
                       : EntityStatus::canonical;
        if (auto it = j.find("observation_count"); it != j.end()) {
            if (!it->is_number_integer()) {
                throw KgParseError(where + ": 'observation_count' must be an integer");
            }
            e.observation_count = it->get<std::int64_t>();
        }
        const EntityId key = e.id;
        if (!kg.entities.emplace(key, std::move(e)).second) {
            load_issues.push_back({"duplicate id", key.value, where});
        }
    }

    const auto& relations = detail::field(doc, "document", "relations");
    if (!relations.is_array()) throw KgParseError("document: 'relations' must be an array");
    for (std::size_t i = 0; i < relations.size(); ++i) {
        const auto& j = relations[i];
        const std::string where = "relations[" + std::to_string(i) + "]";
        detail::require_keys(j, where, {"subject", "predicate", "object"});
        KgRelation r{EntityId{detail::string_field(j, where, "subject")},
                     detail::parse_predicate(detail::string_field(j, where, "predicate"), where),
                     EntityId{detail::string_field(j, where, "object")}};
        kg.relations.insert(std::move(r));
    }

    auto report = validate(kg);
    report.insert(report.begin(), load_issues.begin(), load_issues.end());
    if (!report.empty()) throw KgValidationError(std::move(report));
    return kg;
}

inline nlohmann::json to_json(const KnowledgeGraph& kg) {
    nlohmann::json doc;
    doc["version"] = kg.version;
    doc["qualifier_lexicon"] = kg.qualifier_lexicon;
    auto& entities = doc["entities"] = nlohmann::json::array();
    for (const auto& [id, e] : kg.entities) {
        nlohmann::json j;
        j["id"] = e.id.value;
        j["label"] = e.label;
        j["aliases"] = e.aliases;
        j["height_mean_cm"] = e.height_mean_cm;
        j["height_std_cm"] = e.height_std_cm;
        j["category"] = e.category ? nlohmann::json(e.category->value) : nlohmann::json(nullptr);
        j["source"] = e.source;
        j["status"] = to_string(e.status);
        j["observation_count"] = e.observation_count;
        entities.push_back(std::move(j));
    }
    auto& relations = doc["relations"] = nlohmann::json::array();
    for (const auto& r : kg.relations) {
        relations.push_back({{"subject", r.subject.value},
                             {"predicate", to_string(r.predicate)},
                             {"object", r.object.value}});
    }
    return doc;
}

/// Deterministic: entities ordered by id, relations by (subject, predicate,
/// object), object keys sorted.
inline std::string save_kg(const KnowledgeGraph& kg) { return to_json(kg).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

inline HeightStats lookup_height(const KnowledgeGraph& kg, const EntityId& id) {
    const KgEntity* e = kg.find(id);
    if (!e) throw UnknownEntityError(id.value);
    return {e->height_mean_cm, e->height_std_cm};
}

namespace detail {

struct MatchCandidate {
    const KgEntity* entity;
    std::string matched_text;
};

inline std::optional<MatchCandidate> match_exact_id(const KnowledgeGraph& kg,
                                                    const std::string& text,
                                                    EntityStatus status) {
    if (text.empty()) return std::nullopt;
    const KgEntity* e = kg.find(text_to_id(text));
    if (e && e->status == status) return MatchCandidate{e, text};
    return std::nullopt;
}

inline std::optional<MatchCandidate> match_exact_alias(const KnowledgeGraph& kg,
                                                       const std::string& text,
                                                       EntityStatus status) {
    if (text.empty()) return std::nullopt;
    for (const auto& [id, e] : kg.entities) {
        if (e.status != status) continue;
        for (const auto& alias : e.aliases) {
            if (canonicalize(alias, kg.qualifier_lexicon) == text) return MatchCandidate{&e, text};
        }
    }
    return std::nullopt;
}

// Candidate texts for the qualifier-stripped tier: drop qualifier tokens one
// at a time from the left, ending with the fully canonical form.
inline std::vector<std::string> progressive_strips(const std::string& normalized,
                                                   const std::vector<std::string>& lexicon) {
    std::vector<std::string> out;
    auto tokens = split_tokens(normalized);
    for (;;) {
        auto it = std::find_if(tokens.begin(), tokens.end(),
                               [&](const std::string& t) { return is_qualifier(t, lexicon); });
        if (it == tokens.end()) break;
        tokens.erase(it);
        out.push_back(join_tokens(tokens));
    }
    return out;
}

inline std::optional<MatchCandidate> match_token_subset(const KnowledgeGraph& kg,
                                                        const std::string& canonical,
                                                        EntityStatus status) {
    const auto query_tokens = split_tokens(canonical);
    if (query_tokens.empty()) return std::nullopt;
    const std::set<std::string> query(query_tokens.begin(), query_tokens.end());

    std::optional<MatchCandidate> best;
    std::size_t best_overlap = 0;
    for (const auto& [id, e] : kg.entities) {  // ascending id order
        if (e.status != status) continue;
        std::vector<std::string> names{id_to_text(e.id), canonicalize(e.label, kg.qualifier_lexicon)};
        for (const auto& a : e.aliases) names.push_back(canonicalize(a, kg.qualifier_lexicon));
        for (const auto& name : names) {
            const auto toks = split_tokens(name);
            const std::set<std::string> candidate(toks.begin(), toks.end());
            if (!std::includes(candidate.begin(), candidate.end(), query.begin(), query.end())) {
                continue;
            }
            std::size_t overlap = 0;
            for (const auto& t : query) overlap += candidate.count(t);
            // Strictly greater keeps the lexicographically smallest id on ties.
            if (!best || overlap > best_overlap) {
                best = MatchCandidate{&e, name};
                best_overlap = overlap;
            }
        }
    }
    return best;
}

inline std::optional<MatchResult> match_with_status(const KnowledgeGraph& kg,
                                                    const std::string& normalized,
                                                    const std::string& canonical,
                                                    EntityStatus status) {
    auto wrap = [](const MatchCandidate& c, MatchTier tier) {
        return MatchResult{c.entity->id, tier, c.matched_text};
    };
    if (auto c = match_exact_id(kg, normalized, status)) return wrap(*c, MatchTier::exact_id);
    if (auto c = match_exact_alias(kg, normalized, status)) return wrap(*c, MatchTier::exact_alias);
    for (const auto& text : progressive_strips(normalized, kg.qualifier_lexicon)) {
        if (auto c = match_exact_id(kg, text, status)) return wrap(*c, MatchTier::qualifier_stripped);
        if (auto c = match_exact_alias(kg, text, status)) {
            return wrap(*c, MatchTier::qualifier_stripped);
        }
    }
    if (auto c = match_token_subset(kg, canonical, status)) return wrap(*c, MatchTier::token_subset);
    return std::nullopt;
}

}  // namespace detail

/// Resolves a free-text object label to a graph entity. Canonical entities are
/// tried at every tier before any pending entity is considered.
inline std::optional<MatchResult> match_entity(const KnowledgeGraph& kg,
                                               std::string_view raw_label) {
    const std::string normalized = normalize_label(raw_label);
    const std::string canonical = canonicalize(raw_label, kg.qualifier_lexicon);
    if (auto m = detail::match_with_status(kg, normalized, canonical, EntityStatus::canonical)) {
        return m;
    }
    return detail::match_with_status(kg, normalized, canonical, EntityStatus::pending);
}

inline bool matches_canonical(const KnowledgeGraph& kg, std::string_view raw_label) {
    auto m = match_entity(kg, raw_label);
    return m && kg.find(m->entity)->status == EntityStatus::canonical;
}

inline constexpr std::string_view kProvisionalSource = "vlm_provisional";

/// Records a VLM provisional height as a quarantined (pending) entity, or folds
/// it into the running mean of an existing pending entity with the same id.
/// Returns the updated graph; the input is left untouched.
inline KnowledgeGraph add_pending(KnowledgeGraph kg, std::string_view raw_label,
                                  double provisional_height_cm) {
    if (!(provisional_height_cm > 0.0)) {
        throw PreconditionError("provisional height must be positive");
    }
    const std::string canonical = canonicalize(raw_label, kg.qualifier_lexicon);
    if (canonical.empty()) {
        throw PreconditionError("label '" + std::string(raw_label) + "' is empty after canonicalization");
    }
    if (matches_canonical(kg, raw_label)) {
        auto m = match_entity(kg, raw_label);
        throw PreconditionError("label '" + std::string(raw_label) +
                                "' matches canonical entity " + m->entity.value);
    }
    const EntityId id = text_to_id(canonical);
    if (auto it = kg.entities.find(id); it != kg.entities.end()) {
        KgEntity& e = it->second;
        if (e.status != EntityStatus::pending) {
            throw PreconditionError("entity " + id.value + " exists and is not pending");
        }
        const auto n = static_cast<double>(e.observation_count);
        e.height_mean_cm = (e.height_mean_cm * n + provisional_height_cm) / (n + 1.0);
        e.observation_count += 1;
        return kg;
    }
    KgEntity e;
    e.id = id;
    e.label = canonical;
    e.height_mean_cm = provisional_height_cm;
    e.height_std_cm = 0.0;
    e.source = std::string(kProvisionalSource);
    e.status = EntityStatus::pending;
    e.observation_count = 1;
    kg.entities.emplace(id, std::move(e));
    return kg;
}

/// Curation edit: moves a pending entity into the canonical set.
inline KnowledgeGraph promote(KnowledgeGraph kg, const EntityId& id) {
    auto it = kg.entities.find(id);
    if (it == kg.entities.end()) throw UnknownEntityError(id.value);
    it->second.status = EntityStatus::canonical;
    return kg;
}

}  // namespace floodvision::kg
