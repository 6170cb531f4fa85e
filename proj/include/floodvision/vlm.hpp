#pragma once

// Prompting, transport and strict reply parsing for the vision-language model.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace floodvision::vlm {

inline constexpr int kMaxObjects = 3;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-success HTTP status; the response body is kept for the audit trail.
class HttpStatusError : public TransportError {
public:
    HttpStatusError(int status, std::string body)
        : TransportError("HTTP status " + std::to_string(status) + ": " + body),
          status_(status),
          body_(std::move(body)) {}
    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

class MissingFixtureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Base for reply-level failures; the orchestrator re-requests once on these.
class ReplyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ReplyParseError : public ReplyError {
public:
    using ReplyError::ReplyError;
};

class SchemaViolation : public ReplyError {
public:
    SchemaViolation(std::string field, std::string value, const std::string& what)
        : ReplyError("schema violation at " + field + " = " + value + ": " + what),
          field_(std::move(field)),
          value_(std::move(value)) {}
    const std::string& field() const noexcept { return field_; }
    const std::string& value() const noexcept { return value_; }

private:
    std::string field_;
    std::string value_;
};

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

struct PromptSpec {
    std::string system_framing;
    std::string step_instructions;
    int max_objects = kMaxObjects;
    std::string response_schema_text;

    /// Text sent alongside the image in the user turn.
    std::string user_text() const { return step_instructions + "\n\n" + response_schema_text; }

    bool operator==(const PromptSpec&) const = default;
};

inline constexpr std::string_view kObservationSchemaText = R"({
  "type": "object",
  "additionalProperties": false,
  "required": ["objects"],
  "properties": {
    "objects": {
      "type": "array",
      "maxItems": 3,
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["label", "height_cm", "submerged_ratio", "rationale"],
        "properties": {
          "label": {"type": "string", "minLength": 1},
          "height_cm": {"type": "number", "exclusiveMinimum": 0},
          "submerged_ratio": {"type": "number", "minimum": 0.0, "maximum": 1.0},
          "rationale": {"type": "string"}
        }
      }
    }
  }
})";

inline PromptSpec build_prompt(int max_objects = kMaxObjects) {
    if (max_objects < 1) throw std::invalid_argument("max_objects must be at least 1");
    const std::string n = std::to_string(max_objects);

    PromptSpec p;
    p.max_objects = max_objects;
    p.system_framing =
        "You are a customized flood analysis assistant. You inspect photographs of flooded "
        "urban streets and estimate floodwater depth from partially submerged reference "
        "objects. You answer only with machine-readable JSON.";

    std::string schema(kObservationSchemaText);
    if (max_objects != kMaxObjects) {
        const std::string from = "\"maxItems\": 3";
        schema.replace(schema.find(from), from.size(), "\"maxItems\": " + n);
    }
    p.response_schema_text = "Response JSON schema:\n" + schema;

    std::ostringstream s;
    s << "Work through the following three steps.\n"
      << "\n"
      << "Step 1 - Object identification. Select up to " << n
      << " visually distinct reference objects that touch the water and whose real-world "
         "height is well known (for example vehicle tires, curbs, fire hydrants, trash cans, "
         "people). Prefer vehicle parts and street furniture over whole objects. Name each "
         "object with a short noun phrase and use positional or visual qualifiers to "
         "disambiguate similar instances, e.g. \"rear SUV tire\" or \"left curb\".\n"
      << "\n"
      << "Step 2 - Measurement estimation. For each object estimate (a) its provisional "
         "real-world height in centimeters and (b) its submerged ratio, the fraction of the "
         "object's height below the waterline, as a number from 0.0 to 1.0. Use visual "
         "anchors such as the relative position of the waterline on the object (wheel hub, "
         "bumper, knee). Use 1.0 only when the object is fully submerged.\n"
      << "\n"
      << "Step 3 - Structured output. Reply with a single JSON object and nothing else, in "
         "exactly this form: {\"objects\": [{\"label\": string, \"height_cm\": number, "
         "\"submerged_ratio\": number, \"rationale\": string}]}. Put your brief reasoning for "
         "each object in \"rationale\". If no suitable reference object is visible, reply "
         "{\"objects\": []}.";
    p.step_instructions = s.str();
    return p;
}

/// KG-free comparison prompt that asks for a single scene depth.
inline PromptSpec build_baseline_prompt() {
    PromptSpec p;
    p.max_objects = 0;
    p.system_framing =
        "You are a customized flood analysis assistant. You inspect photographs of flooded "
        "urban streets and estimate floodwater depth. You answer only with machine-readable "
        "JSON.";
    p.step_instructions =
        "Estimate the floodwater depth in centimeters at the deepest clearly visible point of "
        "the street in this image. Reply with a single JSON object and nothing else, in "
        "exactly this form: {\"depth_cm\": number}.";
    p.response_schema_text =
        "Response JSON schema:\n"
        R"({"type": "object", "additionalProperties": false, "required": ["depth_cm"], )"
        R"("properties": {"depth_cm": {"type": "number", "minimum": 0}}})";
    return p;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

enum class MediaType { jpeg, png };

inline std::string_view mime_type(MediaType t) {
    return t == MediaType::jpeg ? "image/jpeg" : "image/png";
}

inline std::optional<MediaType> sniff_media_type(std::string_view bytes) {
    static constexpr std::string_view png_magic{"\x89PNG\r\n\x1a\n", 8};
    static constexpr std::string_view jpeg_magic{"\xff\xd8\xff", 3};
    if (bytes.starts_with(png_magic)) return MediaType::png;
    if (bytes.starts_with(jpeg_magic)) return MediaType::jpeg;
    return std::nullopt;
}

struct ImagePayload {
    std::string bytes;
    MediaType media_type = MediaType::png;
    std::string source_path;
};

inline ImagePayload make_image(std::string bytes, std::string source_path) {
    if (bytes.empty()) throw ImageError(source_path + ": image is empty");
    auto type = sniff_media_type(bytes);
    if (!type) throw ImageError(source_path + ": not a JPEG or PNG image");
    return {std::move(bytes), *type, std::move(source_path)};
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline ImagePayload load_image(const std::filesystem::path& path) {
    return make_image(read_file(path), path.string());
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

enum class BackendKind { http, mock };

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::string base_url;
    std::string model_name;
    double timeout_s = 60.0;
    int max_retries = 2;
    std::string fixture_dir;
    int parallelism = 4;
    double backoff_base_s = 1.0;
    std::string api_key;  // resolved from the environment, never serialized

    void validate() const {
        if (max_retries < 0) throw std::invalid_argument("backend.max_retries must be >= 0");
        if (!(timeout_s > 0)) throw std::invalid_argument("backend.timeout_s must be > 0");
        if (parallelism < 1) throw std::invalid_argument("backend.parallelism must be >= 1");
        if (backoff_base_s < 0) throw std::invalid_argument("backend.backoff_base_s must be >= 0");
        if (kind == BackendKind::http) {
            if (base_url.empty()) throw std::invalid_argument("backend.base_url is required for http");
            if (model_name.empty()) {
                throw std::invalid_argument("backend.model_name is required for http");
            }
        } else if (fixture_dir.empty()) {
            throw std::invalid_argument("backend.fixture_dir is required for mock");
        }
    }
};

inline std::string model_id(const BackendConfig& c) {
    return c.kind == BackendKind::mock ? "mock" : c.model_name;
}

class VlmBackend {
public:
    virtual ~VlmBackend() = default;
    /// Returns the assistant reply text for one image.
    virtual std::string complete(const ImagePayload& image, const PromptSpec& prompt) = 0;
};

/// Replays stored replies: `{fixture_dir}/{sha256}.json`, then
/// `{fixture_dir}/{basename}.json`.
class MockBackend final : public VlmBackend {
public:
    explicit MockBackend(std::filesystem::path fixture_dir) : dir_(std::move(fixture_dir)) {}

    std::string complete(const ImagePayload& image, const PromptSpec&) override {
        const auto by_hash = dir_ / (sha256_hex(image.bytes) + ".json");
        if (std::filesystem::is_regular_file(by_hash)) return read_file(by_hash);
        const auto by_name =
            dir_ / (std::filesystem::path(image.source_path).filename().string() + ".json");
        if (std::filesystem::is_regular_file(by_name)) return read_file(by_name);
        throw MissingFixtureError("no mock fixture for " + image.source_path + "; probed " +
                                  by_hash.string() + " and " + by_name.string());
    }

private:
    std::filesystem::path dir_;
};

struct SplitUrl {
    std::string scheme_host_port;
    std::string path_prefix;
};

inline SplitUrl split_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw std::invalid_argument("backend.base_url must include a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    out.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    return out;
}

inline nlohmann::json chat_request_body(const std::string& model, const ImagePayload& image,
                                        const PromptSpec& prompt) {
    const std::string data_url = "data:" + std::string(mime_type(image.media_type)) +
                                 ";base64," + httplib::detail::base64_encode(image.bytes);
    nlohmann::json user_content = nlohmann::json::array();
    user_content.push_back({{"type", "text"}, {"text", prompt.user_text()}});
    user_content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url}}}});
    return {{"model", model},
            {"temperature", 0},
            {"messages",
             {{{"role", "system"}, {"content", prompt.system_framing}},
              {{"role", "user"}, {"content", user_content}}}}};
}

inline std::string extract_assistant_text(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed chat-completions response: ") + e.what());
    }
    throw TransportError("chat-completions response has no text content");
}

/// OpenAI-compatible chat-completions client with bounded retries.
class HttpBackend final : public VlmBackend {
public:
    using Sleeper = std::function<void(std::chrono::duration<double>)>;

    explicit HttpBackend(BackendConfig config, Sleeper sleep = default_sleep)
        : config_(std::move(config)), sleep_(std::move(sleep)) {}

    std::string complete(const ImagePayload& image, const PromptSpec& prompt) override {
        const auto url = split_base_url(config_.base_url);
        const std::string body = chat_request_body(config_.model_name, image, prompt).dump();
        const auto timeout = std::chrono::duration<double>(config_.timeout_s);

        std::string last_error;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) {
                sleep_(std::chrono::duration<double>(config_.backoff_base_s *
                                                     std::pow(2.0, attempt - 1)));
            }
            httplib::Client client(url.scheme_host_port);
            client.set_connection_timeout(
                std::chrono::duration_cast<std::chrono::microseconds>(timeout));
            client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
            client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
            httplib::Headers headers;
            if (!config_.api_key.empty()) {
                headers.emplace("Authorization", "Bearer " + config_.api_key);
            }
            auto res = client.Post(url.path_prefix + "/chat/completions", headers, body,
                                   "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 200 && res->status < 300) return extract_assistant_text(res->body);
            // Client errors other than rate limiting will not improve on retry.
            if (res->status != 429 && res->status < 500) throw HttpStatusError(res->status, res->body);
            last_error = HttpStatusError(res->status, res->body).what();
        }
        throw TransportError("request failed after " + std::to_string(config_.max_retries + 1) +
                             " attempts; last error: " + last_error);
    }

private:
    static void default_sleep(std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }

    BackendConfig config_;
    Sleeper sleep_;
};

inline std::unique_ptr<VlmBackend> make_backend(const BackendConfig& config) {
    config.validate();
    if (config.kind == BackendKind::mock) return std::make_unique<MockBackend>(config.fixture_dir);
    return std::make_unique<HttpBackend>(config);
}

inline std::string request_observation(VlmBackend& backend, const ImagePayload& image,
                                       const PromptSpec& prompt) {
    return backend.complete(image, prompt);
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

struct ObjectObservation {
    std::string raw_label;
    double provisional_height_cm = 0.0;
    double submerged_ratio = 0.0;
    std::string rationale;

    bool operator==(const ObjectObservation&) const = default;
};

struct SceneObservation {
    std::vector<ObjectObservation> objects;
    std::string model_id;
    std::string raw_response;
    std::vector<std::string> warnings;
};

/// Removes one surrounding Markdown code fence, if present.
inline std::string_view strip_code_fence(std::string_view text) {
    auto trim = [](std::string_view s) {
        const auto ws = " \t\r\n";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string_view::npos) return std::string_view{};
        return s.substr(b, s.find_last_not_of(ws) - b + 1);
    };
    std::string_view t = trim(text);
    if (!t.starts_with("```")) return t;
    t.remove_prefix(3);
    // Optional info string such as "json".
    std::size_t i = 0;
    while (i < t.size() && std::isalnum(static_cast<unsigned char>(t[i]))) ++i;
    t.remove_prefix(i);
    if (t.ends_with("```")) t.remove_suffix(3);
    return trim(t);
}

namespace detail {

inline std::string show(const nlohmann::json& v) {
    std::string s = v.dump();
    if (s.size() > 60) s = s.substr(0, 57) + "...";
    return s;
}

inline double finite_number(const nlohmann::json& obj, const std::string& path, const char* key) {
    const auto& v = obj.at(key);
    if (!v.is_number()) throw SchemaViolation(path + "." + key, show(v), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaViolation(path + "." + key, show(v), "not finite");
    return d;
}

inline void check_keys(const nlohmann::json& obj, const std::string& path,
                       std::initializer_list<const char*> required) {
    for (const char* key : required) {
        if (!obj.contains(key)) throw SchemaViolation(path + "." + key, "<missing>", "required field");
    }
    for (const auto& [k, v] : obj.items()) {
        bool known = false;
        for (const char* key : required) known = known || k == key;
        if (!known) throw SchemaViolation(path + "." + k, show(v), "unexpected field");
    }
}

inline nlohmann::json parse_reply_json(std::string_view raw) {
    const std::string_view payload = strip_code_fence(raw);
    try {
        return nlohmann::json::parse(payload);
    } catch (const nlohmann::json::parse_error& e) {
        throw ReplyParseError(std::string("reply is not valid JSON: ") + e.what());
    }
}

}  // namespace detail

/// Strict parse of an assistant reply into a validated observation. Lists
/// longer than three are truncated with a warning; out-of-range values are
/// rejected.
inline SceneObservation parse_observation(std::string_view raw, std::string model_id) {
    const nlohmann::json doc = detail::parse_reply_json(raw);
    if (!doc.is_object()) throw SchemaViolation("$", detail::show(doc), "expected an object");
    detail::check_keys(doc, "$", {"objects"});
    const auto& objects = doc.at("objects");
    if (!objects.is_array()) {
        throw SchemaViolation("$.objects", detail::show(objects), "expected an array");
    }

    SceneObservation obs;
    obs.model_id = std::move(model_id);
    obs.raw_response = std::string(raw);
    std::size_t n = objects.size();
    if (n > static_cast<std::size_t>(kMaxObjects)) {
        obs.warnings.push_back("reply listed " + std::to_string(n) + " objects; kept the first " +
                               std::to_string(kMaxObjects));
        n = kMaxObjects;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& o = objects[i];
        const std::string path = "$.objects[" + std::to_string(i) + "]";
        if (!o.is_object()) throw SchemaViolation(path, detail::show(o), "expected an object");
        detail::check_keys(o, path, {"label", "height_cm", "submerged_ratio", "rationale"});

        ObjectObservation item;
        const auto& label = o.at("label");
        if (!label.is_string()) throw SchemaViolation(path + ".label", detail::show(label), "expected a string");
        item.raw_label = label.get<std::string>();
        if (item.raw_label.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw SchemaViolation(path + ".label", detail::show(label), "label is empty");
        }
        item.provisional_height_cm = detail::finite_number(o, path, "height_cm");
        if (!(item.provisional_height_cm > 0.0)) {
            throw SchemaViolation(path + ".height_cm", detail::show(o.at("height_cm")),
                                  "height_cm must be > 0");
        }
        item.submerged_ratio = detail::finite_number(o, path, "submerged_ratio");
        if (item.submerged_ratio < 0.0 || item.submerged_ratio > 1.0) {
            throw SchemaViolation(path + ".submerged_ratio", detail::show(o.at("submerged_ratio")),
                                  "submerged_ratio out of [0,1]");
        }
        const auto& rationale = o.at("rationale");
        if (!rationale.is_string()) {
            throw SchemaViolation(path + ".rationale", detail::show(rationale), "expected a string");
        }
        item.rationale = rationale.get<std::string>();
        obs.objects.push_back(std::move(item));
    }
    return obs;
}

inline std::string serialize_observation(const SceneObservation& obs) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : obs.objects) {
        objects.push_back({{"label", o.raw_label},
                           {"height_cm", o.provisional_height_cm},
                           {"submerged_ratio", o.submerged_ratio},
                           {"rationale", o.rationale}});
    }
    return nlohmann::json{{"objects", objects}}.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// Parses the KG-free baseline reply `{"depth_cm": number}`.
inline double parse_baseline_reply(std::string_view raw) {
    const nlohmann::json doc = detail::parse_reply_json(raw);
    if (!doc.is_object()) throw SchemaViolation("$", detail::show(doc), "expected an object");
    detail::check_keys(doc, "$", {"depth_cm"});
    const double d = detail::finite_number(doc, "$", "depth_cm");
    if (d < 0.0) throw SchemaViolation("$.depth_cm", detail::show(doc.at("depth_cm")), "depth_cm must be >= 0");
    return d;
}

}  // namespace floodvision::vlm
