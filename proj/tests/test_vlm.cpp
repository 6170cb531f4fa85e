#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include "fake_server.hpp"
#include "floodvision/vlm.hpp"
#include "test_paths.hpp"

using namespace floodvision::vlm;
namespace fs = std::filesystem;

namespace {

const std::string kPng = std::string("\x89PNG\r\n\x1a\n", 8) + "rest-of-image";

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("floodvision_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("build_prompt is deterministic and complete", "[vlm]") {
    const auto a = build_prompt(3);
    const auto b = build_prompt(3);
    CHECK(a == b);
    CHECK(a.max_objects == 3);
    const std::string text = a.system_framing + a.user_text();
    CHECK(text.find("flood analysis assistant") != std::string::npos);
    CHECK(text.find("0.0") != std::string::npos);
    CHECK(text.find("1.0") != std::string::npos);
    CHECK(text.find("rear") != std::string::npos);
    CHECK(text.find("centimeters") != std::string::npos);
    CHECK(text.find("up to 3") != std::string::npos);
    CHECK(text.find(std::string(kObservationSchemaText)) != std::string::npos);
    for (const char* step : {"Step 1", "Step 2", "Step 3"}) CHECK(text.find(step) != std::string::npos);
    CHECK_THROWS_AS(build_prompt(0), std::invalid_argument);
    CHECK(build_prompt(2).response_schema_text.find("\"maxItems\": 2") != std::string::npos);
}

TEST_CASE("media type is sniffed from magic bytes", "[vlm]") {
    CHECK(make_image(kPng, "a.png").media_type == MediaType::png);
    CHECK(make_image("\xff\xd8\xff\xe0rest", "a.jpg").media_type == MediaType::jpeg);
    CHECK_THROWS_AS(make_image("", "empty.png"), ImageError);
    CHECK_THROWS_AS(make_image("GIF89a....", "x.gif"), ImageError);
    CHECK(load_image(test_paths::data("images/scene_02.jpg")).media_type == MediaType::jpeg);
}

TEST_CASE("sha256 matches a known digest", "[vlm]") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("mock backend resolves by content hash, then file name", "[vlm]") {
    const auto dir = temp_dir("mock");
    const auto image = make_image(kPng, "/somewhere/photo.png");
    const auto prompt = build_prompt();
    MockBackend backend(dir);

    try {
        backend.complete(image, prompt);
        FAIL("expected a missing fixture");
    } catch (const MissingFixtureError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(sha256_hex(kPng) + ".json") != std::string::npos);
        CHECK(msg.find("photo.png.json") != std::string::npos);
    }

    write(dir / "photo.png.json", "by-name");
    CHECK(backend.complete(image, prompt) == "by-name");
    write(dir / (sha256_hex(kPng) + ".json"), "by-hash \n");
    CHECK(backend.complete(image, prompt) == "by-hash \n");
    // Pure function of (bytes, fixture dir): the path does not matter for hash hits.
    CHECK(backend.complete(make_image(kPng, "moved.png"), prompt) == "by-hash \n");
}

TEST_CASE("http backend retries 5xx with exponential backoff", "[vlm][http]") {
    FakeChatServer server;
    server.script = {{500, "boom"}, {500, "boom"}, {200, FakeChatServer::reply("{\"objects\": []}")}};
    server.start();

    BackendConfig config;
    config.kind = BackendKind::http;
    config.base_url = server.base_url() + "/v1";
    config.model_name = "test-model";
    config.max_retries = 2;
    config.api_key = "secret";
    std::vector<double> sleeps;
    HttpBackend backend(config, [&](std::chrono::duration<double> d) { sleeps.push_back(d.count()); });

    const auto image = make_image(kPng, "x.png");
    CHECK(backend.complete(image, build_prompt()) == "{\"objects\": []}");
    CHECK(server.attempts() == 3);
    CHECK(sleeps == std::vector<double>{1.0, 2.0});

    const auto body = nlohmann::json::parse(server.last_body());
    CHECK(server.last_path() == "/v1/chat/completions");
    CHECK(server.last_auth() == "Bearer secret");
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 0);
    CHECK(body["messages"][0]["role"] == "system");
    const auto& parts = body["messages"][1]["content"];
    CHECK(parts[0]["type"] == "text");
    const std::string url = parts[1]["image_url"]["url"];
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
}

TEST_CASE("http backend gives up after 1 + max_retries attempts", "[vlm][http]") {
    for (int retries : {0, 1, 3}) {
        FakeChatServer server;
        server.script = {{503, "unavailable"}};
        server.repeat_last = true;
        server.start();
        BackendConfig config;
        config.kind = BackendKind::http;
        config.base_url = server.base_url();
        config.model_name = "m";
        config.max_retries = retries;
        HttpBackend backend(config, [](auto) {});
        try {
            backend.complete(make_image(kPng, "x.png"), build_prompt());
            FAIL("expected a transport error");
        } catch (const TransportError& e) {
            CHECK(std::string(e.what()).find("unavailable") != std::string::npos);
        }
        CHECK(server.attempts() == static_cast<std::size_t>(1 + retries));
    }
}

TEST_CASE("http backend surfaces client errors without retrying", "[vlm][http]") {
    FakeChatServer server;
    server.script = {{401, "{\"error\": \"bad key\"}"}};
    server.start();
    BackendConfig config;
    config.kind = BackendKind::http;
    config.base_url = server.base_url();
    config.model_name = "m";
    config.max_retries = 4;
    HttpBackend backend(config, [](auto) {});
    try {
        backend.complete(make_image(kPng, "x.png"), build_prompt());
        FAIL("expected an HTTP status error");
    } catch (const HttpStatusError& e) {
        CHECK(e.status() == 401);
        CHECK(e.body().find("bad key") != std::string::npos);
    }
    CHECK(server.attempts() == 1);
}

TEST_CASE("http backend retries connection failures", "[vlm][http]") {
    BackendConfig config;
    config.kind = BackendKind::http;
    config.base_url = "http://127.0.0.1:9";  // discard port, nothing listens
    config.model_name = "m";
    config.max_retries = 1;
    config.timeout_s = 1.0;
    int sleeps = 0;
    HttpBackend backend(config, [&](auto) { ++sleeps; });
    CHECK_THROWS_AS(backend.complete(make_image(kPng, "x.png"), build_prompt()), TransportError);
    CHECK(sleeps == 1);
}

TEST_CASE("backend config validation", "[vlm]") {
    BackendConfig c;
    c.fixture_dir = "x";
    CHECK_NOTHROW(c.validate());
    c.max_retries = -1;
    CHECK_THROWS(c.validate());
    c.max_retries = 0;
    c.timeout_s = 0;
    CHECK_THROWS(c.validate());
    c.timeout_s = 1;
    c.kind = BackendKind::http;
    CHECK_THROWS(c.validate());
    CHECK(split_base_url("https://api.example.com/v1/").path_prefix == "/v1");
    CHECK(split_base_url("http://localhost:8080").scheme_host_port == "http://localhost:8080");
}

TEST_CASE("parse_observation accepts the documented shape", "[vlm]") {
    const std::string raw =
        R"({"objects":[{"label":"suv tire","height_cm":78,"submerged_ratio":0.5,"rationale":"waterline at hub"}]})";
    const auto obs = parse_observation(raw, "m");
    REQUIRE(obs.objects.size() == 1);
    CHECK(obs.objects[0].raw_label == "suv tire");
    CHECK(obs.objects[0].provisional_height_cm == 78.0);
    CHECK(obs.objects[0].submerged_ratio == 0.5);
    CHECK(obs.raw_response == raw);
    CHECK(obs.model_id == "m");

    const auto fenced = parse_observation("```json " + raw + " ```", "m");
    CHECK(fenced.objects == obs.objects);
    const auto fenced_lines = parse_observation("\n```\n" + raw + "\n```\n", "m");
    CHECK(fenced_lines.objects == obs.objects);

    CHECK(parse_observation(R"({"objects": []})", "m").objects.empty());
    const auto edge = parse_observation(
        R"({"objects":[{"label":"a","height_cm":1e-3,"submerged_ratio":0,"rationale":""},)"
        R"({"label":"b","height_cm":10,"submerged_ratio":1,"rationale":"x"}]})",
        "m");
    CHECK(edge.objects.size() == 2);
}

TEST_CASE("parse_observation rejects out-of-range values naming the field", "[vlm]") {
    try {
        parse_observation(R"({"objects":[{"label":"a","height_cm":10,"submerged_ratio":1.2,"rationale":""}]})", "m");
        FAIL("expected a schema violation");
    } catch (const SchemaViolation& e) {
        CHECK(e.field() == "$.objects[0].submerged_ratio");
        CHECK(e.value() == "1.2");
        CHECK(std::string(e.what()).find("submerged_ratio out of [0,1]") != std::string::npos);
    }
    CHECK_THROWS_AS(
        parse_observation(R"({"objects":[{"label":"a","height_cm":0,"submerged_ratio":0.2,"rationale":""}]})", "m"),
        SchemaViolation);
    CHECK_THROWS_AS(parse_observation("{\"objects\": [", "m"), ReplyParseError);
}

TEST_CASE("parse_observation truncates long lists with a warning", "[vlm]") {
    nlohmann::json doc{{"objects", nlohmann::json::array()}};
    for (int i = 0; i < 5; ++i) {
        doc["objects"].push_back({{"label", "obj " + std::to_string(i)}, {"height_cm", 10 + i},
                                  {"submerged_ratio", 0.1}, {"rationale", ""}});
    }
    // The fifth object is invalid but lies beyond the truncation point.
    doc["objects"][4]["submerged_ratio"] = 7;
    const auto obs = parse_observation(doc.dump(), "m");
    REQUIRE(obs.objects.size() == 3);
    CHECK(obs.objects[2].raw_label == "obj 2");
    REQUIRE(obs.warnings.size() == 1);
    CHECK(obs.warnings[0].find("5 objects") != std::string::npos);
}

TEST_CASE("parse_observation round-trips serialized observations", "[vlm][property]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> height(0.01, 500.0);
    const std::vector<std::string> chars{"a", "b", "c", " ", "x", "\"", "\\", "/", "é", "\n", "{", "}", "[", "]", ",", ":"};
    for (int trial = 0; trial < 500; ++trial) {
        SceneObservation obs;
        const int n = static_cast<int>(rng() % 4);
        for (int i = 0; i < n; ++i) {
            ObjectObservation o;
            o.raw_label = "o";
            for (int k = 0; k < 8; ++k) o.raw_label += chars[rng() % chars.size()];
            o.provisional_height_cm = height(rng);
            o.submerged_ratio = rng() % 10 == 0 ? 1.0 : unit(rng);
            for (int k = 0; k < static_cast<int>(rng() % 12); ++k) o.rationale += chars[rng() % chars.size()];
            obs.objects.push_back(o);
        }
        const auto back = parse_observation(serialize_observation(obs), "m");
        CHECK(back.objects == obs.objects);
    }
}

TEST_CASE("fuzzed replies never yield invalid objects", "[vlm][property]") {
    std::mt19937_64 rng(17);
    const std::string valid =
        R"({"objects":[{"label":"rear suv tire","height_cm":78,"submerged_ratio":0.5,"rationale":"hub"}]})";
    int accepted = 0;
    for (int trial = 0; trial < 20000; ++trial) {
        std::string s = valid;
        const int edits = 1 + static_cast<int>(rng() % 4);
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = rng() % (s.size() + 1);
            switch (rng() % 3) {
                case 0: if (pos < s.size()) s.erase(pos, 1); break;
                case 1: s.insert(pos, 1, "0123456789-.eE,{}[]\":a "[rng() % 23]); break;
                default: if (pos < s.size()) s[pos] = "0123456789-.e\":"[rng() % 15]; break;
            }
        }
        try {
            const auto obs = parse_observation(s, "m");
            ++accepted;
            for (const auto& o : obs.objects) {
                CHECK(o.submerged_ratio >= 0.0);
                CHECK(o.submerged_ratio <= 1.0);
                CHECK(o.provisional_height_cm > 0.0);
            }
        } catch (const ReplyError&) {
        }
    }
    CHECK(accepted > 0);
}

TEST_CASE("baseline prompt and reply", "[vlm]") {
    const auto p = build_baseline_prompt();
    CHECK(p.user_text().find("depth_cm") != std::string::npos);
    CHECK(parse_baseline_reply(R"({"depth_cm": 32.5})") == 32.5);
    CHECK(parse_baseline_reply("```json\n{\"depth_cm\": 0}\n```") == 0.0);
    CHECK_THROWS_AS(parse_baseline_reply(R"({"depth": 3})"), SchemaViolation);
    CHECK_THROWS_AS(parse_baseline_reply(R"({"depth_cm": -1})"), SchemaViolation);
    CHECK_THROWS_AS(parse_baseline_reply("nope"), ReplyParseError);
}
