/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/service.hpp"

#include <chrono>
#include <cstdio>
#include <set>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "tgan/checkpoint.hpp"
#include "tgan/codec.hpp"
#include "tgan/image_io.hpp"

namespace tgan::service {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& message) {
    throw RequestError(400, field, field.empty() ? message : field + ": " + message);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) {
            bad(where.empty() ? key : where + "." + key, "unknown field");
        }
    }
}

const json& require(const json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    const std::string path = where.empty() ? key : where + "." + key;
    if (it == obj.end()) {
        bad(path, "missing");
    }
    return *it;
}

int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) {
        bad(path, "expected an integer");
    }
    const auto n = v.get<std::int64_t>();
    if (n < -(1 << 20) || n > (1 << 20)) {
        bad(path, "value out of range");
    }
    return static_cast<int>(n);
}

RgbImage decode_png_field(const json& v, const std::string& path) {
    if (!v.is_string()) {
        bad(path, "expected a base64 string");
    }
    const auto bytes = codec::base64_decode(v.get_ref<const std::string&>());
    if (!bytes) {
        bad(path, "malformed base64");
    }
    try {
        return io::decode_image(*bytes);
    } catch (const io::ImageDecodeError& e) {
        bad(path, std::string("undecodable image: ") + e.what());
    }
}

Rect parse_rect(const json& obj, const std::string& where) {
    Rect r;
    r.x = as_int(require(obj, "x", where), where + ".x");
    r.y = as_int(require(obj, "y", where), where + ".y");
    r.w = as_int(require(obj, "w", where), where + ".w");
    r.h = as_int(require(obj, "h", where), where + ".h");
    return r;
}

void check_rect(const Rect& r, int side, const std::string& where) {
    if (!r.inside(side, side)) {
        bad(where, "rectangle " + r.str() + " is outside the " + std::to_string(side) + "x" + std::to_string(side) +
                       " canvas");
    }
}

const json& array_field(const json& body, const char* key) {
    static const json empty = json::array();
    const auto it = body.find(key);
    if (it == body.end()) {
        return empty;
    }
    if (!it->is_array()) {
        bad(key, "expected an array");
    }
    return *it;
}

std::string error_body(const std::string& message, const std::string& field) {
    json j{{"error", message}};
    j["field"] = field.empty() ? json(nullptr) : json(field);
    return j.dump();
}

Response json_response(int status, const json& body) {
    Response r;
    r.status = status;
    r.body = body.dump();
    return r;
}

std::string opaque_id() {
    static std::atomic<std::uint64_t> counter{0};
    const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
    const std::uint64_t v =
        codec::derive_seed(static_cast<std::uint64_t>(now), counter.fetch_add(1, std::memory_order_relaxed));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

// ---- request parsing -----------------------------------------------------

infer::SynthesisRequest parse_synthesize_request(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        bad("", std::string("malformed JSON: ") + e.what());
    }
    return parse_synthesize_request(j);
}

infer::SynthesisRequest parse_synthesize_request(const json& body) {
    if (!body.is_object()) {
        bad("", "request body must be a JSON object");
    }
    reject_unknown(body, {"sketch", "texture_patches", "color_patches", "resolution"}, "");

    infer::SynthesisRequest req;
    req.resolution = as_int(require(body, "resolution", ""), "resolution");
    if (req.resolution < infer::kMinResolution || req.resolution > infer::kMaxResolution) {
        throw RequestError(422, "resolution",
                           "resolution: " + std::to_string(req.resolution) + " is unsupported (expected " +
                               std::to_string(infer::kMinResolution) + ".." + std::to_string(infer::kMaxResolution) +
                               ")");
    }
    req.sketch = io::sketch_from_image(decode_png_field(require(body, "sketch", ""), "sketch"));

    const json& textures = array_field(body, "texture_patches");
    for (std::size_t i = 0; i < textures.size(); ++i) {
        const std::string where = "texture_patches[" + std::to_string(i) + "]";
        const json& p = textures[i];
        if (!p.is_object()) {
            bad(where, "expected an object");
        }
        reject_unknown(p, {"image", "x", "y", "w", "h"}, where);
        infer::TexturePatch patch;
        patch.rect = parse_rect(p, where);
        check_rect(patch.rect, req.resolution, where);
        patch.image = decode_png_field(require(p, "image", where), where + ".image");
        req.textures.push_back(std::move(patch));
    }

    const json& colors = array_field(body, "color_patches");
    for (std::size_t i = 0; i < colors.size(); ++i) {
        const std::string where = "color_patches[" + std::to_string(i) + "]";
        const json& p = colors[i];
        if (!p.is_object()) {
            bad(where, "expected an object");
        }
        reject_unknown(p, {"rgb", "x", "y", "w", "h"}, where);
        infer::ColorPatch patch;
        patch.rect = parse_rect(p, where);
        check_rect(patch.rect, req.resolution, where);
        const json& rgb = require(p, "rgb", where);
        if (!rgb.is_string()) {
            bad(where + ".rgb", "expected a hex string");
        }
        try {
            patch.source = infer::parse_hex_color(rgb.get_ref<const std::string&>());
        } catch (const ValidationError& e) {
            bad(where + ".rgb", e.what());
        }
        req.colors.push_back(std::move(patch));
    }

    try {
        req.validate();
    } catch (const ValidationError& e) {
        bad("", e.what());
    }
    return req;
}

json to_dto(const infer::SynthesisRequest& req) {
    auto b64 = [](const std::vector<std::uint8_t>& bytes) { return codec::base64_encode(bytes); };
    json j;
    j["sketch"] = b64(io::encode_sketch_png(req.sketch));
    j["resolution"] = req.resolution;
    j["texture_patches"] = json::array();
    for (const auto& t : req.textures) {
        j["texture_patches"].push_back(
            {{"image", b64(io::encode_png(t.image))}, {"x", t.rect.x}, {"y", t.rect.y}, {"w", t.rect.w}, {"h", t.rect.h}});
    }
    j["color_patches"] = json::array();
    for (const auto& c : req.colors) {
        const auto* rgb = std::get_if<colorkit::Rgb>(&c.source);
        if (rgb == nullptr) {
            throw ValidationError("color images have no request representation");
        }
        j["color_patches"].push_back(
            {{"rgb", infer::to_hex(*rgb)}, {"x", c.rect.x}, {"y", c.rect.y}, {"w", c.rect.w}, {"h", c.rect.h}});
    }
    return j;
}

const json& synthesize_schema() {
    static const json schema = [] {
        const json rect_props = {{"x", {{"type", "integer"}, {"minimum", 0}}},
                                 {"y", {{"type", "integer"}, {"minimum", 0}}},
                                 {"w", {{"type", "integer"}, {"minimum", 1}}},
                                 {"h", {{"type", "integer"}, {"minimum", 1}}}};
        json texture = {{"type", "object"},
                        {"additionalProperties", false},
                        {"required", {"image", "x", "y", "w", "h"}},
                        {"properties", rect_props}};
        texture["properties"]["image"] = {{"type", "string"}, {"contentEncoding", "base64"},
                                          {"contentMediaType", "image/png"}};
        json color = {{"type", "object"},
                      {"additionalProperties", false},
                      {"required", {"rgb", "x", "y", "w", "h"}},
                      {"properties", rect_props}};
        color["properties"]["rgb"] = {{"type", "string"}, {"pattern", "^#?[0-9a-fA-F]{6}$"}};
        return json{
            {"$schema", "https://json-schema.org/draft/2020-12/schema"},
            {"title", "SynthesizeRequest"},
            {"type", "object"},
            {"additionalProperties", false},
            {"required", {"sketch", "resolution"}},
            {"properties",
             {{"sketch", {{"type", "string"}, {"contentEncoding", "base64"}, {"contentMediaType", "image/png"}}},
              {"resolution",
               {{"type", "integer"}, {"minimum", infer::kMinResolution}, {"maximum", infer::kMaxResolution}}},
              {"texture_patches", {{"type", "array"}, {"items", texture}}},
              {"color_patches", {{"type", "array"}, {"items", color}}}}}};
    }();
    return schema;
}

// ---- handler -------------------------------------------------------------

Handler::Handler(int max_inflight) : max_inflight_(max_inflight) {
    if (max_inflight < 1) {
        throw ConfigError("max-inflight must be at least 1");
    }
}

void Handler::set_backend(std::shared_ptr<const infer::Backend> backend) {
    std::lock_guard lock(mutex_);
    backend_ = std::move(backend);
    load_error_.clear();
}

void Handler::set_load_error(std::string message) {
    std::lock_guard lock(mutex_);
    load_error_ = std::move(message);
}

std::shared_ptr<const infer::Backend> Handler::backend() const {
    std::lock_guard lock(mutex_);
    return backend_;
}

Response Handler::health() const {
    std::string error;
    std::shared_ptr<const infer::Backend> b;
    {
        std::lock_guard lock(mutex_);
        b = backend_;
        error = load_error_;
    }
    if (!b) {
        json j{{"status", error.empty() ? "loading" : "failed"}, {"checkpoint_id", nullptr}, {"resolution", nullptr}};
        if (!error.empty()) {
            j["error"] = error;
        }
        return json_response(503, j);
    }
    return json_response(200, {{"status", "ok"}, {"checkpoint_id", b->model_id()}, {"resolution", b->native_resolution()}});
}

Response Handler::synthesize(std::string_view body) const {
    const auto b = backend();
    if (!b) {
        Response r;
        r.status = 503;
        r.body = error_body("model is not loaded", "");
        return r;
    }
    struct Slot {
        std::atomic<int>& n;
        ~Slot() { n.fetch_sub(1); }
    };
    if (inflight_.fetch_add(1) >= max_inflight_) {
        inflight_.fetch_sub(1);
        Response r;
        r.status = 429;
        r.body = error_body("too many requests in flight", "");
        return r;
    }
    Slot slot{inflight_};

    infer::SynthesisRequest req;
    try {
        req = parse_synthesize_request(body);
    } catch (const RequestError& e) {
        Response r;
        r.status = e.status();
        r.body = error_body(e.what(), e.field());
        return r;
    }

    try {
        const infer::SynthesisResult result = b->synthesize(req);
        Response r;
        r.content_type = "image/png";
        const auto png = io::encode_png(result.image);
        r.body.assign(png.begin(), png.end());
        char ms[32];
        std::snprintf(ms, sizeof ms, "%.3f", result.latency_ms);
        r.headers["X-Synthesis-Ms"] = ms;
        r.headers["X-Internal-Resolution"] = std::to_string(result.internal_resolution);
        r.headers["X-Checkpoint-Id"] = b->model_id();
        return r;
    } catch (const std::exception& e) {
        const std::string id = opaque_id();
        failures_.fetch_add(1);
        spdlog::error("synthesis failure {}: {}", id, e.what());
        Response r;
        r.status = 500;
        r.body = json{{"error", "internal error"}, {"id", id}}.dump();
        return r;
    }
}

void load_in_background(Handler& handler, std::filesystem::path checkpoint, std::thread& worker) {
    worker = std::thread([&handler, path = std::move(checkpoint)] {
        try {
            auto synth = infer::Synthesizer::from_file(path);
            spdlog::info("loaded {} ({}x{}, id {})", path.string(), synth->native_resolution(),
                         synth->native_resolution(), synth->model_id());
            handler.set_backend(std::move(synth));
        } catch (const std::exception& e) {
            spdlog::error("cannot load {}: {}", path.string(), e.what());
            handler.set_load_error(e.what());
        }
    });
}

// ---- socket server -------------------------------------------------------

struct Server::Impl {
    httplib::Server http;
};

Server::Server(ServiceConfig cfg)
    : cfg_(std::move(cfg)), handler_(std::make_shared<Handler>(cfg_.max_inflight)), impl_(std::make_unique<Impl>()) {
    auto h = handler_;
    auto reply = [](httplib::Response& out, const Response& in) {
        out.status = in.status;
        for (const auto& [k, v] : in.headers) {
            out.set_header(k, v);
        }
        out.set_content(in.body, in.content_type);
    };
    impl_->http.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                                     {"Access-Control-Expose-Headers",
                                      "X-Synthesis-Ms, X-Internal-Resolution, X-Checkpoint-Id"}});
    impl_->http.Get("/v1/health", [h, reply](const httplib::Request&, httplib::Response& res) { reply(res, h->health()); });
    impl_->http.Post("/v1/synthesize", [h, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, h->synthesize(req.body));
    });
    impl_->http.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Max-Age", "600");
    });
}

Server::~Server() { stop(); }

int Server::start() {
    int port = cfg_.port;
    if (port == 0) {
        port = impl_->http.bind_to_any_port(cfg_.host);
        if (port < 0) {
            throw std::runtime_error("cannot bind " + cfg_.host);
        }
    } else if (!impl_->http.bind_to_port(cfg_.host, port)) {
        throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    spdlog::info("listening on http://{}:{}", cfg_.host, port);
    return port;
}

void Server::wait() {
    if (thread_.joinable()) {
        thread_.join();
    }
}

void Server::stop() {
    impl_->http.stop();
    wait();
}

}  // namespace tgan::service
