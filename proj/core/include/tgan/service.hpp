/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

#include <nlohmann/json.hpp>

#include "tgan/infer.hpp"

/// HTTP facade over a synthesis backend.
///
///   POST /v1/synthesize  JSON request -> image/png
///   GET  /v1/health      {status, checkpoint_id, resolution}
namespace tgan::service {

/// Request body problem mapped to an HTTP status (400 or 422).
class RequestError : public std::runtime_error {
public:
    RequestError(int status, std::string field, const std::string& message)
        : std::runtime_error(message), status_(status), field_(std::move(field)) {}

    [[nodiscard]] int status() const { return status_; }
    /// JSON path of the offending field, e.g. "texture_patches[1].image"; empty for the whole body.
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    int status_;
    std::string field_;
};

/// Parses and validates a synthesize request body. Unknown keys are rejected.
/// Throws RequestError.
infer::SynthesisRequest parse_synthesize_request(std::string_view body);
infer::SynthesisRequest parse_synthesize_request(const nlohmann::json& body);

/// Inverse of parse_synthesize_request for flat-color requests; used by clients and tests.
nlohmann::json to_dto(const infer::SynthesisRequest& req);

/// JSON Schema (draft 2020-12) of the request body.
const nlohmann::json& synthesize_schema();

struct ServiceConfig {
    std::string host = "127.0.0.1";
    /// 0 picks a free port.
    int port = 8080;
    int max_inflight = 4;
    std::string cors_origin = "*";
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
};

/// Routes and state shared by the socket server and in-process callers.
/// Reports 503 until a backend is installed.
class Handler {
public:
    explicit Handler(int max_inflight = 4);

    void set_backend(std::shared_ptr<const infer::Backend> backend);
    /// Marks loading as failed; health keeps answering 503 with the message.
    void set_load_error(std::string message);
    [[nodiscard]] std::shared_ptr<const infer::Backend> backend() const;

    [[nodiscard]] Response health() const;
    [[nodiscard]] Response synthesize(std::string_view body) const;

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const infer::Backend> backend_;
    std::string load_error_;
    int max_inflight_;
    mutable std::atomic<int> inflight_{0};
    mutable std::atomic<std::uint64_t> failures_{0};
};

/// Listening HTTP server running on its own thread.
class Server {
public:
    explicit Server(ServiceConfig cfg);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    Handler& handler() { return *handler_; }

    /// Binds and starts serving in the background; returns the bound port.
    /// Throws std::runtime_error when the address cannot be bound.
    int start();
    /// Blocks until stop() is called or the listener fails.
    void wait();
    void stop();

private:
    struct Impl;
    ServiceConfig cfg_;
    std::shared_ptr<Handler> handler_;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
};

/// Loads the checkpoint on a background thread while the server already
/// answers health probes with 503.
void load_in_background(Handler& handler, std::filesystem::path checkpoint, std::thread& worker);

}  // namespace tgan::service
