#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ibet/service/session_service.hpp"

namespace ibet::service {

struct HttpResult {
    int status = 200;
    nlohmann::json body;
};

/// Dispatches one request of the JSON API. `authorization` is the raw
/// Authorization header; when `token` is set it must read "Bearer <token>".
HttpResult route(SessionService& service, const std::string& method, const std::string& target, const std::string& body,
                 const std::string& authorization, const std::optional<std::string>& token);

/// Session id of a `/sessions/{id}/stream` target, if it is one.
std::optional<std::string> stream_target(const std::string& target);

/// Value of `token=` in the query string of a target.
std::optional<std::string> query_token(const std::string& target);

struct ServerOptions {
    std::string address = "127.0.0.1";
    /// 0 picks a free port.
    unsigned short port = 8080;
    std::optional<std::string> token;
    std::size_t threads = 2;
};

/// HTTP/1.1 JSON API plus WebSocket change stream.
class HttpServer {
public:
    HttpServer(SessionService& service, ServerOptions options);
    ~HttpServer();

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and starts the worker threads; returns the bound port.
    unsigned short start();
    void stop();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();

    unsigned short port() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ibet::service
