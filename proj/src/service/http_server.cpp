#include "ibet/service/http_server.hpp"

#include <condition_variable>
#include <deque>
#include <iostream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

namespace ibet::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& target) {
    const std::string path = target.substr(0, target.find('?'));
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos < path.size()) {
        if (path[pos] == '/') {
            ++pos;
            continue;
        }
        const std::size_t end = path.find('/', pos);
        parts.push_back(path.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
        if (end == std::string::npos) break;
        pos = end;
    }
    return parts;
}

HttpResult error_result(int status, const std::string& code, const std::string& message, const json& detail = json::object()) {
    json body{{"error", code}, {"message", message}};
    for (const auto& [k, v] : detail.items()) body[k] = v;
    return {status, body};
}

bool authorized(const std::string& authorization, const std::optional<std::string>& token) {
    return !token || authorization == "Bearer " + *token;
}

}  // namespace

std::optional<std::string> stream_target(const std::string& target) {
    const auto parts = split_path(target);
    if (parts.size() == 3 && parts[0] == "sessions" && parts[2] == "stream") return parts[1];
    return std::nullopt;
}

std::optional<std::string> query_token(const std::string& target) {
    const auto q = target.find('?');
    if (q == std::string::npos) return std::nullopt;
    std::string rest = target.substr(q + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        const std::size_t amp = rest.find('&', pos);
        const std::string kv = rest.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
        if (kv.rfind("token=", 0) == 0) return kv.substr(6);
        if (amp == std::string::npos) break;
        pos = amp + 1;
    }
    return std::nullopt;
}

HttpResult route(SessionService& service, const std::string& method, const std::string& target, const std::string& body,
                 const std::string& authorization, const std::optional<std::string>& token) {
    const auto parts = split_path(target);
    if (parts.size() == 1 && parts[0] == "health" && method == "GET") return {200, {{"ok", true}}};
    if (!authorized(authorization, token)) return error_result(401, "unauthorized", "missing or invalid bearer token");
    if (parts.empty() || parts[0] != "sessions") return error_result(404, "not-found", "no route for " + target);

    try {
        json request = json::object();
        if (method == "POST" && !body.empty()) {
            try {
                request = json::parse(body);
            } catch (const json::parse_error& e) {
                return error_result(400, "schema", std::string("malformed JSON body: ") + e.what());
            }
        }
        if (parts.size() == 1) {
            if (method == "POST") return {201, service.create_session(request)};
            if (method == "GET") return {200, {{"sessions", service.list_sessions()}}};
        } else if (parts.size() == 2) {
            if (method == "GET") return {200, service.get_session(parts[1])};
        } else if (parts.size() == 3) {
            const std::string& id = parts[1];
            const std::string& action = parts[2];
            if (method == "POST") {
                if (action == "bets") return {200, service.commit_bet(id, request)};
                if (action == "reveal") return {200, service.reveal(id)};
                if (action == "model") return {200, service.refit_model(id, request)};
                if (action == "extend") return {200, service.extend_session(id, request)};
            } else if (method == "GET") {
                if (action == "wealth") return {200, service.wealth(id)};
            }
            if (action == "bets" || action == "reveal" || action == "model" || action == "extend" || action == "wealth")
                return error_result(405, "method-not-allowed", method + " is not allowed on " + target);
        }
        if (parts.size() <= 2) return error_result(405, "method-not-allowed", method + " is not allowed on " + target);
        return error_result(404, "not-found", "no route for " + target);
    } catch (const ServiceError& e) {
        return error_result(http_status_for(e.code()), std::string(to_string(e.code())), e.what(), e.detail());
    } catch (const Error& e) {
        return error_result(http_status_for(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const std::exception& e) {
        return error_result(500, "internal", e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket&& socket, SessionService& service, std::string id)
        : ws_(std::move(socket)), service_(service), id_(std::move(id)) {}

    void run(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        std::weak_ptr<WsSession> weak = shared_from_this();
        try {
            token_ = service_.subscribe(id_, [weak](const SessionEvent& ev) {
                if (auto self = weak.lock()) {
                    std::string msg = ev.to_json().dump();
                    net::post(self->ws_.get_executor(), [self, msg = std::move(msg)]() mutable { self->send(std::move(msg)); });
                }
            });
            subscribed_ = true;
            send(json{{"type", "snapshot"}, {"session", id_}, {"state", service_.get_session(id_)}}.dump());
        } catch (const Error& e) {
            send(json{{"type", "error"}, {"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump());
        }
        do_read();
    }

    void do_read() {
        ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            if (subscribed_) service_.unsubscribe(id_, token_);
            subscribed_ = false;
            return;
        }
        // Clients only listen; anything they send is ignored.
        buffer_.consume(buffer_.size());
        do_read();
    }

    void send(std::string msg) {
        queue_.push_back(std::move(msg));
        if (queue_.size() > 1) return;
        do_write();
    }

    void do_write() {
        ws_.text(true);
        ws_.async_write(net::buffer(queue_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        if (ec) return;
        queue_.pop_front();
        if (!queue_.empty()) do_write();
    }

    websocket::stream<beast::tcp_stream> ws_;
    SessionService& service_;
    std::string id_;
    beast::flat_buffer buffer_;
    std::deque<std::string> queue_;
    std::uint64_t token_ = 0;
    bool subscribed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
public:
    HttpConnection(tcp::socket&& socket, SessionService& service, const std::optional<std::string>& token)
        : stream_(std::move(socket)), service_(service), token_(token) {}

    void run() {
        net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpConnection::do_read, shared_from_this()));
    }

private:
    void do_read() {
        req_ = {};
        parser_.emplace();
        parser_->body_limit(64 * 1024 * 1024);
        stream_.expires_after(std::chrono::seconds(60));
        http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec == http::error::end_of_stream) {
            beast::error_code ignored;
            stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
            return;
        }
        if (ec) return;
        req_ = parser_->release();
        const std::string target(req_.target());
        if (websocket::is_upgrade(req_)) {
            const auto id = stream_target(target);
            std::string auth(req_[http::field::authorization]);
            if (auth.empty()) {
                if (const auto t = query_token(target)) auth = "Bearer " + *t;
            }
            if (id && authorized(auth, token_)) {
                stream_.expires_never();
                std::make_shared<WsSession>(stream_.release_socket(), service_, *id)->run(std::move(req_));
                return;
            }
            const HttpResult r = id ? error_result(401, "unauthorized", "missing or invalid bearer token")
                                    : error_result(404, "not-found", "no stream at " + target);
            return respond(r);
        }
        const HttpResult r = route(service_, std::string(req_.method_string()), target, req_.body(),
                                   std::string(req_[http::field::authorization]), token_);
        respond(r);
    }

    void respond(const HttpResult& r) {
        auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), req_.version());
        res->set(http::field::server, "ibet");
        res->set(http::field::content_type, "application/json");
        res->set(http::field::access_control_allow_origin, "*");
        res->keep_alive(req_.keep_alive());
        res->body() = r.body.dump();
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (!res->keep_alive()) {
                beast::error_code ignored;
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                return;
            }
            self->do_read();
        });
    }

    beast::tcp_stream stream_;
    beast::flat_buffer buffer_;
    std::optional<http::request_parser<http::string_body>> parser_;
    http::request<http::string_body> req_;
    SessionService& service_;
    const std::optional<std::string>& token_;
};

}  // namespace

struct HttpServer::Impl {
    SessionService& service;
    ServerOptions options;
    net::io_context ioc;
    std::optional<tcp::acceptor> acceptor;
    std::vector<std::thread> threads;
    std::optional<net::executor_work_guard<net::io_context::executor_type>> work;
    unsigned short bound_port = 0;
    std::mutex mutex;
    std::condition_variable stopped_cv;
    bool stopped = false;

    Impl(SessionService& s, ServerOptions o) : service(s), options(std::move(o)) {}

    void do_accept() {
        acceptor->async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
            if (ec) return;
            std::make_shared<HttpConnection>(std::move(socket), service, options.token)->run();
            do_accept();
        });
    }
};

HttpServer::HttpServer(SessionService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

HttpServer::~HttpServer() { stop(); }

unsigned short HttpServer::start() {
    Impl& m = *impl_;
    const tcp::endpoint endpoint(net::ip::make_address(m.options.address), m.options.port);
    m.acceptor.emplace(m.ioc);
    m.acceptor->open(endpoint.protocol());
    m.acceptor->set_option(net::socket_base::reuse_address(true));
    m.acceptor->bind(endpoint);
    m.acceptor->listen(net::socket_base::max_listen_connections);
    m.bound_port = m.acceptor->local_endpoint().port();
    m.work.emplace(net::make_work_guard(m.ioc));
    m.do_accept();
    const std::size_t n = std::max<std::size_t>(1, m.options.threads);
    for (std::size_t i = 0; i < n; ++i) m.threads.emplace_back([&m] { m.ioc.run(); });
    return m.bound_port;
}

void HttpServer::stop() {
    Impl& m = *impl_;
    {
        std::lock_guard lock(m.mutex);
        if (m.stopped) return;
        m.stopped = true;
    }
    if (m.acceptor) {
        beast::error_code ignored;
        m.acceptor->close(ignored);
    }
    m.work.reset();
    m.ioc.stop();
    for (auto& t : m.threads)
        if (t.joinable()) t.join();
    m.stopped_cv.notify_all();
}

void HttpServer::wait() {
    Impl& m = *impl_;
    std::unique_lock lock(m.mutex);
    m.stopped_cv.wait(lock, [&] { return m.stopped; });
}

unsigned short HttpServer::port() const noexcept { return impl_->bound_port; }

}  // namespace ibet::service
