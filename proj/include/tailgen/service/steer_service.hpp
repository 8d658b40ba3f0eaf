#pragma once

// HTTP front end for TrialRegistry. JSON everywhere; the push channel is server-sent events.

#include "tailgen/service/registry.hpp"

#include <httplib.h>

namespace tailgen {

inline constexpr const char* kDefaultHost = "127.0.0.1";
inline constexpr int kDefaultPort = 8715;
inline constexpr std::chrono::milliseconds kEventInterval{250};

class SteerService {
public:
    SteerService() { routes(); }
    ~SteerService() { stop(); }

    /// Binds; returns the bound port (an ephemeral one when port == 0) or -1.
    int bind(const std::string& host, int port) {
        if (port == 0) return server_.bind_to_any_port(host);
        return server_.bind_to_port(host, port) ? port : -1;
    }

    /// Serves until stop(). Call after bind().
    bool serve() { return server_.listen_after_bind(); }

    void wait_until_ready() const { server_.wait_until_ready(); }

    void stop() {
        registry_.shutdown();
        server_.stop();
    }

    TrialRegistry& registry() { return registry_; }

private:
    static void reply(httplib::Response& res, const ApiReply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    std::shared_ptr<LiveTrial> lookup(const httplib::Request& req, httplib::Response& res) {
        auto t = registry_.find(req.matches[1]);
        if (!t) reply(res, api_error(404, "unknown trial '" + std::string(req.matches[1]) + "'"));
        return t;
    }

    void routes() {
        server_.Post("/api/trials", [this](const httplib::Request& req, httplib::Response& res) {
            reply(res, registry_.create(req.body));
        });
        server_.Get("/api/trials", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, {200, registry_.list()});
        });
        server_.Post(R"(/api/trials/([^/]+)/(start|pause|resume|stop))",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         auto t = lookup(req, res);
                         if (!t) return;
                         const std::string op = req.matches[2];
                         if (op == "start") reply(res, t->start());
                         else if (op == "pause") reply(res, t->pause());
                         else if (op == "resume") reply(res, t->resume());
                         else reply(res, t->stop());
                     });
        server_.Get(R"(/api/trials/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
            if (auto t = lookup(req, res)) reply(res, {200, t->state_document()});
        });
        server_.Post(R"(/api/trials/([^/]+)/negative-clusters)",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         auto t = lookup(req, res);
                         if (!t) return;
                         Json body;
                         try {
                             body = Json::parse(req.body);
                         } catch (const nlohmann::json::parse_error& e) {
                             return reply(res, api_error(400, std::string("malformed JSON: ") + e.what()));
                         }
                         reply(res, t->add_negative_cluster(body));
                     });
        server_.Get(R"(/api/trials/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
            auto t = lookup(req, res);
            if (!t) return;
            res.set_header("Cache-Control", "no-cache");
            auto cursor = std::make_shared<LiveTrial::EventCursor>(t->subscribe());
            res.set_chunked_content_provider("text/event-stream", [t, cursor](size_t, httplib::DataSink& sink) {
                const auto started = std::chrono::steady_clock::now();
                auto [events, done] = t->poll_events(*cursor, kEventInterval);
                for (const auto& e : events) {
                    const std::string frame = "event: " + e.value("type", std::string("message")) + "\ndata: " + e.dump() + "\n\n";
                    if (!sink.write(frame.data(), frame.size())) return false;
                }
                if (done) {
                    sink.done();
                    return true;
                }
                // At most one batch per interval; intermediate iterations are coalesced.
                const auto elapsed = std::chrono::steady_clock::now() - started;
                if (!events.empty() && elapsed < kEventInterval) std::this_thread::sleep_for(kEventInterval - elapsed);
                return true;
            });
        });
    }

    httplib::Server server_;
    TrialRegistry registry_;
};

}  // namespace tailgen
