#pragma once
// Minimal batch HTTP service in front of the pipeline.
//
//   POST /v1/caption        {"article_text", "image_ref"} -> CaptionResult
//   GET  /v1/entities/{id}  stored entity record
//   GET  /healthz           store stats
//
// Request concurrency is bounded by the worker count; shutdown stops
// accepting and drains in-flight requests up to the configured timeout. Error
// bodies never carry raw model output.

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "merge/emkb.hpp"
#include "merge/error.hpp"
#include "merge/gateways.hpp"
#include "merge/pipeline.hpp"

namespace merge {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 = pick any free port
    size_t workers = 4;
    double drain_timeout_seconds = 5.0;
};

class CaptionService {
public:
    CaptionService(std::shared_ptr<const EmkbStore> kb, Gateways gateways, PipelineConfig pipeline,
                   ServiceConfig config)
        : kb_(std::move(kb)),
          gateways_(std::move(gateways)),
          pipeline_(std::move(pipeline)),
          config_(std::move(config)) {
        if (!kb_) throw Error(ErrorKind::invalid_argument, "service requires a loaded store");
        const size_t workers = config_.workers ? config_.workers : 1;
        server_.new_task_queue = [workers] {
            return new httplib::ThreadPool(workers);
        };
        install_routes();
    }

    ~CaptionService() { shutdown(); }

    // Binds and serves on a background thread. Returns the bound port.
    int start() {
        int port = config_.port;
        if (port == 0) {
            port = server_.bind_to_any_port(config_.host);
            if (port <= 0) throw Error(ErrorKind::io, "cannot bind " + config_.host);
        } else if (!server_.bind_to_port(config_.host, port)) {
            throw Error(ErrorKind::io,
                        "cannot bind " + config_.host + ":" + std::to_string(port));
        }
        bound_port_ = port;
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        while (!server_.is_running() && !stopped_.load()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
        return port;
    }

    int port() const { return bound_port_; }

    // Atomically swaps the store snapshot between requests.
    void swap_kb(std::shared_ptr<const EmkbStore> kb) {
        std::lock_guard lock(kb_mu_);
        kb_ = std::move(kb);
    }

    // Stops accepting, waits for in-flight requests up to the drain timeout.
    // Returns true when fully drained.
    bool shutdown() {
        bool expected = false;
        if (!stopped_.compare_exchange_strong(expected, true)) return drained_;
        server_.stop();
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(config_.drain_timeout_seconds));
        while (active_.load() > 0 && std::chrono::steady_clock::now() < deadline)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        drained_ = active_.load() == 0;
        if (listener_.joinable()) {
            if (drained_)
                listener_.join();
            else
                listener_.detach();  // a stuck handler may outlive the drain window
        }
        return drained_;
    }

    size_t active_requests() const { return active_.load(); }

private:
    using Request = httplib::Request;
    using Response = httplib::Response;

    std::shared_ptr<const EmkbStore> store() const {
        std::lock_guard lock(kb_mu_);
        return kb_;
    }

    static void reply_json(Response& res, int status, const nlohmann::ordered_json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <typename Handler>
    auto tracked(Handler handler) {
        return [this, handler](const Request& req, Response& res) {
            ++active_;
            struct Guard {
                std::atomic<size_t>& a;
                ~Guard() { --a; }
            } guard{active_};
            handler(req, res);
        };
    }

    void install_routes() {
        server_.Post("/v1/caption", tracked([this](const Request& req, Response& res) {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception&) {
                reply_json(res, 400, {{"error", "body is not valid JSON"}});
                return;
            }
            if (!body.is_object() || !body.contains("article_text") ||
                !body["article_text"].is_string() || !body.contains("image_ref") ||
                !body["image_ref"].is_string()) {
                reply_json(res, 400,
                           {{"error", "body must carry string fields article_text and image_ref"}});
                return;
            }
            std::string article = body["article_text"].get<std::string>();
            std::string image_ref = body["image_ref"].get<std::string>();
            if (text::trim(article).empty()) {
                reply_json(res, 400, {{"error", "article_text is empty"}});
                return;
            }
            try {
                auto kb = store();
                CaptionResult result = run_pipeline(image_ref, article, *kb, gateways_, pipeline_);
                reply_json(res, 200, to_json(result));
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::transport || e.kind() == ErrorKind::provider) {
                    reply_json(res, 503, {{"error", "model gateway unavailable"},
                                          {"stage", e.stage()}});
                } else {
                    // no raw model output, no internal messages
                    reply_json(res, 500, {{"error", "internal error"}, {"stage", e.stage()}});
                }
            } catch (const std::exception&) {
                reply_json(res, 500, {{"error", "internal error"}});
            }
        }));

        server_.Get(R"(/v1/entities/(.+))", tracked([this](const Request& req, Response& res) {
            auto kb = store();
            auto rec = kb->find(req.matches[1].str());
            if (!rec) {
                reply_json(res, 404, {{"error", "unknown entity"}});
                return;
            }
            nlohmann::ordered_json j;
            j["entity_id"] = rec->entity_id;
            j["canonical_name"] = rec->canonical_name;
            j["entity_type"] = to_string(rec->entity_type);
            j["background_text"] = rec->background_text;
            j["subgraph"] = graph_to_json(rec->subgraph);
            auto images = nlohmann::ordered_json::array();
            for (const auto& img : rec->images)
                images.push_back({{"asset_id", img.asset_id},
                                  {"source", to_string(img.source)},
                                  {"uri", img.uri},
                                  {"faces", img.face_embeddings.size()}});
            j["images"] = std::move(images);
            reply_json(res, 200, j);
        }));

        server_.Get("/healthz", tracked([this](const Request&, Response& res) {
            auto kb = store();
            auto stats = kb->stats();
            reply_json(res, 200, {{"status", "ok"},
                                  {"entities", stats.entities},
                                  {"images", stats.images},
                                  {"face_vectors", stats.face_vectors},
                                  {"triples", stats.triples}});
        }));
    }

    std::shared_ptr<const EmkbStore> kb_;
    mutable std::mutex kb_mu_;
    Gateways gateways_;
    PipelineConfig pipeline_;
    ServiceConfig config_;
    httplib::Server server_;
    std::thread listener_;
    std::atomic<size_t> active_{0};
    std::atomic<bool> stopped_{false};
    bool drained_ = true;
    int bound_port_ = 0;
};

}  // namespace merge
