#pragma once
// Run configuration: one struct holding every tunable (thresholds, budgets,
// retry limits, worker count), loadable from a versioned JSON config file
// with flag overrides applied by the CLI. The API key is never part of the
// file; it comes from MERGE_API_KEY.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "merge/error.hpp"
#include "merge/gateways.hpp"
#include "merge/gateways_http.hpp"
#include "merge/hcma.hpp"
#include "merge/ner.hpp"
#include "merge/pipeline.hpp"
#include "merge/prompts.hpp"
#include "merge/rmki.hpp"

namespace merge {

constexpr int kConfigFileVersion = 1;

struct RunConfig {
    std::string kb_path;
    std::string gateway = "mock";  // mock | http
    HttpChatConfig http;
    std::string mock_script;  // optional scripted-response file for the mock
    // content-hash salt for the mock providers; must match the salt the
    // knowledge-base embeddings were generated with (fixtures use 0)
    uint64_t seed = 0;

    double delta = 0.95;
    double tau_face = 0.4;
    double tau_clip = 0.25;
    double face_conf = 0.8;
    size_t n_ctx = 1024;
    size_t n_out = 50;
    size_t max_triples = 64;
    size_t retry_limit = 3;
    size_t workers = 1;
    std::string prompt_dir;  // optional template overrides

    void validate() const {
        if (!(delta > 0.0 && delta <= 1.0))
            throw Error(ErrorKind::invalid_argument, "delta must be in (0, 1]");
        if (tau_face < -1.0 || tau_face > 1.0 || tau_clip < -1.0 || tau_clip > 1.0)
            throw Error(ErrorKind::invalid_argument, "similarity floors must be in [-1, 1]");
        if (face_conf < 0.0 || face_conf > 1.0)
            throw Error(ErrorKind::invalid_argument, "face confidence threshold must be in [0, 1]");
        if (n_ctx < 64) throw Error(ErrorKind::invalid_argument, "n_ctx must be at least 64");
        if (n_out < 1) throw Error(ErrorKind::invalid_argument, "n_out must be at least 1");
        if (workers < 1) throw Error(ErrorKind::invalid_argument, "workers must be at least 1");
        if (gateway != "mock" && gateway != "http")
            throw Error(ErrorKind::invalid_argument, "gateway must be mock or http");
    }

    static RunConfig from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::io, "cannot read config " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, "config is not valid JSON: " + std::string(e.what()));
        }
        int version = j.value("version", 0);
        if (version != kConfigFileVersion)
            throw Error(ErrorKind::version, "config version " + std::to_string(version) +
                                                " is not supported (expected " +
                                                std::to_string(kConfigFileVersion) + ")");
        RunConfig cfg;
        cfg.kb_path = j.value("kb_path", cfg.kb_path);
        cfg.gateway = j.value("gateway", cfg.gateway);
        cfg.mock_script = j.value("mock_script", cfg.mock_script);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.delta = j.value("delta", cfg.delta);
        cfg.tau_face = j.value("tau_face", cfg.tau_face);
        cfg.tau_clip = j.value("tau_clip", cfg.tau_clip);
        cfg.face_conf = j.value("face_conf", cfg.face_conf);
        cfg.n_ctx = j.value("n_ctx", cfg.n_ctx);
        cfg.n_out = j.value("n_out", cfg.n_out);
        cfg.max_triples = j.value("max_triples", cfg.max_triples);
        cfg.retry_limit = j.value("retry_limit", cfg.retry_limit);
        cfg.workers = j.value("workers", cfg.workers);
        cfg.prompt_dir = j.value("prompt_dir", cfg.prompt_dir);
        if (j.contains("http") && j["http"].is_object()) {
            const auto& h = j["http"];
            cfg.http.base_url = h.value("base_url", cfg.http.base_url);
            cfg.http.model = h.value("model", cfg.http.model);
            cfg.http.path = h.value("path", cfg.http.path);
            cfg.http.timeout_seconds = h.value("timeout_seconds", cfg.http.timeout_seconds);
        }
        cfg.validate();
        return cfg;
    }

    prompts::TemplateSet templates() const {
        return prompt_dir.empty() ? prompts::TemplateSet{} : prompts::load_templates(prompt_dir);
    }

    PipelineConfig pipeline_config(std::shared_ptr<const Ner> ner = nullptr) const {
        PipelineConfig p;
        p.n_ctx = n_ctx;
        p.n_out = n_out;
        p.max_triples = max_triples;
        p.hcma.retry_limit = retry_limit;
        p.rmki.retry_limit = retry_limit;
        p.rmki.face_conf_threshold = face_conf;
        p.rmki.tau_face = tau_face;
        p.rmki.tau_clip = tau_clip;
        auto tpl = templates();
        p.hcma.templates = tpl;
        p.rmki.templates = tpl;
        p.ner = std::move(ner);
        return p;
    }

    Gateways make_gateways(const StoreConfig& dims) const {
        Gateways g;
        RetryPolicy retry;
        retry.retry_limit = retry_limit;
        std::shared_ptr<ChatProvider> chat;
        if (gateway == "http") {
            HttpChatConfig http_cfg = http;
            chat = std::make_shared<HttpChatProvider>(http_cfg);
        } else if (!mock_script.empty()) {
            chat = std::make_shared<MockChatProvider>(MockChatProvider::from_script_file(mock_script, seed));
        } else {
            chat = std::make_shared<MockChatProvider>(std::vector<MockChatProvider::Rule>{}, seed);
        }
        g.chat = std::make_shared<ChatGateway>(std::move(chat), retry);
        g.vision = std::make_shared<VisionGateway>(
            std::make_shared<MockVisionProvider>(dims.image_dim, dims.face_dim, seed),
            dims.image_dim, dims.face_dim);
        return g;
    }
};

}  // namespace merge
