#pragma once
// Command-line surface: kb build/dedup/stats/query, run, eval, fixtures,
// serve. Everything is callable in-process through run_cli so tests exercise
// the same code path as the binary.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 gateway error.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "merge/config.hpp"
#include "merge/emkb.hpp"
#include "merge/error.hpp"
#include "merge/ingest.hpp"
#include "merge/metrics.hpp"
#include "merge/ner.hpp"
#include "merge/pipeline.hpp"
#include "merge/service.hpp"

namespace merge::cli {

inline int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::usage:
            return 1;
        case ErrorKind::transport:
        case ErrorKind::provider:
        case ErrorKind::structured_output:
            return 3;
        case ErrorKind::budget_exceeded:
            // an irreducible prompt is an input problem; a spent gateway
            // token budget is a gateway problem
            return e.stage() == "pipeline/budget" ? 2 : 3;
        default:
            return 2;
    }
}

// ---------------------------------------------------------------------------
// kb subcommands
// ---------------------------------------------------------------------------

// Inline-embedding entity record, the `kb build` input format: embeddings as
// JSON float arrays instead of byte offsets.
inline EntityRecord entity_record_from_inline_json(const nlohmann::json& j) {
    EntityRecord rec;
    rec.entity_id = j.at("entity_id").get<std::string>();
    rec.canonical_name = j.at("canonical_name").get<std::string>();
    rec.entity_type = entity_type_from_string(j.value("entity_type", "OTHER"));
    rec.background_text = j.value("background_text", std::string());
    if (j.contains("subgraph")) rec.subgraph = graph_from_json(j["subgraph"]);
    if (j.contains("images")) {
        for (const auto& ij : j["images"]) {
            ImageAsset img;
            img.asset_id = ij.at("asset_id").get<std::string>();
            img.source = image_source_from_string(ij.value("source", "user"));
            img.uri = ij.value("uri", std::string());
            img.image_embedding = EmbeddingVector(ij.at("image_embedding").get<std::vector<float>>());
            if (ij.contains("face_embeddings"))
                for (const auto& f : ij["face_embeddings"])
                    img.face_embeddings.push_back(EmbeddingVector(f.get<std::vector<float>>()));
            rec.images.push_back(std::move(img));
        }
    }
    return rec;
}

inline std::vector<EmbeddingVector> read_vectors_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    std::vector<EmbeddingVector> out;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, path.string() + ": " + e.what());
        }
        if (j.is_array() && !j.empty() && j[0].is_array()) {
            for (const auto& v : j) out.push_back(EmbeddingVector(v.get<std::vector<float>>()));
        } else {
            out.push_back(EmbeddingVector(j.get<std::vector<float>>()));
        }
    }
    return out;
}

inline int cmd_kb_build(const std::string& entities_file, const std::string& out_dir,
                        size_t face_dim, size_t image_dim, size_t image_cap, double delta,
                        std::ostream& out) {
    std::ifstream in(entities_file);
    if (!in) throw Error(ErrorKind::io, "cannot read " + entities_file);
    std::vector<EntityRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            records.push_back(entity_record_from_inline_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::data,
                        entities_file + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (face_dim == 0 || image_dim == 0) {
        for (const auto& rec : records)
            for (const auto& img : rec.images) {
                if (image_dim == 0) image_dim = img.image_embedding.dim();
                if (face_dim == 0 && !img.face_embeddings.empty())
                    face_dim = img.face_embeddings.front().dim();
            }
        if (image_dim == 0)
            throw Error(ErrorKind::data,
                        "cannot infer image dim: no asset embeddings in " + entities_file);
        if (face_dim == 0) face_dim = image_dim;
    }
    EmkbStore store(StoreConfig{face_dim, image_dim, image_cap, delta});
    for (auto& rec : records) store.upsert_entity(std::move(rec));
    store.save(out_dir);
    auto stats = store.stats();
    out << "built store at " << out_dir << ": " << stats.entities << " entities, " << stats.images
        << " images, " << stats.face_vectors << " face vectors, " << stats.triples << " triples\n";
    return 0;
}

inline int cmd_kb_dedup(const std::string& kb_dir, double delta, const std::string& holdout_file,
                        const std::string& out_dir, std::ostream& out) {
    EmkbStore store = EmkbStore::load(kb_dir);
    std::vector<EmbeddingVector> holdout;
    if (!holdout_file.empty()) holdout = read_vectors_file(holdout_file);
    auto [removed, rejected] = store.apply_dedup(delta, holdout);
    store.save(out_dir.empty() ? kb_dir : out_dir);
    out << "dedup removed " << removed << " images";
    if (rejected) out << " (plus " << rejected << " zero-norm embeddings rejected)";
    out << "\n";
    return 0;
}

inline int cmd_kb_stats(const std::string& kb_dir, std::ostream& out) {
    EmkbStore store = EmkbStore::load(kb_dir);
    auto stats = store.stats();
    out << "entities " << stats.entities << "\nimages " << stats.images << "\nface_vectors "
        << stats.face_vectors << "\ntriples " << stats.triples << "\n";
    return 0;
}

inline int cmd_kb_query(const std::string& kb_dir, const std::string& embedding_file,
                        const std::string& modality, size_t k, std::ostream& out) {
    Modality m;
    if (modality == "face")
        m = Modality::face;
    else if (modality == "image")
        m = Modality::image;
    else
        throw Error(ErrorKind::usage, "modality must be face or image");
    EmkbStore store = EmkbStore::load(kb_dir);
    auto vectors = read_vectors_file(embedding_file);
    if (vectors.empty()) throw Error(ErrorKind::data, "no embedding in " + embedding_file);
    for (const auto& hit : store.nearest_entities(vectors.front(), m, k)) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", hit.similarity);
        out << hit.entity_id << '\t' << hit.asset_id << '\t' << buf << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunStats {
    size_t processed = 0;
    size_t failed = 0;
    size_t skipped = 0;
};

// Batch runner: W workers over one immutable store snapshot, output records
// written in input order (so byte-identical across worker counts), inline
// error records for per-record failures, resumable on article_id presence.
inline RunStats run_batch(const std::string& input, const std::string& output,
                          const EmkbStore& kb, const RunConfig& cfg, bool resume, bool fail_fast,
                          std::ostream& log) {
    std::unordered_set<std::string> done;
    if (resume && std::filesystem::exists(output)) {
        std::ifstream prior(output);
        std::string line;
        while (std::getline(prior, line)) {
            if (text::trim(line).empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                if (j.contains("article_id")) done.insert(j["article_id"].get<std::string>());
            } catch (const nlohmann::json::exception&) {
                // unreadable tail line (e.g. interrupted write): reprocess that record
            }
        }
    }

    std::ifstream in(input);
    if (!in) throw Error(ErrorKind::io, "cannot read corpus " + input);
    std::ofstream out(output, resume ? std::ios::app : std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + output);

    Gateways gateways = cfg.make_gateways(kb.config());
    auto ner = GazetteerNer::from_store(kb);
    PipelineConfig pcfg = cfg.pipeline_config(ner);
    std::mutex log_mu;

    struct Task {
        std::string raw;
        size_t line_no;
    };
    struct Outcome {
        std::string line;  // output record, empty when skipped
        std::optional<Error> error;
    };

    auto process = [&](const Task& task) -> Outcome {
        // best-effort id so even unparseable records get an addressable error line
        std::string article_id = "line" + std::to_string(task.line_no);
        try {
            auto j = nlohmann::json::parse(task.raw);
            if (j.contains("article_id") && j["article_id"].is_string())
                article_id = j["article_id"].get<std::string>();
        } catch (const nlohmann::json::exception&) {
        }
        auto started = std::chrono::steady_clock::now();
        try {
            ArticleRecord rec = parse_canonical_record(task.raw);
            PipelineConfig rec_cfg = pcfg;
            rec_cfg.stage_timing = [&](const std::string& stage, double ms) {
                std::lock_guard lk(log_mu);
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", ms);
                log << "[" << article_id << "] " << stage << " " << buf << " ms\n";
            };
            CaptionResult result = run_pipeline(rec.image_ref, rec.body, kb, gateways, rec_cfg);
            nlohmann::ordered_json j;
            j["article_id"] = rec.article_id;
            nlohmann::ordered_json body = to_json(result);
            j["caption"] = body["caption"];
            j["provenance"] = body["provenance"];
            {
                std::chrono::duration<double, std::milli> dt =
                    std::chrono::steady_clock::now() - started;
                std::lock_guard lk(log_mu);
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", dt.count());
                log << "[" << article_id << "] done " << buf << " ms\n";
            }
            return Outcome{j.dump(), std::nullopt};
        } catch (const Error& e) {
            nlohmann::ordered_json j;
            j["article_id"] = article_id;
            j["error"] = {{"stage", e.stage()}, {"kind", to_string(e.kind())}, {"message", e.what()}};
            {
                std::lock_guard lk(log_mu);
                log << "[" << article_id << "] failed at " << (e.stage().empty() ? "input" : e.stage())
                    << ": " << e.what() << "\n";
            }
            return Outcome{j.dump(), e};
        }
    };

    RunStats stats;
    const size_t workers = std::max<size_t>(1, cfg.workers);
    const size_t chunk = workers * 4;
    std::string line;
    size_t line_no = 0;
    bool aborted = false;
    std::optional<Error> first_error;

    while (!aborted) {
        std::vector<Task> batch;
        while (batch.size() < chunk && std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            // resumability is keyed on article_id presence in the output file
            if (!done.empty()) {
                try {
                    auto j = nlohmann::json::parse(line);
                    if (j.contains("article_id") &&
                        done.count(j["article_id"].get<std::string>())) {
                        ++stats.skipped;
                        continue;
                    }
                } catch (const nlohmann::json::exception&) {
                    // invalid line: fall through, becomes an inline error record
                }
            }
            batch.push_back(Task{line, line_no});
        }
        if (batch.empty()) break;

        std::vector<Outcome> outcomes(batch.size());
        std::atomic<size_t> next{0};
        auto worker = [&] {
            for (size_t i = next.fetch_add(1); i < batch.size(); i = next.fetch_add(1))
                outcomes[i] = process(batch[i]);
        };
        if (workers == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }

        for (auto& o : outcomes) {
            out << o.line << '\n';
            ++stats.processed;
            if (o.error) {
                ++stats.failed;
                if (fail_fast && !first_error) {
                    first_error = o.error;
                    aborted = true;
                }
            }
        }
        out.flush();
    }

    {
        std::lock_guard lk(log_mu);
        log << "run complete: " << stats.processed << " processed, " << stats.failed
            << " failed, " << stats.skipped << " skipped\n";
    }
    if (first_error) throw *first_error;
    return stats;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline std::string json_string_or(const nlohmann::json& j, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (j.contains(k) && j[k].is_string()) return j[k].get<std::string>();
    return {};
}

inline int cmd_eval(const std::string& predictions_file, const std::string& gold_file,
                    const std::string& report_file, const std::string& kb_dir, bool macro,
                    std::ostream& out) {
    auto read_jsonl = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::io, "cannot read " + path);
        std::vector<nlohmann::json> records;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            try {
                records.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::data, path + " line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return records;
    };

    std::map<std::string, std::string> candidates;
    for (const auto& j : read_jsonl(predictions_file)) {
        std::string id = json_string_or(j, {"item_id", "article_id"});
        std::string caption = json_string_or(j, {"candidate", "caption"});
        if (id.empty() || caption.empty()) continue;  // error records become orphans
        candidates[id] = caption;
    }

    std::map<std::string, std::vector<std::string>> references;
    for (const auto& j : read_jsonl(gold_file)) {
        std::string id = json_string_or(j, {"item_id", "article_id"});
        if (id.empty()) continue;
        std::vector<std::string> refs;
        if (j.contains("references") && j["references"].is_array())
            for (const auto& r : j["references"]) refs.push_back(r.get<std::string>());
        std::string single = json_string_or(j, {"gold_caption", "caption", "candidate"});
        if (refs.empty() && !single.empty()) refs.push_back(single);
        if (!refs.empty()) references[id] = std::move(refs);
    }

    std::vector<std::string> orphans;
    for (const auto& [id, c] : candidates)
        if (!references.count(id)) orphans.push_back("prediction-only: " + id);
    for (const auto& [id, r] : references)
        if (!candidates.count(id)) orphans.push_back("gold-only: " + id);
    if (!orphans.empty()) {
        std::string msg = "item_ids are not aligned (" + std::to_string(orphans.size()) + "): ";
        for (size_t i = 0; i < orphans.size() && i < 10; ++i) {
            if (i) msg += ", ";
            msg += orphans[i];
        }
        if (orphans.size() > 10) msg += ", ...";
        throw Error(ErrorKind::data, msg);
    }
    if (candidates.empty()) throw Error(ErrorKind::data, "no aligned items to evaluate");

    EvalCorpus corpus;
    for (const auto& [id, caption] : candidates)
        corpus.items.push_back(EvalItem{id, caption, references.at(id)});

    std::shared_ptr<Ner> ner;
    if (!kb_dir.empty()) {
        EmkbStore store = EmkbStore::load(kb_dir);
        ner = GazetteerNer::from_store(store);
    } else {
        ner = std::make_shared<GazetteerNer>();
    }
    EvalReport report = evaluate(corpus, *ner, EntityPrfOptions{!macro});
    out << render_report(report);
    if (!report_file.empty()) {
        std::ofstream rf(report_file, std::ios::trunc);
        if (!rf) throw Error(ErrorKind::io, "cannot write " + report_file);
        rf << to_json(report).dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

inline std::atomic<bool>& stop_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

inline int cmd_serve(const std::string& kb_dir, const RunConfig& cfg, const std::string& host,
                     int port, double drain_timeout, std::ostream& out) {
    auto kb = std::make_shared<EmkbStore>(EmkbStore::load(kb_dir));
    Gateways gateways = cfg.make_gateways(kb->config());
    PipelineConfig pcfg = cfg.pipeline_config(GazetteerNer::from_store(*kb));
    ServiceConfig scfg;
    scfg.host = host;
    scfg.port = port;
    scfg.workers = cfg.workers;
    scfg.drain_timeout_seconds = drain_timeout;
    CaptionService service(kb, std::move(gateways), std::move(pcfg), scfg);
    int bound = service.start();
    out << "serving on " << host << ":" << bound << " (workers " << cfg.workers << ")\n" << std::flush;

    stop_flag().store(false);
    std::signal(SIGINT, [](int) { stop_flag().store(true); });
    std::signal(SIGTERM, [](int) { stop_flag().store(true); });
    while (!stop_flag().load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    bool drained = service.shutdown();
    out << (drained ? "drained and stopped\n" : "stopped with undrained requests\n");
    return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"MERGE retrieval-augmented news-image-captioning engine"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_file;

    // shared flag plumbing; flags win over the config file
    struct Overrides {
        std::optional<std::string> gateway, mock_script, prompt_dir;
        std::optional<double> delta, tau_face, tau_clip, face_conf;
        std::optional<size_t> n_ctx, n_out, workers, retry_limit, max_triples;
        std::optional<uint64_t> seed;
        std::optional<std::string> http_base, http_model;
    } ov;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "versioned JSON config file");
        cmd->add_option_function<std::string>(
            "--gateway", [&](const std::string& v) { ov.gateway = v; }, "mock|http");
        cmd->add_option_function<std::string>(
            "--mock-script", [&](const std::string& v) { ov.mock_script = v; },
            "scripted-response file for the mock gateway");
        cmd->add_option_function<std::string>(
            "--prompt-dir", [&](const std::string& v) { ov.prompt_dir = v; },
            "directory of prompt template overrides");
        cmd->add_option_function<double>("--delta", [&](double v) { ov.delta = v; },
                                         "image dedup threshold");
        cmd->add_option_function<double>("--tau-face", [&](double v) { ov.tau_face = v; },
                                         "face match similarity floor");
        cmd->add_option_function<double>("--tau-clip", [&](double v) { ov.tau_clip = v; },
                                         "image match similarity floor");
        cmd->add_option_function<double>("--face-conf", [&](double v) { ov.face_conf = v; },
                                         "face detection confidence threshold");
        cmd->add_option_function<size_t>("--n-ctx", [&](size_t v) { ov.n_ctx = v; },
                                         "prompt token budget");
        cmd->add_option_function<size_t>("--n-out", [&](size_t v) { ov.n_out = v; },
                                         "generation token cap");
        cmd->add_option_function<size_t>("--workers", [&](size_t v) { ov.workers = v; },
                                         "concurrent pipeline runs");
        cmd->add_option_function<size_t>("--retry-limit", [&](size_t v) { ov.retry_limit = v; },
                                         "gateway/stage retry limit");
        cmd->add_option_function<size_t>("--max-triples", [&](size_t v) { ov.max_triples = v; },
                                         "graph triples offered to the prompt");
        cmd->add_option_function<uint64_t>("--seed", [&](uint64_t v) { ov.seed = v; },
                                           "mock provider content-hash salt");
        cmd->add_option_function<std::string>(
            "--http-base-url", [&](const std::string& v) { ov.http_base = v; },
            "chat-completion endpoint base URL");
        cmd->add_option_function<std::string>(
            "--http-model", [&](const std::string& v) { ov.http_model = v; },
            "model name sent on the wire");
    };

    auto finalize_cfg = [&]() {
        if (!config_file.empty()) cfg = RunConfig::from_file(config_file);
        if (ov.gateway) cfg.gateway = *ov.gateway;
        if (ov.mock_script) cfg.mock_script = *ov.mock_script;
        if (ov.prompt_dir) cfg.prompt_dir = *ov.prompt_dir;
        if (ov.delta) cfg.delta = *ov.delta;
        if (ov.tau_face) cfg.tau_face = *ov.tau_face;
        if (ov.tau_clip) cfg.tau_clip = *ov.tau_clip;
        if (ov.face_conf) cfg.face_conf = *ov.face_conf;
        if (ov.n_ctx) cfg.n_ctx = *ov.n_ctx;
        if (ov.n_out) cfg.n_out = *ov.n_out;
        if (ov.workers) cfg.workers = *ov.workers;
        if (ov.retry_limit) cfg.retry_limit = *ov.retry_limit;
        if (ov.max_triples) cfg.max_triples = *ov.max_triples;
        if (ov.seed) cfg.seed = *ov.seed;
        if (ov.http_base) cfg.http.base_url = *ov.http_base;
        if (ov.http_model) cfg.http.model = *ov.http_model;
        try {
            cfg.validate();
        } catch (const Error& e) {
            throw Error(ErrorKind::usage, e.what());
        }
    };

    // --- kb ---
    auto* kb_cmd = app.add_subcommand("kb", "knowledge-base tooling");
    kb_cmd->require_subcommand(1);

    std::string kb_dir, entities_file, holdout_file, out_dir, embedding_file;
    std::string modality = "image";
    size_t face_dim = 0, image_dim = 0, image_cap = 5, query_k = 1;
    double kb_delta = 0.95;

    auto* kb_build = kb_cmd->add_subcommand("build", "ingest entity records into a store");
    kb_build->add_option("--entities", entities_file, "entity records with inline embeddings")
        ->required();
    kb_build->add_option("--out", out_dir, "store directory")->required();
    kb_build->add_option("--face-dim", face_dim, "face embedding dim (inferred when omitted)");
    kb_build->add_option("--image-dim", image_dim, "image embedding dim (inferred when omitted)");
    kb_build->add_option("--image-cap", image_cap, "max images per entity");
    kb_build->add_option("--delta", kb_delta, "store dedup threshold");

    auto* kb_dedup = kb_cmd->add_subcommand("dedup", "apply the delta dedup filter");
    kb_dedup->add_option("--kb", kb_dir, "store directory")->required();
    kb_dedup->add_option("--delta", kb_delta, "cosine threshold");
    kb_dedup->add_option("--holdout", holdout_file, "holdout vectors (JSON arrays, one per line)");
    kb_dedup->add_option("--out", out_dir, "write the filtered store here (default: in place)");

    auto* kb_stats = kb_cmd->add_subcommand("stats", "print store counts");
    kb_stats->add_option("--kb", kb_dir, "store directory")->required();

    auto* kb_query = kb_cmd->add_subcommand("query", "nearest entities for an embedding");
    kb_query->add_option("--kb", kb_dir, "store directory")->required();
    kb_query->add_option("--embedding", embedding_file, "query embedding file")->required();
    kb_query->add_option("--modality", modality, "face|image");
    kb_query->add_option("--k", query_k, "hits to return");

    // --- run ---
    std::string input_file, output_file;
    bool resume = false, fail_fast = false;
    auto* run_cmd = app.add_subcommand("run", "caption a corpus");
    run_cmd->add_option("--input", input_file, "canonical_jsonl corpus")->required();
    run_cmd->add_option("--kb", kb_dir, "store directory")->required();
    run_cmd->add_option("--out", output_file, "output records (jsonl)")->required();
    run_cmd->add_flag("--resume", resume, "skip article_ids already present in the output");
    run_cmd->add_flag("--fail-fast", fail_fast, "abort on the first record failure");
    add_common(run_cmd);

    // --- eval ---
    std::string predictions_file, gold_file, report_file, eval_kb;
    bool macro = false;
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against gold captions");
    eval_cmd->add_option("--predictions", predictions_file, "prediction records")->required();
    eval_cmd->add_option("--gold", gold_file, "gold records")->required();
    eval_cmd->add_option("--out", report_file, "write the JSON report here");
    eval_cmd->add_option("--kb", eval_kb, "store to seed the entity gazetteer");
    eval_cmd->add_flag("--macro", macro, "macro-average entity scores over items");

    // --- fixtures ---
    uint64_t fx_seed = 42;
    size_t fx_n = 10;
    std::string fx_corpus, fx_kb;
    auto* fx_cmd = app.add_subcommand("fixtures", "generate a synthetic corpus + store");
    fx_cmd->add_option("--seed", fx_seed, "generator seed");
    fx_cmd->add_option("--n", fx_n, "record count");
    fx_cmd->add_option("--out-corpus", fx_corpus, "corpus output path")->required();
    fx_cmd->add_option("--out-kb", fx_kb, "store output directory")->required();

    // --- serve ---
    std::string host = "127.0.0.1";
    int port = 8080;
    double drain_timeout = 5.0;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP captioning service");
    serve_cmd->add_option("--kb", kb_dir, "store directory")->required();
    serve_cmd->add_option("--host", host, "bind host");
    serve_cmd->add_option("--port", port, "bind port (0 = any)");
    serve_cmd->add_option("--drain-timeout", drain_timeout, "shutdown drain window, seconds");
    add_common(serve_cmd);

    try {
        std::vector<const char*> argv;
        argv.push_back("merge");
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return 1;
    }

    try {
        if (kb_build->parsed())
            return cmd_kb_build(entities_file, out_dir, face_dim, image_dim, image_cap, kb_delta, out);
        if (kb_dedup->parsed()) return cmd_kb_dedup(kb_dir, kb_delta, holdout_file, out_dir, out);
        if (kb_stats->parsed()) return cmd_kb_stats(kb_dir, out);
        if (kb_query->parsed()) return cmd_kb_query(kb_dir, embedding_file, modality, query_k, out);
        if (run_cmd->parsed()) {
            finalize_cfg();
            EmkbStore kb = EmkbStore::load(kb_dir);
            run_batch(input_file, output_file, kb, cfg, resume, fail_fast, err);
            return 0;
        }
        if (eval_cmd->parsed())
            return cmd_eval(predictions_file, gold_file, report_file, eval_kb, macro, out);
        if (fx_cmd->parsed()) {
            FixtureSet fs = make_fixtures(fx_seed, fx_n);
            write_corpus(fx_corpus, fs.records);
            fs.kb->save(fx_kb);
            out << "wrote " << fs.records.size() << " records to " << fx_corpus << " and "
                << fs.kb->entity_count() << " entities to " << fx_kb << "\n";
            return 0;
        }
        if (serve_cmd->parsed()) {
            finalize_cfg();
            return cmd_serve(kb_dir, cfg, host, port, drain_timeout, out);
        }
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind())
            << (e.stage().empty() ? "" : ", " + e.stage()) << "): " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    err << "no subcommand\n";
    return 1;
}

}  // namespace merge::cli
