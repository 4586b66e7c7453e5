#pragma once
// End-to-end orchestration: alignment first, then entity matching and
// background-graph construction, then prompt assembly under a token budget,
// and a single generation call. The background graph reaches the model as
// deterministic linearized text.

#include <algorithm>
#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "merge/emkb.hpp"
#include "merge/error.hpp"
#include "merge/gateways.hpp"
#include "merge/hcma.hpp"
#include "merge/ner.hpp"
#include "merge/rmki.hpp"
#include "merge/text.hpp"

namespace merge {

struct CaptionInputs {
    std::string image_ref;
    AlignmentContext alignment;
    std::vector<EntityMatch> entities;  // deduplicated, descending similarity then name
    KnowledgeGraph graph;
};

struct Provenance {
    std::vector<std::string> matched_entities;
    std::vector<std::string> selected_sentences;
    std::string summary;
    size_t graph_triple_count = 0;
    size_t prompt_tokens = 0;
    size_t output_tokens = 0;
};

struct CaptionResult {
    std::string caption;
    Provenance provenance;
};

struct PipelineConfig {
    size_t n_ctx = 1024;     // prompt budget, estimated tokens
    size_t n_out = 50;       // generation cap, tokens
    size_t max_triples = 64; // graph lines offered to the prompt before budgeting
    HcmaConfig hcma;
    RmkiConfig rmki;
    std::shared_ptr<const Ner> ner;  // defaults to the heuristic tagger
    // Prompt token estimator; whitespace word count unless a provider-aware
    // estimator is configured.
    std::function<size_t(const std::string&)> token_estimator;
    // Per-stage wall-time sink (stage label, milliseconds); logging only.
    std::function<void(const std::string&, double)> stage_timing;

    size_t estimate(const std::string& s) const {
        return token_estimator ? token_estimator(s) : text::word_count(s);
    }
};

// Deterministic text form of the graph: `source relation target.` lines
// sorted by (source, target, relation), truncated to max_triples with a
// trailing `…and N more relations.` marker. Empty graph renders empty.
inline std::string linearize_graph(const KnowledgeGraph& g, size_t max_triples) {
    if (max_triples == 0)
        throw Error(ErrorKind::invalid_argument, "linearize_graph: max_triples must be positive");
    std::vector<const KnowledgeGraph::Edge*> edges;
    edges.reserve(g.edge_count());
    for (const auto& e : g.edges()) edges.push_back(&e);
    std::sort(edges.begin(), edges.end(),
              [](const KnowledgeGraph::Edge* a, const KnowledgeGraph::Edge* b) {
                  if (a->source != b->source) return a->source < b->source;
                  if (a->target != b->target) return a->target < b->target;
                  return a->relation < b->relation;
              });
    std::string out;
    size_t shown = std::min(edges.size(), max_triples);
    for (size_t i = 0; i < shown; ++i) {
        if (i) out += '\n';
        out += edges[i]->source + ' ' + edges[i]->relation + ' ' + edges[i]->target + '.';
    }
    if (edges.size() > shown) {
        if (!out.empty()) out += '\n';
        out += "…and " + std::to_string(edges.size() - shown) + " more relations.";
    }
    return out;
}

// The final prompt, kept in sections so the budget pass can trim with the
// right priorities. Section order inside the rendered text is fixed:
// entities, relevant sentences, summary, draft caption (with its key
// sentences), background relations, instruction. Empty sections are omitted.
struct AssembledPrompt {
    std::string entities_block;               // "Known entities: A; B."
    std::vector<std::string> sentences;       // relevant sentences S
    std::vector<std::string> summary_words;   // summary, word-split for tail trimming
    std::string hypothesis_text;
    std::vector<std::string> key_sentences;
    std::vector<std::string> graph_lines;     // linearized triples
    size_t graph_total_triples = 0;           // count before any truncation
    std::string instruction;

    std::string render() const {
        std::string out;
        auto add_line = [&](const std::string& line) {
            if (!out.empty()) out += '\n';
            out += line;
        };
        if (!entities_block.empty()) add_line(entities_block);
        if (!sentences.empty()) {
            add_line("Relevant sentences:");
            for (const auto& s : sentences) add_line("- " + s);
        }
        if (!summary_words.empty()) {
            std::string summary = "Article summary: ";
            for (size_t i = 0; i < summary_words.size(); ++i) {
                if (i) summary += ' ';
                summary += summary_words[i];
            }
            add_line(summary);
        }
        if (!hypothesis_text.empty()) add_line("Draft caption: " + hypothesis_text);
        if (!key_sentences.empty()) {
            add_line("Key sentences:");
            for (const auto& s : key_sentences) add_line("- " + s);
        }
        if (!graph_lines.empty()) {
            add_line("Background relations:");
            for (const auto& l : graph_lines) add_line(l);
            size_t hidden = graph_total_triples - graph_lines.size();
            if (hidden > 0) add_line("…and " + std::to_string(hidden) + " more relations.");
        }
        add_line(instruction);
        return out;
    }
};

// Bundles the parts and fixes ordering/dedup ahead of prompt construction.
inline CaptionInputs assemble_inputs(const std::string& image_ref,
                                     const AlignmentContext& alignment,
                                     const std::vector<EntityMatch>& entities,
                                     const KnowledgeGraph& graph) {
    CaptionInputs inputs;
    inputs.image_ref = image_ref;
    inputs.alignment = alignment;
    inputs.graph = graph;
    std::unordered_map<std::string, EntityMatch> best;
    for (const auto& e : entities) {
        auto [it, inserted] = best.emplace(e.entity_id, e);
        if (!inserted && e.similarity > it->second.similarity) it->second = e;
    }
    inputs.entities.reserve(best.size());
    for (auto& [id, m] : best) inputs.entities.push_back(std::move(m));
    std::sort(inputs.entities.begin(), inputs.entities.end(),
              [](const EntityMatch& a, const EntityMatch& b) {
                  if (a.similarity != b.similarity) return a.similarity > b.similarity;
                  return a.canonical_name < b.canonical_name;
              });
    return inputs;
}

inline AssembledPrompt build_prompt(const CaptionInputs& inputs, size_t max_triples) {
    AssembledPrompt p;
    if (!inputs.entities.empty()) {
        p.entities_block = "Known entities: ";
        for (size_t i = 0; i < inputs.entities.size(); ++i) {
            if (i) p.entities_block += "; ";
            p.entities_block += inputs.entities[i].canonical_name;
        }
        p.entities_block += '.';
    }
    p.sentences = inputs.alignment.relevant.sentences;
    p.summary_words = text::split_words(inputs.alignment.summary.text);
    p.hypothesis_text = inputs.alignment.hypothesis.text;
    p.key_sentences = inputs.alignment.hypothesis.key_sentences;
    p.graph_total_triples = inputs.graph.edge_count();
    std::string lin = linearize_graph(inputs.graph, max_triples);
    if (!lin.empty()) {
        size_t pos = 0;
        while (pos < lin.size()) {
            size_t nl = lin.find('\n', pos);
            size_t end = nl == std::string::npos ? lin.size() : nl;
            std::string line = lin.substr(pos, end - pos);
            // the renderer regenerates the truncation marker from counts
            if (line.rfind("…and ", 0) != 0) p.graph_lines.push_back(std::move(line));
            pos = end + 1;
        }
    }
    p.instruction =
        "Write one concise, factual news caption for this image, naming the entities shown.";
    return p;
}

// Trims the prompt to at most n_ctx estimated tokens. Priority order: graph
// triples from the end, then the summary tail, then key sentences, then
// relevant sentences; the draft caption, entities, and instruction are never
// trimmed. If those alone exceed the budget the prompt is irreducible.
inline AssembledPrompt enforce_budget(AssembledPrompt prompt, size_t n_ctx,
                                      const PipelineConfig& cfg = {}) {
    if (n_ctx < 64)
        throw Error(ErrorKind::invalid_argument, "pipeline/budget",
                    "n_ctx must be at least 64, got " + std::to_string(n_ctx));
    auto over = [&] { return cfg.estimate(prompt.render()) > n_ctx; };
    if (!over()) return prompt;
    while (over() && !prompt.graph_lines.empty()) prompt.graph_lines.pop_back();
    while (over() && !prompt.summary_words.empty()) prompt.summary_words.pop_back();
    while (over() && !prompt.key_sentences.empty()) prompt.key_sentences.pop_back();
    while (over() && !prompt.sentences.empty()) prompt.sentences.pop_back();
    if (over())
        throw Error(ErrorKind::budget_exceeded, "pipeline/budget",
                    "prompt is irreducible: instruction, entities, and draft caption alone "
                    "exceed the context budget of " +
                        std::to_string(n_ctx));
    return prompt;
}

// Single generation call under n_out, with full provenance recorded.
inline CaptionResult generate_caption(const CaptionInputs& inputs, ChatGateway& gateway,
                                      const PipelineConfig& cfg = {}) {
    AssembledPrompt prompt = build_prompt(inputs, cfg.max_triples);
    prompt = enforce_budget(std::move(prompt), cfg.n_ctx, cfg);

    ChatRequest req;
    ChatMessage user;
    user.role = Role::user;
    if (!inputs.image_ref.empty()) user.parts.push_back(ImageRefPart{inputs.image_ref});
    user.parts.push_back(TextPart{prompt.render()});
    req.messages.push_back(std::move(user));
    req.max_output_tokens = cfg.n_out;
    req.temperature = 0.0;
    req.response_schema = StructuredSchema::none;

    ChatResult completion;
    try {
        completion = gateway.complete(req);
    } catch (const Error& e) {
        detail::rethrow_with_stage(e, "pipeline/generate");
    }
    CaptionResult result;
    result.caption = text::trim(completion.text);
    if (result.caption.empty())
        throw Error(ErrorKind::provider, "pipeline/generate", "empty completion");
    if (completion.usage.output_tokens > cfg.n_out) {
        result.caption = text::truncate_words(result.caption, cfg.n_out);
        completion.usage.output_tokens = cfg.n_out;
    }
    for (const auto& e : inputs.entities) result.provenance.matched_entities.push_back(e.canonical_name);
    result.provenance.selected_sentences = inputs.alignment.relevant.sentences;
    result.provenance.summary = inputs.alignment.summary.text;
    result.provenance.graph_triple_count = inputs.graph.edge_count();
    result.provenance.prompt_tokens = completion.usage.prompt_tokens;
    result.provenance.output_tokens = completion.usage.output_tokens;
    return result;
}

// The whole run in the published order: alignment, entity matching on the
// image, background graph over the selected sentences, assembly, budget,
// generation. Every failure carries its stage label.
inline CaptionResult run_pipeline(const std::string& image_ref, const std::string& article,
                                  const EmkbStore& kb, Gateways& gateways,
                                  const PipelineConfig& cfg = {}) {
    if (text::trim(article).empty())
        throw Error(ErrorKind::invalid_argument, "pipeline", "article is empty");

    auto timed = [&](const std::string& stage, auto&& fn) {
        auto t0 = std::chrono::steady_clock::now();
        auto result = fn();
        if (cfg.stage_timing) {
            std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
            cfg.stage_timing(stage, dt.count());
        }
        return result;
    };

    AlignmentContext ctx =
        timed("hcma", [&] { return run_hcma(image_ref, article, *gateways.chat, cfg.hcma); });
    std::vector<EntityMatch> entities =
        timed("rmki/match", [&] { return match_entities(image_ref, kb, gateways, cfg.rmki); });

    KnowledgeGraph graph;
    if (!ctx.relevant.sentences.empty()) {
        std::shared_ptr<const Ner> ner = cfg.ner;
        if (!ner) {
            static const auto default_ner = std::make_shared<const GazetteerNer>();
            ner = default_ner;
        }
        graph = timed("rmki/kg", [&] {
            return build_background_kg(ctx.relevant.sentences, kb, gateways, *ner, cfg.rmki);
        });
    }

    CaptionInputs inputs = assemble_inputs(image_ref, ctx, entities, graph);
    return timed("generate", [&] { return generate_caption(inputs, *gateways.chat, cfg); });
}

inline nlohmann::ordered_json to_json(const CaptionResult& result) {
    nlohmann::ordered_json j;
    j["caption"] = result.caption;
    nlohmann::ordered_json p;
    p["matched_entities"] = result.provenance.matched_entities;
    p["selected_sentences"] = result.provenance.selected_sentences;
    p["summary"] = result.provenance.summary;
    p["graph_triple_count"] = result.provenance.graph_triple_count;
    p["prompt_tokens"] = result.provenance.prompt_tokens;
    p["output_tokens"] = result.provenance.output_tokens;
    j["provenance"] = std::move(p);
    return j;
}

}  // namespace merge
