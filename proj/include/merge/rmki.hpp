#pragma once
// Retrieval-driven multimodal knowledge integration.
//
// Entity matching: faces detected in the image are matched top-1 against the
// knowledge base's face vectors; images without faces fall back to image
// embeddings. Background graph construction: NER over the selected sentences,
// relation extraction through the chat gateway, a base graph over the
// sentence entities, per-entity subgraph retrieval, and a deduplicating
// integration pass.

#include <algorithm>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "merge/emkb.hpp"
#include "merge/error.hpp"
#include "merge/gateways.hpp"
#include "merge/hcma.hpp"
#include "merge/knowledge_graph.hpp"
#include "merge/ner.hpp"
#include "merge/prompts.hpp"

namespace merge {

enum class MatchPath { face, clip };

struct EntityMatch {
    std::string entity_id;
    std::string canonical_name;
    double similarity = 0.0;
    MatchPath path = MatchPath::face;
};

struct RelationTriple {
    std::string source;
    std::string target;
    std::string relation;  // at most 3 words

    bool operator==(const RelationTriple& o) const {
        return source == o.source && target == o.target && relation == o.relation;
    }
};

struct RmkiConfig {
    double face_conf_threshold = 0.8;
    double tau_face = 0.4;   // similarity floor for face matches
    double tau_clip = 0.25;  // similarity floor for image matches
    size_t k_clip = 1;
    size_t retry_limit = 3;
    size_t relation_output_tokens = 512;
    prompts::TemplateSet templates;
};

// RAS 1. When the detector finds faces, each face embedding is matched top-1
// against the store's face vectors and matches above tau_face survive;
// otherwise the whole-image embedding is matched against image vectors with
// tau_clip and k_clip. Matches are deduplicated by entity (max similarity),
// ordered by descending similarity then entity_id.
inline std::vector<EntityMatch> match_entities(const std::string& image_ref, const EmkbStore& kb,
                                               Gateways& gateways, const RmkiConfig& cfg = {}) {
    const std::string stage = "rmki/match";
    std::unordered_map<std::string, EntityMatch> best;
    try {
        auto faces = gateways.vision->detect_faces(image_ref, cfg.face_conf_threshold);
        if (!faces.empty()) {
            for (const auto& det : faces) {
                auto hits = kb.nearest_entities(det.embedding, Modality::face, 1);
                if (hits.empty()) continue;
                const auto& hit = hits.front();
                if (hit.similarity < cfg.tau_face) continue;
                auto rec = kb.find(hit.entity_id);
                EntityMatch m{hit.entity_id, rec ? rec->canonical_name : hit.entity_id,
                              hit.similarity, MatchPath::face};
                auto [it, inserted] = best.emplace(m.entity_id, m);
                if (!inserted && m.similarity > it->second.similarity) it->second = m;
            }
        } else {
            EmbeddingVector query = gateways.vision->embed_image(image_ref);
            auto hits = kb.nearest_entities(query, Modality::image, std::max<size_t>(1, cfg.k_clip));
            for (const auto& hit : hits) {
                if (hit.similarity < cfg.tau_clip) continue;
                auto rec = kb.find(hit.entity_id);
                EntityMatch m{hit.entity_id, rec ? rec->canonical_name : hit.entity_id,
                              hit.similarity, MatchPath::clip};
                auto [it, inserted] = best.emplace(m.entity_id, m);
                if (!inserted && m.similarity > it->second.similarity) it->second = m;
            }
        }
    } catch (const Error& e) {
        detail::rethrow_with_stage(e, stage);
    }
    std::vector<EntityMatch> out;
    out.reserve(best.size());
    for (auto& [id, m] : best) out.push_back(std::move(m));
    std::sort(out.begin(), out.end(), [](const EntityMatch& a, const EntityMatch& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.entity_id < b.entity_id;
    });
    return out;
}

namespace detail {

// Accepts both surface forms the relation prompt can come back in: a
// bracketed tuple list [("a", "b", "r"), ...] with single or double quotes,
// or a JSON array of 3-element string arrays.
inline ParseOutcome parse_relation_text(const std::string& raw) {
    ParseOutcome direct = parse_structured(raw, StructuredSchema::relation_list);
    if (std::holds_alternative<nlohmann::json>(direct)) return direct;

    size_t open = raw.find('[');
    if (open == std::string::npos) return Malformed{"no relation list found", 0};
    size_t i = open + 1;
    auto skip_ws = [&] {
        while (i < raw.size() && (text::is_space(raw[i]) || raw[i] == ',')) ++i;
    };
    auto read_string = [&]() -> std::optional<std::string> {
        skip_ws();
        if (i >= raw.size() || (raw[i] != '"' && raw[i] != '\'')) return std::nullopt;
        char quote = raw[i++];
        std::string out;
        while (i < raw.size() && raw[i] != quote) {
            if (raw[i] == '\\' && i + 1 < raw.size()) ++i;
            out.push_back(raw[i++]);
        }
        if (i >= raw.size()) return std::nullopt;
        ++i;  // closing quote
        return out;
    };

    nlohmann::json triples = nlohmann::json::array();
    while (true) {
        skip_ws();
        if (i >= raw.size()) return Malformed{"unterminated relation list", i};
        if (raw[i] == ']') break;
        if (raw[i] != '(' && raw[i] != '[')
            return Malformed{"expected a tuple", i};
        char closer = raw[i] == '(' ? ')' : ']';
        ++i;
        auto s = read_string();
        auto t = read_string();
        auto r = read_string();
        if (!s || !t || !r) return Malformed{"tuple does not hold three strings", i};
        skip_ws();
        if (i >= raw.size() || raw[i] != closer) return Malformed{"unclosed tuple", i};
        ++i;
        triples.push_back({*s, *t, *r});
    }
    return triples;
}

}  // namespace detail

// RAS 2, relation extraction. Triples with endpoints outside `entities` are
// dropped, endpoint surfaces snap to the given entity strings, relations are
// truncated to three words, and each unordered entity pair keeps only its
// first triple. Malformed output re-prompts up to the retry limit.
inline std::vector<RelationTriple> extract_relations(const std::vector<std::string>& entities,
                                                     const std::vector<std::string>& sentences,
                                                     ChatGateway& gateway,
                                                     const RmkiConfig& cfg = {}) {
    const std::string stage = "rmki/relations";
    if (entities.empty())
        throw Error(ErrorKind::invalid_argument, stage, "entity list is empty");

    std::unordered_map<std::string, std::string> known;  // normalized -> given surface
    std::string entities_line;
    for (const auto& e : entities) {
        known.emplace(text::normalize_label(e), e);
        if (!entities_line.empty()) entities_line += ", ";
        entities_line += e;
    }
    std::string sentences_block;
    for (const auto& s : sentences) {
        if (!sentences_block.empty()) sentences_block += '\n';
        sentences_block += s;
    }

    ChatRequest req = detail::make_stage_request(
        cfg.templates.relation_system,
        prompts::render(cfg.templates.relation_user,
                        {{"ENTITIES", entities_line}, {"SENTENCES", sentences_block}}),
        std::string(), StructuredSchema::relation_list, cfg.relation_output_tokens);

    std::string raw_trail;
    nlohmann::json triples;
    bool have = false;
    for (size_t attempt = 0; attempt <= cfg.retry_limit && !have; ++attempt) {
        ChatResult result;
        try {
            result = gateway.complete(req);
        } catch (const Error& e) {
            detail::rethrow_with_stage(e, stage);
        }
        ParseOutcome outcome = detail::parse_relation_text(result.text);
        if (auto* value = std::get_if<nlohmann::json>(&outcome)) {
            triples = std::move(*value);
            have = true;
            break;
        }
        const auto& bad = std::get<Malformed>(outcome);
        if (!raw_trail.empty()) raw_trail += "\n---\n";
        raw_trail += result.text;
        if (attempt == cfg.retry_limit) {
            Error e(ErrorKind::structured_output, stage,
                    stage + ": output stayed malformed after " + std::to_string(cfg.retry_limit) +
                        " retries (" + bad.cause + ")");
            e.set_raw(raw_trail);
            throw e;
        }
        ChatMessage fix;
        fix.role = Role::user;
        fix.parts.push_back(TextPart{"The previous reply was not a valid tuple list (" + bad.cause +
                                     "). Respond again with the list only."});
        req.messages.push_back(std::move(fix));
    }

    std::vector<RelationTriple> out;
    std::unordered_set<std::string> pairs_seen;
    for (const auto& t : triples) {
        auto src_it = known.find(text::normalize_label(t[0].get<std::string>()));
        auto tgt_it = known.find(text::normalize_label(t[1].get<std::string>()));
        if (src_it == known.end() || tgt_it == known.end()) continue;  // unknown endpoint
        if (src_it->first == tgt_it->first) continue;                  // self-loop
        std::string relation = text::truncate_words(text::trim(t[2].get<std::string>()), 3);
        if (relation.empty()) continue;
        std::string pair_key = src_it->first < tgt_it->first
                                   ? src_it->first + '\x1f' + tgt_it->first
                                   : tgt_it->first + '\x1f' + src_it->first;
        if (!pairs_seen.insert(pair_key).second) continue;  // one triple per unordered pair
        out.push_back(RelationTriple{src_it->second, tgt_it->second, std::move(relation)});
    }
    return out;
}

// Nodes are all given entities (isolated ones included); edges are the
// triples. Triples referencing entities outside the list are a contract
// violation.
inline KnowledgeGraph construct_base_graph(const std::vector<std::string>& entities,
                                           const std::vector<RelationTriple>& triples) {
    KnowledgeGraph g;
    for (const auto& e : entities) g.add_node(e);
    for (const auto& t : triples) {
        if (!g.contains(t.source) || !g.contains(t.target))
            throw Error(ErrorKind::invalid_argument,
                        "base-graph triple references an unknown entity: " + t.source + " -> " +
                            t.target);
        g.add_edge(t.source, t.target, t.relation);
    }
    return g;
}

// Union of nodes (normalized, first display label wins) and edges (exact
// duplicates removed), base first, then subgraphs in input order.
inline KnowledgeGraph integrate_graph(const KnowledgeGraph& base,
                                      const std::vector<KnowledgeGraph>& subgraphs) {
    KnowledgeGraph g;
    for (const auto& n : base.nodes()) g.add_node(n);
    for (const auto& e : base.edges()) g.add_edge(e.source, e.target, e.relation);
    for (const auto& sub : subgraphs) {
        for (const auto& n : sub.nodes()) g.add_node(n);
        for (const auto& e : sub.edges()) g.add_edge(e.source, e.target, e.relation);
    }
    return g;
}

// The full background-graph construction over the selected sentences:
// NER -> relation extraction -> base graph -> per-entity subgraph retrieval
// -> integration, in exactly that order. Entities with no stored subgraph
// contribute nothing beyond their node; zero recognized entities yield the
// empty graph without any gateway call.
inline KnowledgeGraph build_background_kg(const std::vector<std::string>& sentences,
                                          const EmkbStore& kb, Gateways& gateways, const Ner& ner,
                                          const RmkiConfig& cfg = {}) {
    if (sentences.empty())
        throw Error(ErrorKind::invalid_argument, "rmki/ner", "sentence list is empty");

    std::vector<std::string> entities;
    std::unordered_set<std::string> seen;
    try {
        for (const auto& s : sentences)
            for (const auto& mention : ner.extract(s))
                if (seen.insert(text::normalize_label(mention.surface)).second)
                    entities.push_back(mention.surface);
    } catch (const Error& e) {
        detail::rethrow_with_stage(e, "rmki/ner");
    } catch (const std::exception& e) {
        throw Error(ErrorKind::stage, "rmki/ner", std::string("NER failed: ") + e.what());
    }
    if (entities.empty()) return KnowledgeGraph{};

    std::vector<RelationTriple> triples =
        extract_relations(entities, sentences, *gateways.chat, cfg);
    KnowledgeGraph base = construct_base_graph(entities, triples);

    std::vector<KnowledgeGraph> retrieved;
    for (const auto& e : entities) {
        KnowledgeGraph sub = kb.get_subgraph_by_name(e);
        if (!sub.empty()) retrieved.push_back(std::move(sub));
    }
    return integrate_graph(base, retrieved);
}

}  // namespace merge
