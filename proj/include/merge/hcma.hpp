#pragma once
// Hypothesis-caption-guided alignment: a three-stage prompting pipeline over
// the chat gateway producing (hypothesis caption, relevant sentences, global
// summary). Constraint enforcement is unconditional — whatever the model
// returns, outputs respect the word and count caps, and every selected
// sentence is provenance-checked against the article. Malformed structured
// output triggers a re-prompt up to the retry limit; over-long output is
// truncated rather than re-prompted.

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "merge/error.hpp"
#include "merge/gateways.hpp"
#include "merge/prompts.hpp"
#include "merge/text.hpp"

namespace merge {

struct HypothesisCaption {
    std::string text;                        // at most 30 words
    std::vector<std::string> key_sentences;  // at most 10
};

struct RelevantSentences {
    std::vector<std::string> sentences;  // at most 5, each a normalized substring of the article
};

struct GlobalSummary {
    std::string text;  // at most 100 words
};

struct AlignmentContext {
    HypothesisCaption hypothesis;
    RelevantSentences relevant;
    GlobalSummary summary;
};

struct HcmaConfig {
    size_t retry_limit = 3;
    size_t max_caption_words = 30;
    size_t max_key_sentences = 10;
    size_t max_selected_sentences = 5;
    size_t max_summary_words = 100;
    size_t stage_output_tokens = 512;
    prompts::TemplateSet templates;
    // Sink for non-fatal provenance notes (dropped fabricated sentences).
    std::function<void(const std::string&)> note;
};

// ---------------------------------------------------------------------------
// Structured-output parsing: failure is a value, never an exception
// ---------------------------------------------------------------------------

struct Malformed {
    std::string cause;
    size_t position = 0;
};

using ParseOutcome = std::variant<nlohmann::json, Malformed>;

namespace detail {
// Models often wrap JSON in prose or code fences; pull out the first balanced
// object/array before giving up.
inline std::optional<std::string> extract_balanced(const std::string& raw, char open, char close) {
    size_t start = raw.find(open);
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < raw.size(); ++i) {
        char c = raw[i];
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == open) {
            ++depth;
        } else if (c == close) {
            if (--depth == 0) return raw.substr(start, i - start + 1);
        }
    }
    return std::nullopt;
}
}  // namespace detail

// Parses `raw` against the schema tag. Returns either the conforming JSON
// value or a Malformed signal carrying position and cause.
inline ParseOutcome parse_structured(const std::string& raw, StructuredSchema schema) {
    nlohmann::json j;
    size_t err_pos = 0;
    std::string err_cause;
    bool parsed = false;

    auto try_parse = [&](const std::string& candidate) {
        try {
            j = nlohmann::json::parse(candidate);
            parsed = true;
        } catch (const nlohmann::json::parse_error& e) {
            err_pos = e.byte;
            err_cause = e.what();
        } catch (const nlohmann::json::exception& e) {
            err_cause = e.what();
        }
    };

    try_parse(raw);
    if (!parsed) {
        char open = schema == StructuredSchema::relation_list ? '[' : '{';
        char close = schema == StructuredSchema::relation_list ? ']' : '}';
        if (auto inner = detail::extract_balanced(raw, open, close)) try_parse(*inner);
    }
    if (!parsed) return Malformed{err_cause.empty() ? "no JSON found" : err_cause, err_pos};

    auto missing = [&](std::string_view field) {
        return Malformed{"missing or mistyped field: " + std::string(field), 0};
    };
    auto string_array = [](const nlohmann::json& arr) {
        if (!arr.is_array()) return false;
        for (const auto& s : arr)
            if (!s.is_string()) return false;
        return true;
    };

    switch (schema) {
        case StructuredSchema::hypothesis:
            if (!j.is_object() || !j.contains("caption") || !j["caption"].is_string())
                return missing("caption");
            if (!j.contains("key_sentences") || !string_array(j["key_sentences"]))
                return missing("key_sentences");
            return j;
        case StructuredSchema::sentence_selection:
            if (!j.is_object() || !j.contains("sentences") || !string_array(j["sentences"]))
                return missing("sentences");
            return j;
        case StructuredSchema::summary:
            if (!j.is_object() || !j.contains("summary") || !j["summary"].is_string())
                return missing("summary");
            return j;
        case StructuredSchema::relation_list: {
            if (!j.is_array()) return Malformed{"expected an array of triples", 0};
            for (const auto& t : j)
                if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() ||
                    !t[2].is_string())
                    return Malformed{"triple is not [source, target, relation]", 0};
            return j;
        }
        case StructuredSchema::none:
        default:
            return j;
    }
}

namespace detail {

[[noreturn]] inline void rethrow_with_stage(const Error& e, const std::string& stage) {
    Error out(e.kind(), stage, std::string(e.what()));
    out.set_raw(e.raw());
    out.set_status(e.status());
    throw out;
}

// One structured stage call with re-prompt-on-malformed. Gateway invocations
// are bounded by 1 + retry_limit; transport retries live inside the gateway.
inline nlohmann::json stage_structured_call(ChatGateway& gateway, ChatRequest request,
                                            size_t retry_limit, const std::string& stage) {
    std::string raw_trail;
    for (size_t attempt = 0; attempt <= retry_limit; ++attempt) {
        ChatResult result;
        try {
            result = gateway.complete(request);
        } catch (const Error& e) {
            rethrow_with_stage(e, stage);
        }
        ParseOutcome outcome = parse_structured(result.text, request.response_schema);
        if (auto* value = std::get_if<nlohmann::json>(&outcome)) return std::move(*value);
        const auto& bad = std::get<Malformed>(outcome);
        if (!raw_trail.empty()) raw_trail += "\n---\n";
        raw_trail += result.text;
        if (attempt == retry_limit) {
            Error e(ErrorKind::structured_output, stage,
                    stage + ": output stayed malformed after " + std::to_string(retry_limit) +
                        " retries (" + bad.cause + " at byte " + std::to_string(bad.position) + ")");
            e.set_raw(raw_trail);
            throw e;
        }
        // re-prompt: same task plus a corrective nudge
        ChatMessage fix;
        fix.role = Role::user;
        fix.parts.push_back(TextPart{
            "The previous reply was not valid (" + bad.cause + "). Respond again with JSON only."});
        request.messages.push_back(std::move(fix));
    }
    throw Error(ErrorKind::structured_output, stage, "unreachable retry exit");
}

inline ChatRequest make_stage_request(const std::string& system, const std::string& user,
                                      const std::string& image_ref, StructuredSchema schema,
                                      size_t max_tokens) {
    ChatRequest req;
    ChatMessage sys;
    sys.role = Role::system;
    sys.parts.push_back(TextPart{system});
    req.messages.push_back(std::move(sys));
    ChatMessage usr;
    usr.role = Role::user;
    if (!image_ref.empty()) usr.parts.push_back(ImageRefPart{image_ref});
    usr.parts.push_back(TextPart{user});
    req.messages.push_back(std::move(usr));
    req.max_output_tokens = max_tokens;
    req.temperature = 0.0;
    req.response_schema = schema;
    return req;
}

}  // namespace detail

// Stage 1: hypothesis caption + key sentences. Over-long output is truncated,
// never re-prompted.
inline HypothesisCaption generate_hypothesis(const std::string& image_ref,
                                             const std::string& article, ChatGateway& gateway,
                                             const HcmaConfig& cfg = {}) {
    const std::string stage = "hcma/stage 1";
    if (text::trim(article).empty())
        throw Error(ErrorKind::invalid_argument, stage, "article is empty");
    ChatRequest req = detail::make_stage_request(
        cfg.templates.hypothesis_system,
        prompts::render(cfg.templates.hypothesis_user,
                        {{"IMAGE", image_ref}, {"ARTICLE", article}}),
        image_ref, StructuredSchema::hypothesis, cfg.stage_output_tokens);
    nlohmann::json j = detail::stage_structured_call(gateway, std::move(req), cfg.retry_limit, stage);

    HypothesisCaption hyp;
    hyp.text = text::truncate_words(j["caption"].get<std::string>(), cfg.max_caption_words);
    for (const auto& s : j["key_sentences"]) {
        if (hyp.key_sentences.size() == cfg.max_key_sentences) break;
        hyp.key_sentences.push_back(s.get<std::string>());
    }
    return hyp;
}

// Stage 2: select up to 5 sentences, each verified to appear in the article
// (normalized substring); fabricated selections are dropped with a note, and
// the survivors are ordered by first appearance in the article.
inline RelevantSentences select_sentences(const HypothesisCaption& hypothesis,
                                          const std::string& image_ref, const std::string& article,
                                          ChatGateway& gateway, const HcmaConfig& cfg = {}) {
    const std::string stage = "hcma/stage 2";
    if (text::trim(article).empty())
        throw Error(ErrorKind::invalid_argument, stage, "article is empty");
    ChatRequest req = detail::make_stage_request(
        cfg.templates.sentence_system,
        prompts::render(cfg.templates.sentence_user, {{"IMAGE", image_ref},
                                                      {"HYPOTHESIS", hypothesis.text},
                                                      {"ARTICLE", article}}),
        image_ref, StructuredSchema::sentence_selection, cfg.stage_output_tokens);
    nlohmann::json j = detail::stage_structured_call(gateway, std::move(req), cfg.retry_limit, stage);

    std::string norm_article = text::normalize_label(article);
    struct Candidate {
        std::string surface;
        size_t position;
    };
    std::vector<Candidate> kept;
    std::unordered_set<std::string> seen;
    for (const auto& s : j["sentences"]) {
        std::string surface = s.get<std::string>();
        std::string norm = text::normalize_for_match(surface);
        if (norm.empty()) continue;
        size_t pos = norm_article.find(norm);
        if (pos == std::string::npos) {
            if (cfg.note) cfg.note("stage 2 dropped a sentence not present in the article: " + surface);
            continue;
        }
        if (!seen.insert(norm).second) continue;
        kept.push_back(Candidate{std::move(surface), pos});
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Candidate& a, const Candidate& b) { return a.position < b.position; });
    RelevantSentences out;
    for (const auto& c : kept) {
        if (out.sentences.size() == cfg.max_selected_sentences) break;
        out.sentences.push_back(c.surface);
    }
    return out;
}

// Stage 3: global summary, hard-truncated to the word cap.
inline GlobalSummary summarize(const std::string& article, ChatGateway& gateway,
                               const HcmaConfig& cfg = {}) {
    const std::string stage = "hcma/stage 3";
    if (text::trim(article).empty())
        throw Error(ErrorKind::invalid_argument, stage, "article is empty");
    ChatRequest req = detail::make_stage_request(
        cfg.templates.summary_system,
        prompts::render(cfg.templates.summary_user, {{"ARTICLE", article}}), std::string(),
        StructuredSchema::summary, cfg.stage_output_tokens);
    nlohmann::json j = detail::stage_structured_call(gateway, std::move(req), cfg.retry_limit, stage);
    GlobalSummary out;
    out.text = text::truncate_words(j["summary"].get<std::string>(), cfg.max_summary_words);
    return out;
}

// The full three-stage run. Stage 2 consumes Stage 1's output; Stage 3 depends
// only on the article. Any stage failure aborts with that stage's label.
inline AlignmentContext run_hcma(const std::string& image_ref, const std::string& article,
                                 ChatGateway& gateway, const HcmaConfig& cfg = {}) {
    AlignmentContext ctx;
    ctx.hypothesis = generate_hypothesis(image_ref, article, gateway, cfg);
    ctx.relevant = select_sentences(ctx.hypothesis, image_ref, article, gateway, cfg);
    ctx.summary = summarize(article, gateway, cfg);
    return ctx;
}

}  // namespace merge
