#pragma once
// Provider abstraction for every learned model the engine talks to: text and
// vision completion, image embedding, face detection + embedding. Ships a
// deterministic mock provider (content-hash seeded, stable across process
// restarts) so the whole pipeline runs without model weights. The HTTP chat
// provider lives in gateways_http.hpp.

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "merge/embedding.hpp"
#include "merge/error.hpp"
#include "merge/text.hpp"

namespace merge {

enum class Role { system, user };

struct TextPart {
    std::string text;
};
struct ImageRefPart {
    std::string image_ref;
};
using MessagePart = std::variant<TextPart, ImageRefPart>;

struct ChatMessage {
    Role role = Role::user;
    std::vector<MessagePart> parts;
};

// Tag telling providers (and the structured-output parser) what shape the
// response should take.
enum class StructuredSchema {
    none,
    hypothesis,          // {"caption": str, "key_sentences": [str]}
    sentence_selection,  // {"sentences": [str]}
    summary,             // {"summary": str}
    relation_list,       // [("source", "target", "relation"), ...]
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    size_t max_output_tokens = 256;
    double temperature = 0.0;
    StructuredSchema response_schema = StructuredSchema::none;

    void validate() const {
        if (messages.empty())
            throw Error(ErrorKind::invalid_argument, "chat request has no messages");
        if (max_output_tokens < 1)
            throw Error(ErrorKind::invalid_argument, "max_output_tokens must be >= 1");
        if (temperature < 0.0)
            throw Error(ErrorKind::invalid_argument, "temperature must be >= 0");
    }

    // All text parts joined; what the mock matches on and the token estimator counts.
    std::string joined_text() const {
        std::string out;
        for (const auto& m : messages)
            for (const auto& p : m.parts) {
                if (const auto* t = std::get_if<TextPart>(&p)) {
                    if (!out.empty()) out += '\n';
                    out += t->text;
                } else if (const auto* i = std::get_if<ImageRefPart>(&p)) {
                    if (!out.empty()) out += '\n';
                    out += "[image: " + i->image_ref + "]";
                }
            }
        return out;
    }
};

struct Usage {
    size_t prompt_tokens = 0;
    size_t output_tokens = 0;
};

struct ChatResult {
    std::string text;
    Usage usage;
};

struct FaceDetection {
    std::array<double, 4> bbox{0, 0, 0, 0};  // x, y, w, h in pixels
    double confidence = 0.0;
    EmbeddingVector embedding;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual ChatResult complete(const ChatRequest& request) = 0;
    virtual std::string name() const = 0;
};

class VisionProvider {
public:
    virtual ~VisionProvider() = default;
    virtual EmbeddingVector embed_image(const std::string& image_ref) = 0;
    virtual std::vector<FaceDetection> detect_faces(const std::string& image_ref) = 0;
    virtual std::string name() const = 0;
};

// Adapter for test providers written as plain lambdas.
class FnChatProvider : public ChatProvider {
public:
    explicit FnChatProvider(std::function<ChatResult(const ChatRequest&)> fn,
                            std::string name = "fn")
        : fn_(std::move(fn)), name_(std::move(name)) {}
    ChatResult complete(const ChatRequest& request) override { return fn_(request); }
    std::string name() const override { return name_; }

private:
    std::function<ChatResult(const ChatRequest&)> fn_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Deterministic mock providers
// ---------------------------------------------------------------------------

// Scripted-response chat mock. Rules are substring patterns matched against
// the request text in order; the first hit answers verbatim. Without a hit
// the mock synthesizes a deterministic, schema-conforming response from the
// request content, so an unscripted pipeline run still completes end to end.
class MockChatProvider : public ChatProvider {
public:
    struct Rule {
        std::string pattern;
        std::string response;
    };

    explicit MockChatProvider(std::vector<Rule> rules = {}, uint64_t salt = 0)
        : rules_(std::move(rules)), salt_(salt) {}

    // Script file: JSON array of {"pattern": ..., "response": ...}.
    static MockChatProvider from_script_file(const std::filesystem::path& path, uint64_t salt = 0) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::io, "cannot read script file " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, "script file is not valid JSON: " + std::string(e.what()));
        }
        std::vector<Rule> rules;
        for (const auto& r : j)
            rules.push_back(Rule{r.at("pattern").get<std::string>(),
                                 r.at("response").get<std::string>()});
        return MockChatProvider(std::move(rules), salt);
    }

    ChatResult complete(const ChatRequest& request) override {
        request.validate();
        std::string prompt = request.joined_text();
        std::string text;
        bool scripted = false;
        for (const auto& rule : rules_) {
            if (prompt.find(rule.pattern) != std::string::npos) {
                text = rule.response;
                scripted = true;
                break;
            }
        }
        if (!scripted) text = synthesize(request, prompt);
        ChatResult result;
        result.text = std::move(text);
        result.usage.prompt_tokens = text::word_count(prompt);
        result.usage.output_tokens = std::max<size_t>(1, text::word_count(result.text));
        return result;
    }

    std::string name() const override { return "mock"; }

private:
    // The prompt templates label their payload sections; pull one out by its
    // header line.
    static std::string section(const std::string& prompt, std::string_view header) {
        size_t at = prompt.find(header);
        if (at == std::string::npos) return {};
        size_t begin = at + header.size();
        size_t end = prompt.find("\n\n", begin);
        if (end == std::string::npos) end = prompt.size();
        return text::trim(prompt.substr(begin, end - begin));
    }

    std::string synthesize(const ChatRequest& request, const std::string& prompt) const {
        using nlohmann::ordered_json;
        std::string article = section(prompt, "Article:\n");
        auto sentences = text::split_sentences(article);
        switch (request.response_schema) {
            case StructuredSchema::hypothesis: {
                ordered_json j;
                std::string first = sentences.empty() ? article : sentences.front();
                j["caption"] = text::truncate_words(first, 12);
                auto keys = ordered_json::array();
                for (size_t i = 0; i < sentences.size() && i < 3; ++i) keys.push_back(sentences[i]);
                j["key_sentences"] = std::move(keys);
                return j.dump();
            }
            case StructuredSchema::sentence_selection: {
                ordered_json j;
                auto sel = ordered_json::array();
                for (size_t i = 0; i < sentences.size() && i < 3; ++i) sel.push_back(sentences[i]);
                j["sentences"] = std::move(sel);
                return j.dump();
            }
            case StructuredSchema::summary: {
                ordered_json j;
                j["summary"] = text::truncate_words(article, 60);
                return j.dump();
            }
            case StructuredSchema::relation_list: {
                std::string ent_line = section(prompt, "Entities: ");
                if (size_t nl = ent_line.find('\n'); nl != std::string::npos)
                    ent_line = ent_line.substr(0, nl);
                std::vector<std::string> entities;
                size_t pos = 0;
                while (pos <= ent_line.size()) {
                    size_t comma = ent_line.find(',', pos);
                    std::string e = text::trim(ent_line.substr(
                        pos, comma == std::string::npos ? std::string::npos : comma - pos));
                    if (!e.empty()) entities.push_back(e);
                    if (comma == std::string::npos) break;
                    pos = comma + 1;
                }
                std::string out = "[";
                size_t emitted = 0;
                for (size_t i = 0; i + 1 < entities.size() && emitted < 8; ++i, ++emitted) {
                    if (emitted) out += ", ";
                    out += "(\"" + entities[i] + "\", \"" + entities[i + 1] + "\", \"appears with\")";
                }
                out += "]";
                return out;
            }
            case StructuredSchema::none:
            default: {
                std::string draft = section(prompt, "Draft caption: ");
                size_t nl = draft.find('\n');
                if (nl != std::string::npos) draft = text::trim(draft.substr(0, nl));
                if (!draft.empty()) return draft;
                uint64_t h = text::fnv1a64(prompt, 0x9e3779b97f4a7c15ULL ^ salt_);
                return "Scene " + std::to_string(h % 100000) + " described for the record.";
            }
        }
    }

    std::vector<Rule> rules_;
    uint64_t salt_;
};

// Deterministic vision mock.
//
//   embed_image: FNV-1a over the file bytes when image_ref is a readable
//   path, otherwise over the ref string itself, salted, expanded into a
//   pseudo-random unit vector. Identical bytes always embed identically.
//
//   detect_faces: planted detections win; otherwise refs carrying a
//   `faces=tok1+tok2` query parameter yield one detection per token whose
//   embedding depends only on the token (so a knowledge base built from the
//   same tokens matches exactly); plain refs have no faces.
class MockVisionProvider : public VisionProvider {
public:
    MockVisionProvider(size_t image_dim, size_t face_dim, uint64_t salt = 0)
        : image_dim_(image_dim), face_dim_(face_dim), salt_(salt) {}

    EmbeddingVector embed_image(const std::string& image_ref) override {
        return embedding_for_ref(image_ref);
    }

    std::vector<FaceDetection> detect_faces(const std::string& image_ref) override {
        auto it = planted_.find(image_ref);
        if (it != planted_.end()) return it->second;

        std::vector<FaceDetection> out;
        std::string tokens = query_param(image_ref, "faces");
        if (tokens.empty()) return out;
        double conf = 0.9;
        std::string conf_s = query_param(image_ref, "conf");
        if (!conf_s.empty()) conf = std::stod(conf_s);
        size_t pos = 0, idx = 0;
        while (pos <= tokens.size()) {
            size_t plus = tokens.find('+', pos);
            std::string tok = tokens.substr(
                pos, plus == std::string::npos ? std::string::npos : plus - pos);
            if (!tok.empty()) {
                FaceDetection det;
                det.bbox = {16.0 * static_cast<double>(idx), 8.0, 96.0, 96.0};
                det.confidence = conf;
                det.embedding = face_embedding_for_token(tok);
                out.push_back(std::move(det));
                ++idx;
            }
            if (plus == std::string::npos) break;
            pos = plus + 1;
        }
        return out;
    }

    std::string name() const override { return "mock"; }

    void plant_faces(const std::string& image_ref, std::vector<FaceDetection> detections) {
        planted_[image_ref] = std::move(detections);
    }

    // The same functions the fixture generator uses, so knowledge-base vectors
    // and query-time vectors agree by construction.
    EmbeddingVector embedding_for_ref(const std::string& image_ref) const {
        std::string content;
        if (std::filesystem::exists(image_ref)) {
            std::ifstream in(image_ref, std::ios::binary);
            if (in)
                content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        }
        uint64_t h = content.empty() ? text::fnv1a64("image|" + image_ref, seed_base())
                                     : text::fnv1a64(content, text::fnv1a64("image-bytes|", seed_base()));
        return seeded_unit_vector(h, image_dim_);
    }

    EmbeddingVector face_embedding_for_token(const std::string& token) const {
        return seeded_unit_vector(text::fnv1a64("face|" + token, seed_base()), face_dim_);
    }

private:
    uint64_t seed_base() const { return 0xcbf29ce484222325ULL ^ salt_; }

    static std::string query_param(const std::string& ref, std::string_view key) {
        size_t q = ref.find('?');
        if (q == std::string::npos) return {};
        std::string needle = std::string(key) + "=";
        size_t pos = q + 1;
        while (pos < ref.size()) {
            size_t amp = ref.find('&', pos);
            size_t end = amp == std::string::npos ? ref.size() : amp;
            std::string_view pair(ref.data() + pos, end - pos);
            if (pair.substr(0, needle.size()) == needle)
                return std::string(pair.substr(needle.size()));
            if (amp == std::string::npos) break;
            pos = amp + 1;
        }
        return {};
    }

    size_t image_dim_;
    size_t face_dim_;
    uint64_t salt_;
    std::unordered_map<std::string, std::vector<FaceDetection>> planted_;
};

// ---------------------------------------------------------------------------
// Gateways: retry, budget, and contract enforcement in front of providers
// ---------------------------------------------------------------------------

struct RetryPolicy {
    size_t retry_limit = 3;
    std::chrono::milliseconds initial_backoff{250};
    double multiplier = 2.0;
    // Injectable for tests; defaults to an actual sleep.
    std::function<void(std::chrono::milliseconds)> sleeper;

    void sleep(std::chrono::milliseconds d) const {
        if (sleeper)
            sleeper(d);
        else
            std::this_thread::sleep_for(d);
    }
};

inline bool is_retryable(const Error& e) {
    if (e.kind() == ErrorKind::transport) return true;
    if (e.kind() == ErrorKind::provider)
        return e.status() == 429 || e.status() >= 500 || e.status() == 0;
    return false;
}

// Retrying wrapper around a ChatProvider. Total attempts <= 1 + retry_limit,
// backoff delays non-decreasing, optional total token budget, bounded
// in-flight concurrency.
class ChatGateway {
public:
    explicit ChatGateway(std::shared_ptr<ChatProvider> provider, RetryPolicy retry = {},
                         std::optional<size_t> token_budget = std::nullopt,
                         size_t max_inflight = 64)
        : provider_(std::move(provider)),
          retry_(std::move(retry)),
          token_budget_(token_budget),
          inflight_(static_cast<std::ptrdiff_t>(max_inflight ? max_inflight : 1)) {
        if (!provider_) throw Error(ErrorKind::invalid_argument, "null chat provider");
    }

    ChatResult complete(const ChatRequest& request) {
        request.validate();
        if (token_budget_) {
            std::lock_guard lock(budget_mu_);
            if (tokens_spent_ >= *token_budget_)
                throw Error(ErrorKind::budget_exceeded,
                            "token budget of " + std::to_string(*token_budget_) + " exhausted");
        }
        inflight_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{inflight_};

        auto backoff = retry_.initial_backoff;
        for (size_t attempt = 0;; ++attempt) {
            try {
                ChatResult result = provider_->complete(request);
                if (result.text.empty())
                    throw Error(ErrorKind::provider, "provider returned an empty completion");
                if (result.usage.prompt_tokens == 0 && result.usage.output_tokens == 0) {
                    // provider reported no usage: approximate with word counts
                    result.usage.prompt_tokens = text::word_count(request.joined_text());
                    result.usage.output_tokens = text::word_count(result.text);
                }
                if (result.usage.output_tokens == 0) result.usage.output_tokens = 1;
                if (token_budget_) {
                    std::lock_guard lock(budget_mu_);
                    tokens_spent_ += result.usage.prompt_tokens + result.usage.output_tokens;
                }
                return result;
            } catch (const Error& e) {
                if (!is_retryable(e) || attempt >= retry_.retry_limit) throw;
                retry_.sleep(backoff);
                backoff = std::chrono::milliseconds(
                    static_cast<long long>(static_cast<double>(backoff.count()) * retry_.multiplier));
            }
        }
    }

    size_t tokens_spent() const {
        std::lock_guard lock(budget_mu_);
        return tokens_spent_;
    }

    std::string provider_name() const { return provider_->name(); }

private:
    std::shared_ptr<ChatProvider> provider_;
    RetryPolicy retry_;
    std::optional<size_t> token_budget_;
    mutable std::mutex budget_mu_;
    size_t tokens_spent_ = 0;
    std::counting_semaphore<> inflight_;
};

// Dim validation and confidence filtering in front of a VisionProvider.
class VisionGateway {
public:
    VisionGateway(std::shared_ptr<VisionProvider> provider, size_t image_dim, size_t face_dim)
        : provider_(std::move(provider)), image_dim_(image_dim), face_dim_(face_dim) {
        if (!provider_) throw Error(ErrorKind::invalid_argument, "null vision provider");
    }

    EmbeddingVector embed_image(const std::string& image_ref) {
        EmbeddingVector v = provider_->embed_image(image_ref);
        if (v.dim() != image_dim_)
            throw Error(ErrorKind::dimension_mismatch,
                        "vision provider returned image dim " + std::to_string(v.dim()) +
                            ", expected " + std::to_string(image_dim_));
        return v;
    }

    // Every returned detection has confidence >= min_confidence; an empty
    // list is a normal outcome (the caller falls back to the image path).
    std::vector<FaceDetection> detect_faces(const std::string& image_ref, double min_confidence) {
        if (min_confidence < 0.0 || min_confidence > 1.0)
            throw Error(ErrorKind::invalid_argument, "min_confidence must be in [0, 1]");
        std::vector<FaceDetection> all = provider_->detect_faces(image_ref);
        std::vector<FaceDetection> out;
        for (auto& det : all) {
            if (det.confidence < 0.0 || det.confidence > 1.0)
                throw Error(ErrorKind::provider, "face confidence outside [0, 1]");
            if (det.bbox[2] <= 0.0 || det.bbox[3] <= 0.0)
                throw Error(ErrorKind::provider, "face bbox has non-positive extent");
            if (det.embedding.dim() != face_dim_)
                throw Error(ErrorKind::dimension_mismatch,
                            "vision provider returned face dim " +
                                std::to_string(det.embedding.dim()) + ", expected " +
                                std::to_string(face_dim_));
            if (det.confidence >= min_confidence) out.push_back(std::move(det));
        }
        return out;
    }

    std::string provider_name() const { return provider_->name(); }

private:
    std::shared_ptr<VisionProvider> provider_;
    size_t image_dim_;
    size_t face_dim_;
};

// The full gateway bundle handed through the pipeline.
struct Gateways {
    std::shared_ptr<ChatGateway> chat;
    std::shared_ptr<VisionGateway> vision;
};

}  // namespace merge
