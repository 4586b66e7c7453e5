#pragma once
// Evaluation suite: corpus-level BLEU-4, mean ROUGE-L, CIDEr-D, and named
// entity precision/recall/F1 (overall and per PERSON/GPE/ORG). All four share
// one tokenizer (text::tokenize: case-fold, alphanumeric runs, punctuation as
// single-character tokens) so scores stay comparable.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "merge/error.hpp"
#include "merge/ner.hpp"
#include "merge/text.hpp"

namespace merge {

struct EvalItem {
    std::string item_id;
    std::string candidate;
    std::vector<std::string> references;
};

struct EvalCorpus {
    std::vector<EvalItem> items;

    void validate() const {
        std::unordered_set<std::string> ids;
        for (const auto& item : items) {
            if (!ids.insert(item.item_id).second)
                throw Error(ErrorKind::data, "duplicate item_id: " + item.item_id);
            if (item.references.empty())
                throw Error(ErrorKind::data, "item " + item.item_id + " has no references");
        }
    }
};

struct PrfScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    std::map<std::string, PrfScore> entity_scores;  // ALL, PERSON, GPE, ORG
};

namespace metrics_detail {

using NgramCounts = std::unordered_map<std::string, size_t>;

// n-grams keyed by tokens joined with a separator that cannot occur inside a
// token.
inline NgramCounts ngrams(const std::vector<std::string>& tokens, size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (size_t k = 1; k < n; ++k) {
            key += '\x1f';
            key += tokens[i + k];
        }
        ++counts[key];
    }
    return counts;
}

inline size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace metrics_detail

// Corpus-level BLEU with uniform weights over 1–4-grams and the brevity
// penalty. Reference length is the closest reference (ties to the shorter).
inline double bleu4(const EvalCorpus& corpus) {
    if (corpus.items.empty()) throw Error(ErrorKind::data, "bleu4: empty corpus");
    corpus.validate();
    constexpr size_t kMaxN = 4;
    double matched[kMaxN] = {0, 0, 0, 0};
    double total[kMaxN] = {0, 0, 0, 0};
    double cand_len = 0.0, ref_len = 0.0;

    for (const auto& item : corpus.items) {
        auto cand = text::tokenize(item.candidate);
        std::vector<std::vector<std::string>> refs;
        refs.reserve(item.references.size());
        for (const auto& r : item.references) refs.push_back(text::tokenize(r));

        cand_len += static_cast<double>(cand.size());
        size_t closest = refs.front().size();
        for (const auto& r : refs) {
            auto diff = [&](size_t len) {
                return len > cand.size() ? len - cand.size() : cand.size() - len;
            };
            if (diff(r.size()) < diff(closest) || (diff(r.size()) == diff(closest) && r.size() < closest))
                closest = r.size();
        }
        ref_len += static_cast<double>(closest);

        for (size_t n = 1; n <= kMaxN; ++n) {
            auto cand_counts = metrics_detail::ngrams(cand, n);
            metrics_detail::NgramCounts max_ref;
            for (const auto& r : refs)
                for (const auto& [g, c] : metrics_detail::ngrams(r, n))
                    max_ref[g] = std::max(max_ref[g], c);
            for (const auto& [g, c] : cand_counts) {
                total[n - 1] += static_cast<double>(c);
                auto it = max_ref.find(g);
                if (it != max_ref.end()) matched[n - 1] += static_cast<double>(std::min(c, it->second));
            }
        }
    }

    double log_sum = 0.0;
    for (size_t n = 0; n < kMaxN; ++n) {
        if (matched[n] == 0.0 || total[n] == 0.0) return 0.0;
        log_sum += 0.25 * std::log(matched[n] / total[n]);
    }
    double bp = 1.0;
    if (cand_len == 0.0) return 0.0;
    if (cand_len < ref_len) bp = std::exp(1.0 - ref_len / cand_len);
    return bp * std::exp(log_sum);
}

// Mean per-item ROUGE-L F-measure, beta^2 = 1.2; per item the max over
// references.
inline double rouge_l(const EvalCorpus& corpus) {
    if (corpus.items.empty()) throw Error(ErrorKind::data, "rouge_l: empty corpus");
    corpus.validate();
    constexpr double kBetaSq = 1.2;
    double sum = 0.0;
    for (const auto& item : corpus.items) {
        auto cand = text::tokenize(item.candidate);
        double best = 0.0;
        for (const auto& r : item.references) {
            auto ref = text::tokenize(r);
            size_t lcs = metrics_detail::lcs_length(cand, ref);
            if (lcs == 0 || cand.empty() || ref.empty()) continue;
            double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
            double rec = static_cast<double>(lcs) / static_cast<double>(ref.size());
            double f = ((1.0 + kBetaSq) * p * rec) / (rec + kBetaSq * p);
            best = std::max(best, f);
        }
        sum += best;
    }
    return sum / static_cast<double>(corpus.items.size());
}

// CIDEr-D, n = 1..4, sigma = 6 length penalty, document frequencies over the
// corpus's references, clipped TF-IDF cosine, scaled by 10. Needs at least
// two items for meaningful corpus statistics.
inline double cider_d(const EvalCorpus& corpus) {
    if (corpus.items.size() < 2)
        throw Error(ErrorKind::data, "cider_d: corpus must hold at least 2 items");
    corpus.validate();
    constexpr size_t kMaxN = 4;
    constexpr double kSigma = 6.0;

    using metrics_detail::NgramCounts;
    // document frequency: number of items whose reference set contains the n-gram
    std::unordered_map<std::string, double> df;
    std::vector<std::vector<NgramCounts>> ref_counts(corpus.items.size());   // [item][ref] merged over n
    std::vector<NgramCounts> cand_counts(corpus.items.size());

    auto all_ngrams = [&](const std::vector<std::string>& tokens) {
        NgramCounts merged;
        for (size_t n = 1; n <= kMaxN; ++n)
            for (const auto& [g, c] : metrics_detail::ngrams(tokens, n)) merged[g] += c;
        return merged;
    };

    for (size_t i = 0; i < corpus.items.size(); ++i) {
        cand_counts[i] = all_ngrams(text::tokenize(corpus.items[i].candidate));
        std::unordered_set<std::string> item_grams;
        for (const auto& r : corpus.items[i].references) {
            ref_counts[i].push_back(all_ngrams(text::tokenize(r)));
            for (const auto& [g, c] : ref_counts[i].back()) item_grams.insert(g);
        }
        for (const auto& g : item_grams) df[g] += 1.0;
    }

    const double log_items = std::log(static_cast<double>(corpus.items.size()));
    auto gram_order = [](const std::string& g) {
        return static_cast<size_t>(std::count(g.begin(), g.end(), '\x1f'));  // 0-based: 0 = unigram
    };

    struct Vec {
        std::array<std::unordered_map<std::string, double>, 4> weights;
        std::array<double, 4> norm{0, 0, 0, 0};
        double length = 0.0;  // bigram token count
    };
    auto to_vec = [&](const NgramCounts& counts) {
        Vec v;
        for (const auto& [g, tf] : counts) {
            size_t n = gram_order(g);
            double idf = log_items - std::log(std::max(1.0, df.count(g) ? df.at(g) : 0.0));
            double w = static_cast<double>(tf) * idf;
            v.weights[n][g] = w;
            v.norm[n] += w * w;
            if (n == 1) v.length += static_cast<double>(tf);
        }
        for (auto& x : v.norm) x = std::sqrt(x);
        return v;
    };

    double corpus_sum = 0.0;
    for (size_t i = 0; i < corpus.items.size(); ++i) {
        Vec cand = to_vec(cand_counts[i]);
        std::array<double, 4> acc{0, 0, 0, 0};
        for (const auto& rc : ref_counts[i]) {
            Vec ref = to_vec(rc);
            double delta = cand.length - ref.length;
            double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
            for (size_t n = 0; n < kMaxN; ++n) {
                double dot = 0.0;
                for (const auto& [g, w] : cand.weights[n]) {
                    auto it = ref.weights[n].find(g);
                    if (it != ref.weights[n].end()) dot += std::min(w, it->second) * it->second;
                }
                if (cand.norm[n] > 0.0 && ref.norm[n] > 0.0) dot /= cand.norm[n] * ref.norm[n];
                acc[n] += dot * penalty;
            }
        }
        double item_score = 0.0;
        for (size_t n = 0; n < kMaxN; ++n) item_score += acc[n];
        item_score /= static_cast<double>(kMaxN);
        item_score /= static_cast<double>(corpus.items[i].references.size());
        corpus_sum += item_score * 10.0;
    }
    return corpus_sum / static_cast<double>(corpus.items.size());
}

struct EntityPrfOptions {
    bool micro = true;  // micro-average pooled counts; false = macro over items
};

namespace metrics_detail {

inline std::string normalize_entity(std::string_view surface) {
    std::string norm = text::normalize_label(surface);
    if (norm.rfind("the ", 0) == 0) norm = norm.substr(4);
    return norm;
}

using EntityCounts = std::map<std::pair<std::string, EntityType>, size_t>;

inline EntityCounts count_entities(const std::vector<EntityMention>& mentions) {
    EntityCounts counts;
    for (const auto& m : mentions) {
        std::string norm = normalize_entity(m.surface);
        if (!norm.empty()) ++counts[{norm, m.type}];
    }
    return counts;
}

}  // namespace metrics_detail

// Entity precision/recall/F1. Candidate and reference entity multisets are
// matched on (normalized surface, type); reference entities are unioned
// across references with per-key multiset max. Micro-averaged by default.
inline std::map<std::string, PrfScore> entity_prf(const EvalCorpus& corpus, const Ner& ner,
                                                  EntityPrfOptions options = {}) {
    if (corpus.items.empty()) throw Error(ErrorKind::data, "entity_prf: empty corpus");
    corpus.validate();
    using metrics_detail::EntityCounts;

    struct Tally {
        double matched = 0, predicted = 0, expected = 0;        // micro pools
        double p_sum = 0, r_sum = 0, f_sum = 0;                  // macro sums
    };
    const std::vector<std::pair<std::string, std::optional<EntityType>>> buckets = {
        {"ALL", std::nullopt},
        {"PERSON", EntityType::PERSON},
        {"GPE", EntityType::GPE},
        {"ORG", EntityType::ORG},
    };
    std::map<std::string, Tally> tallies;
    for (const auto& [name, type] : buckets) tallies[name];

    for (const auto& item : corpus.items) {
        EntityCounts cand, refs;
        try {
            cand = metrics_detail::count_entities(ner.extract(item.candidate));
            for (const auto& r : item.references)
                for (const auto& [key, c] : metrics_detail::count_entities(ner.extract(r)))
                    refs[key] = std::max(refs[key], c);
        } catch (const std::exception& e) {
            throw Error(ErrorKind::data,
                        "entity_prf: NER failed on item " + item.item_id + ": " + e.what());
        }

        for (const auto& [name, type] : buckets) {
            double matched = 0, predicted = 0, expected = 0;
            for (const auto& [key, c] : cand)
                if (!type || key.second == *type) {
                    predicted += static_cast<double>(c);
                    auto it = refs.find(key);
                    if (it != refs.end()) matched += static_cast<double>(std::min(c, it->second));
                }
            for (const auto& [key, c] : refs)
                if (!type || key.second == *type) expected += static_cast<double>(c);
            auto& t = tallies[name];
            t.matched += matched;
            t.predicted += predicted;
            t.expected += expected;
            double p = predicted > 0 ? matched / predicted : 0.0;
            double r = expected > 0 ? matched / expected : 0.0;
            t.p_sum += p;
            t.r_sum += r;
            t.f_sum += (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
        }
    }

    std::map<std::string, PrfScore> out;
    const double n = static_cast<double>(corpus.items.size());
    for (const auto& [name, t] : tallies) {
        PrfScore s;
        if (options.micro) {
            s.precision = t.predicted > 0 ? t.matched / t.predicted : 0.0;
            s.recall = t.expected > 0 ? t.matched / t.expected : 0.0;
            s.f1 = (s.precision + s.recall) > 0
                       ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                       : 0.0;
        } else {
            s.precision = t.p_sum / n;
            s.recall = t.r_sum / n;
            s.f1 = t.f_sum / n;
        }
        out[name] = s;
    }
    return out;
}

inline EvalReport evaluate(const EvalCorpus& corpus, const Ner& ner, EntityPrfOptions options = {}) {
    EvalReport report;
    report.bleu4 = bleu4(corpus);
    report.rouge_l = rouge_l(corpus);
    report.cider = corpus.items.size() >= 2 ? cider_d(corpus) : 0.0;
    report.entity_scores = entity_prf(corpus, ner, options);
    return report;
}

inline nlohmann::ordered_json to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["bleu4"] = report.bleu4;
    j["rouge_l"] = report.rouge_l;
    j["cider"] = report.cider;
    nlohmann::ordered_json scores;
    for (const auto& [name, s] : report.entity_scores)
        scores[name] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    j["entity_scores"] = std::move(scores);
    return j;
}

inline std::string render_report(const EvalReport& report) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "BLEU-4", report.bleu4);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "ROUGE-L", report.rouge_l);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "CIDEr-D", report.cider);
    out += buf;
    for (const auto& [name, s] : report.entity_scores) {
        std::snprintf(buf, sizeof(buf), "%-10s P=%.4f R=%.4f F1=%.4f\n", name.c_str(), s.precision,
                      s.recall, s.f1);
        out += buf;
    }
    return out;
}

}  // namespace merge
