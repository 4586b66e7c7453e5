#include <doctest.h>

#include <algorithm>
#include <random>

#include "merge/ingest.hpp"
#include "merge/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace merge;

namespace {

EvalCorpus from_oracle(const std::vector<oracle::Item>& items) {
    EvalCorpus c;
    size_t i = 0;
    for (const auto& item : items)
        c.items.push_back(EvalItem{"i" + std::to_string(i++), item.candidate, item.references});
    return c;
}

std::vector<oracle::Item> to_oracle(const EvalCorpus& c) {
    std::vector<oracle::Item> items;
    for (const auto& item : c.items) items.push_back({item.candidate, item.references});
    return items;
}

// Frozen expected values, computed by the oracles in oracles.hpp.
constexpr double kBleu4Hand5 = 0.630681587254;
constexpr double kRougeLHand5 = 0.823083947352;
constexpr double kCiderHand10 = 3.304894206922;

}  // namespace

TEST_CASE("bleu4: perfect corpus scores 1.0, disjoint scores 0.0") {
    EvalCorpus perfect;
    perfect.items = {{"a", "the mayor opened the new bridge today",
                      {"the mayor opened the new bridge today"}},
                     {"b", "voters lined up before dawn on monday",
                      {"voters lined up before dawn on monday"}}};
    CHECK(bleu4(perfect) == doctest::Approx(1.0).epsilon(1e-12));

    EvalCorpus disjoint;
    disjoint.items = {{"a", "alpha beta gamma delta", {"one two three four"}}};
    CHECK(bleu4(disjoint) == doctest::Approx(0.0));
}

TEST_CASE("bleu4 on the 5-item hand corpus matches the frozen oracle value") {
    auto corpus = from_oracle(oracle::hand_corpus_5());
    double got = bleu4(corpus);
    CHECK(got == doctest::Approx(kBleu4Hand5).epsilon(1e-6));
    CHECK(got == doctest::Approx(oracle::bleu4(to_oracle(corpus))).epsilon(1e-9));
}

TEST_CASE("rouge_l basics and the closed-form pair") {
    EvalCorpus same;
    same.items = {{"a", "identical words here", {"identical words here"}}};
    CHECK(rouge_l(same) == doctest::Approx(1.0));

    EvalCorpus disjoint;
    disjoint.items = {{"a", "alpha beta", {"gamma delta"}}};
    CHECK(rouge_l(disjoint) == doctest::Approx(0.0));

    // candidate "a b c d", reference "a c d e": LCS 3, P = R = 3/4, F = 0.75
    EvalCorpus pair;
    pair.items = {{"a", "a b c d", {"a c d e"}}};
    CHECK(rouge_l(pair) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("rouge_l on the 5-item hand corpus matches the frozen oracle value") {
    auto corpus = from_oracle(oracle::hand_corpus_5());
    double got = rouge_l(corpus);
    CHECK(got == doctest::Approx(kRougeLHand5).epsilon(1e-6));
    CHECK(got == doctest::Approx(oracle::rouge_l(to_oracle(corpus))).epsilon(1e-9));
}

TEST_CASE("cider_d agrees with the independent implementation on the 10-item corpus") {
    auto corpus = from_oracle(oracle::hand_corpus_10());
    double got = cider_d(corpus);
    CHECK(got == doctest::Approx(kCiderHand10).epsilon(1e-4));
    CHECK(std::abs(got - oracle::cider_d(to_oracle(corpus))) < 1e-4);
}

TEST_CASE("cider_d symmetry: perfect items with disjoint vocab score exactly 10 each") {
    // every candidate equals its single reference and no n-gram crosses items,
    // so each per-item score is exactly 10 and so is the corpus mean
    EvalCorpus corpus;
    corpus.items = {{"a", "red ship sailed calmly north", {"red ship sailed calmly north"}},
                    {"b", "green train left busy station", {"green train left busy station"}},
                    {"c", "two dogs chased one ball", {"two dogs chased one ball"}}};
    CHECK(cider_d(corpus) == doctest::Approx(10.0).epsilon(1e-9));

    // one candidate made disjoint from its reference: that item scores 0 and
    // the mean drops to exactly two thirds
    EvalCorpus broken = corpus;
    broken.items[2].candidate = "seven furious owls flew away";
    CHECK(cider_d(broken) == doctest::Approx(10.0 * 2.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("cider_d needs at least two items") {
    EvalCorpus one;
    one.items = {{"a", "alpha beta gamma", {"one two three"}}};
    CHECK_THROWS_AS(cider_d(one), Error);
}

TEST_CASE("metrics are invariant under item permutation") {
    auto corpus = from_oracle(oracle::hand_corpus_10());
    auto reversed = corpus;
    std::reverse(reversed.items.begin(), reversed.items.end());
    CHECK(bleu4(corpus) == doctest::Approx(bleu4(reversed)).epsilon(1e-12));
    CHECK(rouge_l(corpus) == doctest::Approx(rouge_l(reversed)).epsilon(1e-12));
    CHECK(cider_d(corpus) == doctest::Approx(cider_d(reversed)).epsilon(1e-12));
}

TEST_CASE("appending a perfectly matching item never decreases corpus BLEU-4") {
    std::mt19937_64 rng(404);
    const char* vocab[] = {"river", "bridge", "mayor", "opened", "crowd", "cheered",
                           "north", "station", "red", "green", "the", "a"};
    auto sentence = [&](size_t len) {
        std::string s;
        for (size_t i = 0; i < len; ++i) {
            if (i) s += ' ';
            s += vocab[rng() % 12];
        }
        return s;
    };
    for (int trial = 0; trial < 30; ++trial) {
        EvalCorpus corpus;
        size_t n = 2 + rng() % 6;
        for (size_t i = 0; i < n; ++i)
            corpus.items.push_back(
                {"i" + std::to_string(i), sentence(5 + rng() % 8), {sentence(5 + rng() % 8)}});
        double before = bleu4(corpus);
        std::string perfect = sentence(6 + rng() % 6);
        corpus.items.push_back({"p", perfect, {perfect}});
        CHECK(bleu4(corpus) >= before - 1e-12);
    }
}

TEST_CASE("entity_prf analytic case: half right is 0.5 across the board") {
    GazetteerNer ner({{"Alice Harper", EntityType::PERSON},
                      {"Springfield", EntityType::GPE},
                      {"Denver", EntityType::GPE}});
    EvalCorpus corpus;
    corpus.items = {{"a", "Alice Harper stood in Springfield.",
                     {"Alice Harper stood in Denver."}}};
    auto scores = entity_prf(corpus, ner);
    CHECK(scores.at("ALL").precision == doctest::Approx(0.5));
    CHECK(scores.at("ALL").recall == doctest::Approx(0.5));
    CHECK(scores.at("ALL").f1 == doctest::Approx(0.5));
    CHECK(scores.at("PERSON").f1 == doctest::Approx(1.0));
    CHECK(scores.at("GPE").f1 == doctest::Approx(0.0));
}

TEST_CASE("entity_prf zero-division rule") {
    GazetteerNer ner({{"Alice Harper", EntityType::PERSON}});
    EvalCorpus corpus;
    corpus.items = {{"a", "nothing notable here.", {"Alice Harper waved."}}};
    auto scores = entity_prf(corpus, ner);
    CHECK(scores.at("ALL").precision == 0.0);
    CHECK(scores.at("ALL").recall == 0.0);
    CHECK(scores.at("ALL").f1 == 0.0);
}

TEST_CASE("entity normalization strips leading articles and case") {
    GazetteerNer ner({{"White House", EntityType::ORG}, {"the White House", EntityType::ORG}});
    EvalCorpus corpus;
    corpus.items = {{"a", "Officials met at the White House.", {"A speech at THE WHITE HOUSE."}}};
    auto scores = entity_prf(corpus, ner);
    CHECK(scores.at("ALL").f1 == doctest::Approx(1.0));
}

TEST_CASE("entity_prf micro counts equal a brute-force matching oracle on planted items") {
    // planted entities with known types; the oracle recounts matches by hand
    std::vector<std::pair<std::string, EntityType>> universe = {
        {"Alice Harper", EntityType::PERSON}, {"Bob Vance", EntityType::PERSON},
        {"Carla Marsh", EntityType::PERSON},  {"Springfield", EntityType::GPE},
        {"Denver", EntityType::GPE},          {"Toronto", EntityType::GPE},
        {"Atlas Group", EntityType::ORG},     {"Summit Bank", EntityType::ORG},
    };
    GazetteerNer ner(universe);
    std::mt19937_64 rng(88);
    EvalCorpus corpus;
    std::vector<std::pair<std::vector<size_t>, std::vector<size_t>>> planted;
    for (int i = 0; i < 20; ++i) {
        auto pick = [&](size_t n) {
            std::vector<size_t> idx;
            for (size_t k = 0; k < n; ++k) idx.push_back(rng() % universe.size());
            return idx;
        };
        auto cand_idx = pick(1 + rng() % 3);
        auto ref_idx = pick(1 + rng() % 3);
        auto sentence = [&](const std::vector<size_t>& idx) {
            std::string s = "seen today:";
            for (size_t k : idx) s += " " + universe[k].first + " appeared;";
            return s;
        };
        corpus.items.push_back({"i" + std::to_string(i), sentence(cand_idx), {sentence(ref_idx)}});
        planted.emplace_back(cand_idx, ref_idx);
    }
    auto scores = entity_prf(corpus, ner);

    // oracle: multiset match counts per (name, type), pooled micro
    double matched = 0, predicted = 0, expected = 0;
    for (const auto& [cand_idx, ref_idx] : planted) {
        std::map<size_t, int> c, r;
        for (size_t k : cand_idx) ++c[k];
        for (size_t k : ref_idx) ++r[k];
        for (const auto& [k, n] : c) {
            predicted += n;
            if (r.count(k)) matched += std::min(n, r.at(k));
        }
        for (const auto& [k, n] : r) expected += n;
    }
    double p = matched / predicted, rr = matched / expected;
    CHECK(scores.at("ALL").precision == doctest::Approx(p).epsilon(1e-12));
    CHECK(scores.at("ALL").recall == doctest::Approx(rr).epsilon(1e-12));
    CHECK(scores.at("ALL").f1 == doctest::Approx(2 * p * rr / (p + rr)).epsilon(1e-12));

    // structural invariants
    for (const auto& [name, s] : scores) {
        CHECK(s.f1 <= std::max(s.precision, s.recall) + 1e-12);
        CHECK(s.precision <= 1.0);
        CHECK(s.recall <= 1.0);
    }
}

TEST_CASE("macro averaging is exposed behind the options flag") {
    GazetteerNer ner({{"Alice Harper", EntityType::PERSON}, {"Denver", EntityType::GPE}});
    EvalCorpus corpus;
    corpus.items = {{"a", "Alice Harper spoke.", {"Alice Harper spoke."}},
                    {"b", "Denver cheered. Alice Harper waved.", {"Denver cheered."}}};
    auto micro = entity_prf(corpus, ner, {true});
    auto macro = entity_prf(corpus, ner, {false});
    // item a: P=R=1; item b: P=1/2, R=1 -> macro P = 0.75; micro P = 2/3
    CHECK(macro.at("ALL").precision == doctest::Approx(0.75));
    CHECK(micro.at("ALL").precision == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("self-referenced fixture corpus: BLEU-4 and entity F1 both exactly 1") {
    auto fs = make_fixtures(21, 8);
    GazetteerNer ner(fs.gazetteer);
    EvalCorpus corpus;
    for (const auto& rec : fs.records)
        corpus.items.push_back({rec.article_id, *rec.gold_caption, {*rec.gold_caption}});
    CHECK(bleu4(corpus) == doctest::Approx(1.0).epsilon(1e-12));
    auto scores = entity_prf(corpus, ner);
    CHECK(scores.at("ALL").f1 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("empty corpora and missing references are rejected") {
    EvalCorpus empty;
    CHECK_THROWS_AS(bleu4(empty), Error);
    CHECK_THROWS_AS(rouge_l(empty), Error);
    EvalCorpus bad;
    bad.items = {{"a", "text", {}}};
    CHECK_THROWS_AS(bleu4(bad), Error);
    EvalCorpus dup;
    dup.items = {{"a", "x", {"x"}}, {"a", "y", {"y"}}};
    CHECK_THROWS_AS(bleu4(dup), Error);
}
