#include <doctest.h>

#include "merge/ingest.hpp"
#include "merge/pipeline.hpp"
#include "test_util.hpp"

using namespace merge;

namespace {

KnowledgeGraph chain_graph(size_t triples) {
    KnowledgeGraph g;
    for (size_t i = 0; i < triples; ++i)
        g.add_edge("N" + std::to_string(i), "N" + std::to_string(i + 1), "links");
    return g;
}

AlignmentContext context(std::string hyp, std::vector<std::string> sentences, std::string summary,
                         std::vector<std::string> keys = {}) {
    AlignmentContext ctx;
    ctx.hypothesis.text = std::move(hyp);
    ctx.hypothesis.key_sentences = std::move(keys);
    ctx.relevant.sentences = std::move(sentences);
    ctx.summary.text = std::move(summary);
    return ctx;
}

std::string words(size_t n, const std::string& prefix = "w") {
    std::string out;
    for (size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += prefix + std::to_string(i);
    }
    return out;
}

}  // namespace

TEST_CASE("linearize_graph renders sorted triples with a period per line") {
    KnowledgeGraph g;
    g.add_edge("A", "B", "defeated");
    CHECK(linearize_graph(g, 10) == "A defeated B.");
    CHECK(linearize_graph(KnowledgeGraph{}, 10) == "");

    auto big = chain_graph(20);
    std::string lin = linearize_graph(big, 10);
    size_t lines = std::count(lin.begin(), lin.end(), '\n') + 1;
    CHECK(lines == 11);
    CHECK(lin.find("…and 10 more relations.") != std::string::npos);
}

TEST_CASE("linearization is sorted lexicographically by (source, target, relation)") {
    KnowledgeGraph g;
    g.add_edge("B", "A", "r2");
    g.add_edge("A", "Z", "r1");
    g.add_edge("A", "B", "r3");
    auto lin = linearize_graph(g, 10);
    CHECK(lin == "A r3 B.\nA r1 Z.\nB r2 A.");
}

TEST_CASE("assemble_inputs deduplicates entities and fixes ordering") {
    std::vector<EntityMatch> matches = {
        {"e1", "Beta", 0.7, MatchPath::face},
        {"e2", "Alpha", 0.9, MatchPath::face},
        {"e1", "Beta", 0.8, MatchPath::clip},
    };
    auto inputs = assemble_inputs("img", context("h", {}, ""), matches, {});
    REQUIRE(inputs.entities.size() == 2);
    CHECK(inputs.entities[0].canonical_name == "Alpha");
    CHECK(inputs.entities[1].similarity == doctest::Approx(0.8));  // max kept for e1
}

TEST_CASE("the final prompt carries all six sections in fixed order") {
    auto ctx = context("draft cap", {"sent one.", "sent two."}, "the summary", {"key a"});
    KnowledgeGraph g;
    g.add_edge("A", "B", "met");
    auto inputs = assemble_inputs("img", ctx, {{"e1", "Alpha", 0.9, MatchPath::face}}, g);
    auto prompt = build_prompt(inputs, 64);
    std::string text = prompt.render();
    size_t p_e = text.find("Known entities: Alpha.");
    size_t p_s = text.find("Relevant sentences:");
    size_t p_u = text.find("Article summary: the summary");
    size_t p_h = text.find("Draft caption: draft cap");
    size_t p_k = text.find("Key sentences:");
    size_t p_g = text.find("Background relations:");
    size_t p_i = text.find("Write one concise");
    REQUIRE(p_e != std::string::npos);
    REQUIRE(p_s != std::string::npos);
    REQUIRE(p_u != std::string::npos);
    REQUIRE(p_h != std::string::npos);
    REQUIRE(p_k != std::string::npos);
    REQUIRE(p_g != std::string::npos);
    REQUIRE(p_i != std::string::npos);
    CHECK(p_e < p_s);
    CHECK(p_s < p_u);
    CHECK(p_u < p_h);
    CHECK(p_h < p_k);
    CHECK(p_k < p_g);
    CHECK(p_g < p_i);
}

TEST_CASE("empty entity and graph sections are omitted entirely") {
    auto inputs = assemble_inputs("img", context("h", {"s."}, "u"), {}, {});
    std::string text = build_prompt(inputs, 64).render();
    CHECK(text.find("Known entities") == std::string::npos);
    CHECK(text.find("Background relations") == std::string::npos);
    CHECK(text.find("Draft caption: h") != std::string::npos);
}

TEST_CASE("enforce_budget leaves under-budget prompts untouched") {
    auto inputs = assemble_inputs("img", context("h", {"s."}, "u"), {}, chain_graph(3));
    auto prompt = build_prompt(inputs, 64);
    std::string before = prompt.render();
    auto after = enforce_budget(prompt, 1024);
    CHECK(after.render() == before);
}

TEST_CASE("over budget by graph alone: graph trimmed, everything else intact") {
    auto ctx = context(words(10, "h"), {words(8, "s") + "."}, words(20, "u"), {words(6, "k")});
    auto inputs = assemble_inputs("img", ctx, {{"e1", "Alpha", 0.9, MatchPath::face}},
                                  chain_graph(300));
    PipelineConfig cfg;
    auto prompt = build_prompt(inputs, 1000);
    size_t full_graph_lines = prompt.graph_lines.size();
    size_t budget = cfg.estimate(prompt.render()) - 300;  // force ~100 graph lines out
    auto trimmed = enforce_budget(prompt, budget, cfg);
    CHECK(trimmed.graph_lines.size() < full_graph_lines);
    CHECK_FALSE(trimmed.graph_lines.empty());
    CHECK(trimmed.summary_words.size() == 20);
    CHECK(trimmed.key_sentences.size() == 1);
    CHECK(trimmed.sentences.size() == 1);
    CHECK(cfg.estimate(trimmed.render()) <= budget);
    // the truncation marker reflects the hidden remainder
    CHECK(trimmed.render().find("more relations.") != std::string::npos);
}

TEST_CASE("trimming order: graph, then summary tail, then key sentences, then sentences") {
    PipelineConfig cfg;
    // hypothesis long enough that the never-trimmed core alone clears the
    // 64-token floor
    auto make_prompt = [&] {
        auto ctx = context(words(60, "h"), {words(30, "s") + "."}, words(60, "u"),
                           {words(20, "k"), words(20, "kk")});
        auto inputs =
            assemble_inputs("img", ctx, {{"e1", "Alpha", 0.9, MatchPath::face}}, chain_graph(40));
        return build_prompt(inputs, 64);
    };
    auto p = make_prompt();
    auto estimate_without = [&](bool summary, bool keys, bool sents, bool graph) {
        AssembledPrompt q = p;
        if (!summary) q.summary_words.clear();
        if (!keys) q.key_sentences.clear();
        if (!sents) q.sentences.clear();
        if (!graph) q.graph_lines.clear();
        return cfg.estimate(q.render());
    };

    // room for part of the summary, none for the graph
    size_t budget = estimate_without(false, true, true, false) + 30;
    auto t = enforce_budget(make_prompt(), budget, cfg);
    CHECK(t.graph_lines.empty());
    CHECK(t.summary_words.size() >= 25);
    CHECK(t.summary_words.size() <= 30);
    CHECK(t.key_sentences.size() == 2);
    CHECK(t.sentences.size() == 1);

    // room for one key sentence; summary fully gone first
    size_t one_key = estimate_without(false, false, true, false) + 24;
    auto t2 = enforce_budget(make_prompt(), one_key, cfg);
    CHECK(t2.graph_lines.empty());
    CHECK(t2.summary_words.empty());
    CHECK(t2.key_sentences.size() == 1);
    CHECK(t2.sentences.size() == 1);

    // nothing but the untrimmable core fits: S goes too, hypothesis survives
    size_t bare = estimate_without(false, false, false, false) + 2;
    auto t3 = enforce_budget(make_prompt(), std::max<size_t>(64, bare), cfg);
    CHECK(t3.graph_lines.empty());
    CHECK(t3.summary_words.empty());
    CHECK(t3.key_sentences.empty());
    CHECK(t3.sentences.empty());
    CHECK(t3.hypothesis_text == p.hypothesis_text);
    CHECK_FALSE(t3.entities_block.empty());
}

TEST_CASE("irreducible prompts raise the budget error") {
    auto ctx = context(words(200, "h"), {}, "");
    auto inputs = assemble_inputs("img", ctx, {{"e1", "Alpha", 0.9, MatchPath::face}}, {});
    try {
        enforce_budget(build_prompt(inputs, 64), 64);
        FAIL("expected budget error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::budget_exceeded);
        CHECK(e.stage() == "pipeline/budget");
    }
    CHECK_THROWS_AS(enforce_budget(AssembledPrompt{}, 16), Error);  // n_ctx >= 64
}

TEST_CASE("generate_caption uses one call, n_out, and full provenance") {
    auto provider = std::make_shared<testutil::QueueChatProvider>(
        std::vector<testutil::QueueChatProvider::Step>{
            {"President X speaks in Washington.", std::nullopt}});
    ChatGateway gw(provider, testutil::counting_retry(2, nullptr));
    auto ctx = context("draft", {"sent."}, "sum");
    KnowledgeGraph g;
    g.add_edge("A", "B", "met");
    auto inputs = assemble_inputs("img", ctx, {{"e1", "Alpha", 0.9, MatchPath::face}}, g);
    PipelineConfig cfg;
    auto result = generate_caption(inputs, gw, cfg);
    CHECK(result.caption == "President X speaks in Washington.");
    CHECK(provider->calls() == 1);
    CHECK(result.provenance.matched_entities == std::vector<std::string>{"Alpha"});
    CHECK(result.provenance.selected_sentences == std::vector<std::string>{"sent."});
    CHECK(result.provenance.summary == "sum");
    CHECK(result.provenance.graph_triple_count == 1);
    CHECK(result.provenance.output_tokens >= 1);
    CHECK(result.provenance.output_tokens <= cfg.n_out);
}

TEST_CASE("empty completions are an error") {
    auto provider = std::make_shared<testutil::QueueChatProvider>(
        std::vector<testutil::QueueChatProvider::Step>{{"", std::nullopt}});
    ChatGateway gw(provider, testutil::counting_retry(1, nullptr));
    auto inputs = assemble_inputs("img", context("h", {}, ""), {}, {});
    try {
        generate_caption(inputs, gw);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.stage() == "pipeline/generate");
    }
}

TEST_CASE("over-long completions are clamped to n_out tokens") {
    auto provider = std::make_shared<testutil::QueueChatProvider>(
        std::vector<testutil::QueueChatProvider::Step>{{words(80), std::nullopt}});
    ChatGateway gw(provider, testutil::counting_retry(0, nullptr));
    PipelineConfig cfg;
    cfg.n_out = 50;
    auto result = generate_caption(assemble_inputs("img", context("h", {}, ""), {}, {}), gw, cfg);
    CHECK(result.provenance.output_tokens == 50);
    CHECK(text::word_count(result.caption) == 50);
}

TEST_CASE("run_pipeline end to end is deterministic on fixtures") {
    auto fs = make_fixtures(11, 4);
    auto run_once = [&](size_t i) {
        Gateways gw;
        gw.chat = std::make_shared<ChatGateway>(std::make_shared<MockChatProvider>(),
                                                testutil::counting_retry(2, nullptr));
        gw.vision = std::make_shared<VisionGateway>(
            std::make_shared<MockVisionProvider>(fs.store_config.image_dim,
                                                 fs.store_config.face_dim, 0),
            fs.store_config.image_dim, fs.store_config.face_dim);
        PipelineConfig cfg;
        cfg.ner = std::make_shared<GazetteerNer>(fs.gazetteer);
        auto result = run_pipeline(fs.records[i].image_ref, fs.records[i].body, *fs.kb, gw, cfg);
        return to_json(result).dump();
    };
    for (size_t i = 0; i < fs.records.size(); ++i) {
        std::string a = run_once(i);
        std::string b = run_once(i);
        CHECK(a == b);
        CHECK_FALSE(nlohmann::json::parse(a)["caption"].get<std::string>().empty());
    }
}

TEST_CASE("pipeline completes with an empty knowledge base") {
    auto fs = make_fixtures(12, 2);
    EmkbStore empty(fs.store_config);
    Gateways gw;
    gw.chat = std::make_shared<ChatGateway>(std::make_shared<MockChatProvider>(),
                                            testutil::counting_retry(2, nullptr));
    gw.vision = std::make_shared<VisionGateway>(
        std::make_shared<MockVisionProvider>(fs.store_config.image_dim, fs.store_config.face_dim, 0),
        fs.store_config.image_dim, fs.store_config.face_dim);
    PipelineConfig cfg;
    cfg.ner = std::make_shared<GazetteerNer>(fs.gazetteer);
    auto result = run_pipeline(fs.records[0].image_ref, fs.records[0].body, empty, gw, cfg);
    CHECK(result.provenance.matched_entities.empty());
    CHECK_FALSE(result.caption.empty());
}

TEST_CASE("a stage-1 outage aborts with its label before any vision call") {
    struct CountingVision : VisionProvider {
        size_t calls = 0;
        EmbeddingVector embed_image(const std::string&) override {
            ++calls;
            return seeded_unit_vector("x", 8);
        }
        std::vector<FaceDetection> detect_faces(const std::string&) override {
            ++calls;
            return {};
        }
        std::string name() const override { return "counting"; }
    };
    auto vision = std::make_shared<CountingVision>();
    auto chat = std::make_shared<testutil::QueueChatProvider>(
        std::vector<testutil::QueueChatProvider::Step>{
            {"", Error(ErrorKind::transport, "gateway outage")}});
    Gateways gw;
    gw.chat = std::make_shared<ChatGateway>(chat, testutil::counting_retry(0, nullptr));
    gw.vision = std::make_shared<VisionGateway>(vision, 8, 8);
    EmkbStore kb(StoreConfig{8, 8, 5, 0.95});
    try {
        run_pipeline("img", "Some article text.", kb, gw);
        FAIL("expected stage error");
    } catch (const Error& e) {
        CHECK(e.stage() == "hcma/stage 1");
    }
    CHECK(vision->calls == 0);
}

TEST_CASE("provenance entity names always exist in the knowledge base") {
    auto fs = make_fixtures(33, 12);
    Gateways gw;
    gw.chat = std::make_shared<ChatGateway>(std::make_shared<MockChatProvider>(),
                                            testutil::counting_retry(2, nullptr));
    gw.vision = std::make_shared<VisionGateway>(
        std::make_shared<MockVisionProvider>(fs.store_config.image_dim, fs.store_config.face_dim, 0),
        fs.store_config.image_dim, fs.store_config.face_dim);
    PipelineConfig cfg;
    cfg.ner = std::make_shared<GazetteerNer>(fs.gazetteer);
    for (const auto& rec : fs.records) {
        auto result = run_pipeline(rec.image_ref, rec.body, *fs.kb, gw, cfg);
        for (const auto& name : result.provenance.matched_entities)
            CHECK(fs.kb->find_by_name(name) != nullptr);
    }
}

TEST_CASE("prompt template files mirror the compiled defaults") {
    auto set = prompts::load_templates(std::filesystem::path(MERGE_SOURCE_DIR) / "prompts");
    prompts::TemplateSet defaults;
    CHECK(set.hypothesis_system == defaults.hypothesis_system);
    CHECK(set.hypothesis_user == defaults.hypothesis_user);
    CHECK(set.sentence_system == defaults.sentence_system);
    CHECK(set.sentence_user == defaults.sentence_user);
    CHECK(set.summary_system == defaults.summary_system);
    CHECK(set.summary_user == defaults.summary_user);
    CHECK(set.relation_system == defaults.relation_system);
    CHECK(set.relation_user == defaults.relation_user);
}
