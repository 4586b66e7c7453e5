#pragma once
// Canonical dataset representation, the streaming canonical_jsonl loader, and
// the synthetic fixture generator the tests and mock runs are built on.
//
// canonical_jsonl: one UTF-8 JSON record per line with fields article_id,
// image_ref, headline (optional), body, gold_caption (optional), split
// (train|val|test).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "merge/emkb.hpp"
#include "merge/error.hpp"
#include "merge/gateways.hpp"
#include "merge/text.hpp"

namespace merge {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "test";
}

inline Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error(ErrorKind::format, "unknown split: " + std::string(s));
}

struct ArticleRecord {
    std::string article_id;
    std::string image_ref;
    std::optional<std::string> headline;
    std::string body;
    std::optional<std::string> gold_caption;
    Split split = Split::test;
};

inline std::string to_canonical_line(const ArticleRecord& rec) {
    nlohmann::ordered_json j;
    j["article_id"] = rec.article_id;
    j["image_ref"] = rec.image_ref;
    if (rec.headline) j["headline"] = *rec.headline;
    j["body"] = rec.body;
    if (rec.gold_caption) j["gold_caption"] = *rec.gold_caption;
    j["split"] = to_string(rec.split);
    return j.dump();
}

// Parses one canonical_jsonl line; throws Error(format/data) on anything
// invalid.
inline ArticleRecord parse_canonical_record(const std::string& line, bool require_gold = false) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("not valid JSON: ") + e.what());
    }
    ArticleRecord rec;
    try {
        rec.article_id = j.at("article_id").get<std::string>();
        rec.image_ref = j.at("image_ref").get<std::string>();
        rec.body = j.at("body").get<std::string>();
        rec.split = split_from_string(j.value("split", "test"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("missing field: ") + e.what());
    }
    if (j.contains("headline") && j["headline"].is_string())
        rec.headline = j["headline"].get<std::string>();
    if (j.contains("gold_caption") && j["gold_caption"].is_string())
        rec.gold_caption = j["gold_caption"].get<std::string>();
    if (rec.article_id.empty()) throw Error(ErrorKind::data, "article_id is empty");
    if (text::trim(rec.body).empty())
        throw Error(ErrorKind::data, "body is empty for " + rec.article_id);
    if (require_gold && rec.split != Split::train && !rec.gold_caption)
        throw Error(ErrorKind::data, "gold_caption required for " + rec.article_id);
    return rec;
}

struct LoadOptions {
    bool strict = true;           // invalid record -> abort with its line number
    bool require_gold = false;    // val/test records must carry gold_caption
    double max_error_rate = 0.5;  // lenient mode: abort past this invalid fraction
    // lenient-mode report sink: (line number, message)
    std::function<void(size_t, const std::string&)> on_error;
};

// Streaming reader: one record in memory at a time, constant memory in corpus
// size. Invalid lines are fatal in strict mode, reported and skipped in
// lenient mode; a lenient run aborts when the invalid fraction exceeds
// max_error_rate (evaluated once at least 10 lines have been seen).
class CorpusReader {
public:
    CorpusReader(const std::filesystem::path& path, LoadOptions options = {})
        : in_(path), options_(std::move(options)), path_(path.string()) {
        if (!in_) throw Error(ErrorKind::io, "cannot read corpus " + path_);
    }

    std::optional<ArticleRecord> next() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (text::trim(line).empty()) continue;
            ++seen_;
            try {
                return parse_canonical_record(line, options_.require_gold);
            } catch (const Error& e) {
                ++invalid_;
                if (options_.strict)
                    throw Error(ErrorKind::data, path_ + " line " + std::to_string(line_no_) + ": " +
                                                     e.what());
                if (options_.on_error) options_.on_error(line_no_, e.what());
                if (seen_ >= 10 &&
                    static_cast<double>(invalid_) >
                        options_.max_error_rate * static_cast<double>(seen_))
                    throw Error(ErrorKind::data,
                                path_ + ": invalid-record rate exceeded " +
                                    std::to_string(options_.max_error_rate) + " after " +
                                    std::to_string(seen_) + " records");
            }
        }
        return std::nullopt;
    }

    size_t invalid_count() const { return invalid_; }
    size_t line_count() const { return line_no_; }

private:
    std::ifstream in_;
    LoadOptions options_;
    std::string path_;
    size_t line_no_ = 0;
    size_t seen_ = 0;
    size_t invalid_ = 0;
};

inline size_t load_corpus(const std::filesystem::path& path, LoadOptions options,
                          const std::function<void(ArticleRecord&&)>& sink) {
    CorpusReader reader(path, std::move(options));
    size_t count = 0;
    while (auto rec = reader.next()) {
        sink(std::move(*rec));
        ++count;
    }
    return count;
}

inline void write_corpus(const std::filesystem::path& path,
                         const std::vector<ArticleRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write corpus " + path.string());
    for (const auto& rec : records) out << to_canonical_line(rec) << '\n';
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

struct FixtureExpectation {
    std::string article_id;
    bool face_path = false;                        // faces planted in the image ref
    std::vector<std::string> expected_entity_ids;  // analytic RAS-1 outcome
};

// Deterministic synthetic corpus + knowledge base. Image refs are mock
// directives; every embedding is derived from the same content-hash functions
// the mock vision provider uses, so retrieval outcomes are analytic:
// match-case queries hit their entity at similarity 1.0 and no-match queries
// are rejection-sampled to sit below the tau floors against the whole base.
struct FixtureSet {
    StoreConfig store_config;
    std::shared_ptr<EmkbStore> kb;
    std::vector<ArticleRecord> records;
    std::vector<FixtureExpectation> expected;
    std::vector<std::pair<std::string, EntityType>> gazetteer;  // names + types
};

namespace fixture_detail {

inline const std::vector<std::string>& first_names() {
    static const std::vector<std::string> v = {
        "Alice", "Brian", "Carla", "Derek", "Elena", "Felix", "Grace", "Hector", "Irene",
        "Jonas", "Karen", "Liam",  "Mona",  "Nolan", "Opal",  "Pablo", "Quinn",  "Rosa",
        "Stefan", "Tara"};
    return v;
}
inline const std::vector<std::string>& last_names() {
    static const std::vector<std::string> v = {
        "Harper",  "Vance",  "Okafor", "Lindqvist", "Marsh",   "Delgado", "Novak",
        "Reyes",   "Sullivan", "Baptiste", "Keller", "Ashford", "Moreno",  "Whitfield",
        "Osei",    "Lambert", "Petrova", "Hale",     "Iverson", "Quon"};
    return v;
}
inline const std::vector<std::string>& gpe_names() {
    // all present in the tagger's built-in place list
    static const std::vector<std::string> v = {"Springfield", "Denver",  "Toronto", "Madrid",
                                               "Chicago",     "Boston",  "Seattle", "Atlanta",
                                               "London",      "Detroit", "Houston", "Baltimore"};
    return v;
}
inline const std::vector<std::string>& org_names() {
    static const std::vector<std::string> v = {
        "Harbor Institute", "Northgate University", "Meridian Corp",  "Atlas Group",
        "Beacon Council",   "Summit Bank",          "Calder Museum",  "Pioneer Foundation"};
    return v;
}

}  // namespace fixture_detail

inline FixtureSet make_fixtures(uint64_t seed, size_t n) {
    if (n < 1) throw Error(ErrorKind::invalid_argument, "make_fixtures: n must be >= 1");
    using namespace fixture_detail;

    FixtureSet fs;
    fs.store_config = StoreConfig{128, 128, 5, 0.95};
    fs.kb = std::make_shared<EmkbStore>(fs.store_config);
    MockVisionProvider vision(fs.store_config.image_dim, fs.store_config.face_dim, /*salt=*/0);
    std::mt19937_64 rng(seed);

    struct Entity {
        std::string id;
        std::string name;
        EntityType type;
        bool in_kb = false;
        std::string image_uri;   // kb asset ref (also used for clip-match articles)
        std::string face_token;  // PERSON only
    };

    // entity universe: ~60% persons, the rest places and organizations
    size_t universe = std::min<size_t>(12 + n, 48);
    std::vector<Entity> entities;
    std::vector<EmbeddingVector> kb_image_vectors, kb_face_vectors;

    // rejection-sampled refs/tokens keep no-match queries safely under the
    // retrieval floors against every knowledge-base vector
    auto pick_image_ref = [&](const std::string& base, double margin,
                              bool remember) -> std::string {
        for (uint64_t c = 0;; ++c) {
            std::string ref = base + "?v=" + std::to_string(c);
            EmbeddingVector v = vision.embedding_for_ref(ref);
            bool ok = true;
            for (const auto& other : kb_image_vectors)
                if (std::abs(cosine(v, other)) > margin) { ok = false; break; }
            if (ok) {
                if (remember) kb_image_vectors.push_back(std::move(v));
                return ref;
            }
        }
    };
    auto pick_face_token = [&](const std::string& base, double margin,
                               bool remember) -> std::string {
        for (uint64_t c = 0;; ++c) {
            std::string tok = base + "c" + std::to_string(c);
            EmbeddingVector v = vision.face_embedding_for_token(tok);
            bool ok = true;
            for (const auto& other : kb_face_vectors)
                if (std::abs(cosine(v, other)) > margin) { ok = false; break; }
            if (ok) {
                if (remember) kb_face_vectors.push_back(std::move(v));
                return tok;
            }
        }
    };

    for (size_t k = 0; k < universe; ++k) {
        Entity e;
        e.id = "e" + std::to_string(k);
        if (k % 5 == 3) {
            e.type = EntityType::GPE;
            e.name = gpe_names()[(k / 5) % gpe_names().size()];
        } else if (k % 5 == 4) {
            e.type = EntityType::ORG;
            e.name = org_names()[(k / 5) % org_names().size()];
        } else {
            e.type = EntityType::PERSON;
            e.name = first_names()[(k * 7 + static_cast<size_t>(rng() % 3)) % first_names().size()] +
                     " " + last_names()[k % last_names().size()];
        }
        // names must be unique in the gazetteer; extend on clash until they are
        size_t bump = 11;
        for (bool clash = true; clash;) {
            clash = false;
            for (const auto& prior : entities)
                if (text::normalize_label(prior.name) == text::normalize_label(e.name)) {
                    e.name += " " + last_names()[(k + bump) % last_names().size()];
                    bump += 7;
                    clash = true;
                    break;
                }
        }
        e.in_kb = (k % 3) != 2;
        entities.push_back(std::move(e));
    }

    for (auto& e : entities) {
        fs.gazetteer.emplace_back(e.name, e.type);
        if (!e.in_kb) continue;
        e.image_uri = pick_image_ref("fixture://kb/" + e.id, 0.2, true);
        EntityRecord rec;
        rec.entity_id = e.id;
        rec.canonical_name = e.name;
        rec.entity_type = e.type;
        rec.background_text = e.name + " has featured in regional news coverage.";
        ImageAsset asset;
        asset.asset_id = e.id + "-img0";
        asset.source = ImageSource::wikipedia;
        asset.uri = e.image_uri;
        asset.image_embedding = vision.embedding_for_ref(e.image_uri);
        if (e.type == EntityType::PERSON) {
            e.face_token = pick_face_token("f-" + e.id + "-", 0.3, true);
            asset.face_embeddings.push_back(vision.face_embedding_for_token(e.face_token));
        }
        rec.images.push_back(std::move(asset));
        size_t k = static_cast<size_t>(std::stoul(e.id.substr(1)));
        if (k % 2 == 0) {
            rec.subgraph.add_node(e.name);
            rec.subgraph.add_edge(e.name, "Riverside District", "based in");
            if (k % 4 == 0) rec.subgraph.add_edge(e.name, "Civic Heritage Fund", "supported by");
        }
        fs.kb->upsert_entity(std::move(rec));
    }

    auto persons_in_kb = [&] {
        std::vector<size_t> idx;
        for (size_t k = 0; k < entities.size(); ++k)
            if (entities[k].in_kb && entities[k].type == EntityType::PERSON) idx.push_back(k);
        return idx;
    }();
    auto any_in_kb = [&] {
        std::vector<size_t> idx;
        for (size_t k = 0; k < entities.size(); ++k)
            if (entities[k].in_kb) idx.push_back(k);
        return idx;
    }();

    static const char* kVenues[] = {"harbor pavilion", "city archive",   "riverfront plaza",
                                    "exhibition hall", "transit depot",  "botanical terrace"};
    static const char* kEvents[] = {"opened the seasonal exhibit", "announced a joint program",
                                    "reviewed the restoration work", "launched the outreach drive"};

    for (size_t i = 0; i < n; ++i) {
        const Entity& a = entities[(2 * i) % universe];
        const Entity& b = entities[(2 * i + 1) % universe];
        std::string venue = kVenues[rng() % (sizeof(kVenues) / sizeof(kVenues[0]))];
        std::string event = kEvents[rng() % (sizeof(kEvents) / sizeof(kEvents[0]))];

        ArticleRecord rec;
        rec.article_id = "a" + std::to_string(i);
        rec.split = Split::test;
        rec.headline = "Gathering at the " + venue;
        rec.body = a.name + " met " + b.name + " at the " + venue + ". Together they " + event +
                   " before a capacity crowd. " + a.name +
                   " praised the volunteers who organized the day. Organizers said the program "
                   "will continue through next season.";
        rec.gold_caption = a.name + " and " + b.name + " at the " + venue + ".";

        FixtureExpectation exp;
        exp.article_id = rec.article_id;
        switch (i % 4) {
            case 0: {  // face match against a knowledge-base person
                const Entity& p = entities[persons_in_kb[i / 4 % persons_in_kb.size()]];
                rec.image_ref = "fixture://img/" + std::to_string(i) + "?faces=" + p.face_token;
                exp.face_path = true;
                exp.expected_entity_ids = {p.id};
                break;
            }
            case 1: {  // image match against any knowledge-base entity
                const Entity& p = entities[any_in_kb[i / 4 % any_in_kb.size()]];
                rec.image_ref = p.image_uri;
                exp.face_path = false;
                exp.expected_entity_ids = {p.id};
                break;
            }
            case 2: {  // unknown face: below the face floor everywhere
                std::string tok = pick_face_token("u-" + std::to_string(i) + "-", 0.3, false);
                rec.image_ref = "fixture://img/" + std::to_string(i) + "?faces=" + tok;
                exp.face_path = true;
                break;
            }
            case 3:  // no faces, image unrelated to the base
            default: {
                rec.image_ref =
                    pick_image_ref("fixture://img/plain" + std::to_string(i), 0.2, false);
                exp.face_path = false;
                break;
            }
        }
        fs.records.push_back(std::move(rec));
        fs.expected.push_back(std::move(exp));
    }
    return fs;
}

}  // namespace merge
