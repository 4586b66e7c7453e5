#include <doctest.h>

#include <fstream>
#include <random>

#include "merge/emkb.hpp"
#include "test_util.hpp"

using namespace merge;

namespace {

ImageAsset asset(const std::string& id, EmbeddingVector image,
                 std::vector<EmbeddingVector> faces = {}) {
    ImageAsset a;
    a.asset_id = id;
    a.source = ImageSource::dataset;
    a.image_embedding = std::move(image);
    a.face_embeddings = std::move(faces);
    a.uri = "test://" + id;
    return a;
}

EntityRecord entity(const std::string& id, const std::string& name,
                    std::vector<ImageAsset> images = {}) {
    EntityRecord r;
    r.entity_id = id;
    r.canonical_name = name;
    r.entity_type = EntityType::PERSON;
    r.images = std::move(images);
    return r;
}

// Brute-force O(n^2) dedup filter, the independent oracle: keep a candidate
// iff its cosine stays <= delta against every holdout vector and every
// earlier-kept candidate.
std::vector<std::string> brute_force_dedup(const std::vector<ImageAsset>& candidates,
                                           const std::vector<EmbeddingVector>& holdout,
                                           double delta) {
    std::vector<std::string> kept_ids;
    std::vector<const EmbeddingVector*> kept;
    for (const auto& c : candidates) {
        if (c.image_embedding.norm() == 0.0) continue;
        bool ok = true;
        for (const auto& h : holdout)
            if (cosine(c.image_embedding, h) > delta) ok = false;
        for (const auto* k : kept)
            if (cosine(c.image_embedding, *k) > delta) ok = false;
        if (ok) {
            kept_ids.push_back(c.asset_id);
            kept.push_back(&c.image_embedding);
        }
    }
    return kept_ids;
}

}  // namespace

TEST_CASE("upsert stores and retrieves by id and name") {
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    auto rec = entity("e1", "Ada Lovelace",
                      {asset("a1", EmbeddingVector({1, 0, 0, 0})),
                       asset("a2", EmbeddingVector({0, 1, 0, 0}))});
    CHECK(store.upsert_entity(rec) == "e1");
    auto got = store.find("e1");
    REQUIRE(got);
    CHECK(got->canonical_name == "Ada Lovelace");
    CHECK(got->images.size() == 2);
    CHECK(store.find_by_name("ada  LOVELACE"));
}

TEST_CASE("upsert truncates to the image cap keeping insertion order") {
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    std::vector<ImageAsset> images;
    for (int i = 0; i < 7; ++i)
        images.push_back(asset("a" + std::to_string(i),
                               EmbeddingVector({static_cast<float>(i + 1), 1, 0, 0})));
    store.upsert_entity(entity("e1", "Crowded", images));
    auto got = store.find("e1");
    REQUIRE(got);
    REQUIRE(got->images.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(got->images[i].asset_id == "a" + std::to_string(i));
}

TEST_CASE("upsert rejects wrong dims naming the asset, and empty names") {
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    auto bad = entity("e1", "Bad", {asset("offending", EmbeddingVector({1, 0, 0}))});
    CHECK_THROWS_WITH_AS(store.upsert_entity(bad), doctest::Contains("offending"), Error);
    CHECK_THROWS_AS(store.upsert_entity(entity("e2", "  ")), Error);
    CHECK(store.entity_count() == 0);
}

TEST_CASE("re-upsert replaces the record atomically") {
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    store.upsert_entity(entity("e1", "First", {asset("a1", EmbeddingVector({1, 0, 0, 0}))}));
    store.upsert_entity(entity("e1", "Second", {asset("a2", EmbeddingVector({0, 1, 0, 0}))}));
    CHECK(store.entity_count() == 1);
    CHECK(store.find("e1")->canonical_name == "Second");
    // the replaced record's asset id is free again
    CHECK_NOTHROW(store.upsert_entity(entity("e3", "Third", {asset("a1", EmbeddingVector({0, 0, 1, 0}))})));
    // but a live one is not
    CHECK_THROWS_AS(store.upsert_entity(entity("e4", "Fourth", {asset("a2", EmbeddingVector({0, 0, 0, 1}))})),
                    Error);
}

TEST_CASE("subgraph must contain the canonical name when non-empty") {
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    auto rec = entity("e1", "Rosetta");
    rec.subgraph.add_edge("Apple Inc", "macOS", "develops");
    CHECK_THROWS_AS(store.upsert_entity(rec), Error);
    rec.subgraph.add_edge("Rosetta", "Apple Inc", "made by");
    CHECK_NOTHROW(store.upsert_entity(rec));
}

TEST_CASE("dedup removes candidates identical to a holdout vector at delta 0.95") {
    auto dup = asset("dup", seeded_unit_vector("h0", 16));
    auto fresh = asset("fresh", seeded_unit_vector("other", 16));
    std::vector<EmbeddingVector> holdout = {seeded_unit_vector("h0", 16)};
    auto report = dedup_images({dup, fresh}, holdout, 0.95);
    REQUIRE(report.kept.size() == 1);
    CHECK(report.kept[0].asset_id == "fresh");
    REQUIRE(report.removed.size() == 1);
    CHECK(report.removed[0] == "dup");
}

TEST_CASE("dedup keeps mutually orthogonal candidates with an empty holdout") {
    std::vector<ImageAsset> cands = {asset("x", EmbeddingVector({1, 0, 0, 0})),
                                     asset("y", EmbeddingVector({0, 1, 0, 0})),
                                     asset("z", EmbeddingVector({0, 0, 1, 0}))};
    auto report = dedup_images(cands, {}, 0.95);
    CHECK(report.kept.size() == 3);
    CHECK(report.removed.empty());
}

TEST_CASE("dedup reports zero-norm candidates instead of silently dropping them") {
    std::vector<ImageAsset> cands = {asset("zero", EmbeddingVector({0, 0, 0, 0})),
                                     asset("ok", EmbeddingVector({1, 0, 0, 0}))};
    auto report = dedup_images(cands, {}, 0.95);
    REQUIRE(report.rejected_zero_norm.size() == 1);
    CHECK(report.rejected_zero_norm[0] == "zero");
    CHECK(report.kept.size() == 1);
}

TEST_CASE("dedup rejects invalid deltas and mismatched dims") {
    CHECK_THROWS_AS(dedup_images({}, {}, 0.0), Error);
    CHECK_THROWS_AS(dedup_images({}, {}, 1.5), Error);
    std::vector<ImageAsset> cands = {asset("a", EmbeddingVector({1, 0}))};
    std::vector<EmbeddingVector> holdout = {EmbeddingVector({1, 0, 0})};
    CHECK_THROWS_AS(dedup_images(cands, holdout, 0.9), Error);
}

TEST_CASE("dedup matches the brute-force oracle and is idempotent (randomized)") {
    std::mt19937_64 rng(20240817);
    for (int trial = 0; trial < 40; ++trial) {
        size_t dim = 4 + rng() % 12;
        size_t n = 1 + rng() % 50;
        size_t h = rng() % 10;
        // cluster vectors so near-duplicates actually occur
        std::vector<EmbeddingVector> centers;
        for (int c = 0; c < 4; ++c) centers.push_back(testutil::random_unit_vector(rng, dim));
        auto jittered = [&]() {
            auto v = centers[rng() % centers.size()];
            if (rng() % 2) {
                auto noise = testutil::random_unit_vector(rng, dim);
                for (size_t i = 0; i < dim; ++i)
                    v.values[i] += 0.05f * noise.values[i];
            }
            return v;
        };
        std::vector<ImageAsset> cands;
        for (size_t i = 0; i < n; ++i) cands.push_back(asset("c" + std::to_string(i), jittered()));
        std::vector<EmbeddingVector> holdout;
        for (size_t i = 0; i < h; ++i) holdout.push_back(jittered());
        double delta = 0.7 + 0.29 * static_cast<double>(rng() % 100) / 100.0;

        auto report = dedup_images(cands, holdout, delta);
        std::vector<std::string> got;
        for (const auto& k : report.kept) got.push_back(k.asset_id);
        CHECK(got == brute_force_dedup(cands, holdout, delta));

        // safety post-scan: no retained pair exceeds delta
        for (size_t i = 0; i < report.kept.size(); ++i) {
            for (const auto& hv : holdout)
                CHECK(cosine(report.kept[i].image_embedding, hv) <= delta + 1e-12);
            for (size_t j = i + 1; j < report.kept.size(); ++j)
                CHECK(cosine(report.kept[i].image_embedding, report.kept[j].image_embedding) <=
                      delta + 1e-12);
        }

        // idempotence
        auto again = dedup_images(report.kept, holdout, delta);
        std::vector<std::string> got2;
        for (const auto& k : again.kept) got2.push_back(k.asset_id);
        CHECK(got2 == got);
    }
}

TEST_CASE("nearest_entities analytic argmax and tie-breaking") {
    EmkbStore store(StoreConfig{2, 2, 5, 0.95});
    store.upsert_entity(entity("A", "A", {asset("a", EmbeddingVector({1, 0}))}));
    store.upsert_entity(entity("B", "B", {asset("b", EmbeddingVector({0, 1}))}));
    auto hits = store.nearest_entities(EmbeddingVector({0.9f, 0.1f}), Modality::image, 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].entity_id == "A");

    // identical embeddings: ascending (entity_id, asset_id) wins
    EmkbStore tie(StoreConfig{2, 2, 5, 0.95});
    tie.upsert_entity(entity("Z", "Z", {asset("z9", EmbeddingVector({1, 0}))}));
    tie.upsert_entity(entity("Q", "Q", {asset("q1", EmbeddingVector({1, 0}))}));
    auto t = tie.nearest_entities(EmbeddingVector({1, 0}), Modality::image, 1);
    REQUIRE(t.size() == 1);
    CHECK(t[0].entity_id == "Q");
}

TEST_CASE("nearest_entities edge cases") {
    EmkbStore store(StoreConfig{2, 2, 5, 0.95});
    CHECK(store.nearest_entities(EmbeddingVector({1, 0}), Modality::image, 3).empty());
    store.upsert_entity(entity("A", "A", {asset("a", EmbeddingVector({1, 0}))}));
    CHECK(store.nearest_entities(EmbeddingVector({1, 0}), Modality::face, 1).empty());
    CHECK_THROWS_AS(store.nearest_entities(EmbeddingVector({1, 0, 0}), Modality::image, 1), Error);
    auto two = store.nearest_entities(EmbeddingVector({1, 0}), Modality::image, 5);
    CHECK(two.size() == 1);  // min(k, available assets)
}

TEST_CASE("nearest_entities top-1 equals an exhaustive scan (randomized)") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        size_t dim = 8 + rng() % 24;
        size_t count = 50 + rng() % 200;
        EmkbStore store(StoreConfig{dim, dim, 5, 0.95});
        std::vector<std::pair<std::string, EmbeddingVector>> raw;  // (entity_id, vector)
        for (size_t i = 0; i < count; ++i) {
            std::string id = "e" + std::to_string(i);
            auto v = testutil::random_unit_vector(rng, dim);
            raw.emplace_back(id, v);
            store.upsert_entity(entity(id, id, {asset(id + "-a", v)}));
        }
        for (int q = 0; q < 20; ++q) {
            auto query = testutil::random_unit_vector(rng, dim);
            // oracle: exhaustive scan over all stored vectors, tie by id
            std::string best_id;
            double best_sim = -2.0;
            for (const auto& [id, v] : raw) {
                double s = cosine(v, query);
                if (s > best_sim + 1e-15 || (std::abs(s - best_sim) <= 1e-15 && id < best_id)) {
                    best_sim = s;
                    best_id = id;
                }
            }
            auto hits = store.nearest_entities(query, Modality::image, 1);
            REQUIRE(hits.size() == 1);
            CHECK(hits[0].entity_id == best_id);
            CHECK(hits[0].similarity == doctest::Approx(best_sim).epsilon(1e-9));
        }
    }
}

TEST_CASE("face modality reduces multiple face vectors per asset to the max") {
    EmkbStore store(StoreConfig{2, 2, 5, 0.95});
    store.upsert_entity(entity(
        "A", "A", {asset("a", EmbeddingVector({1, 0}),
                         {EmbeddingVector({0, 1}), EmbeddingVector({1, 0})})}));
    auto hits = store.nearest_entities(EmbeddingVector({1, 0}), Modality::face, 5);
    REQUIRE(hits.size() == 1);  // one asset, not one row per face vector
    CHECK(hits[0].similarity == doctest::Approx(1.0));
}

TEST_CASE("get_subgraph returns the stored graph or an empty graph") {
    EmkbStore store(StoreConfig{2, 2, 5, 0.95});
    auto rec = entity("e1", "Rosetta");
    rec.subgraph.add_edge("Rosetta", "Apple Inc", "made by");
    store.upsert_entity(rec);
    store.upsert_entity(entity("e2", "Bare"));
    CHECK(store.get_subgraph("e1").edge_count() == 1);
    CHECK(store.get_subgraph("unknown").empty());
    CHECK(store.get_subgraph("e2").empty());
    CHECK(store.get_subgraph_by_name("ROSETTA").edge_count() == 1);
}

TEST_CASE("save/load round-trips records and embedding bytes exactly") {
    testutil::TempDir dir;
    std::mt19937_64 rng(5);
    EmkbStore store(StoreConfig{8, 16, 5, 0.9});
    for (int i = 0; i < 3; ++i) {
        auto rec = entity("e" + std::to_string(i), "Entity " + std::to_string(i),
                          {asset("a" + std::to_string(i), testutil::random_vector(rng, 16),
                                 {testutil::random_vector(rng, 8)})});
        rec.background_text = "background " + std::to_string(i);
        rec.subgraph.add_edge("Entity " + std::to_string(i), "Place", "based in");
        store.upsert_entity(rec);
    }
    store.save(dir.path());
    EmkbStore loaded = EmkbStore::load(dir.path());
    CHECK(loaded.entity_count() == 3);
    CHECK(loaded.config().face_dim == 8);
    CHECK(loaded.config().image_dim == 16);
    CHECK(loaded.config().delta == doctest::Approx(0.9));
    for (int i = 0; i < 3; ++i) {
        auto a = store.find("e" + std::to_string(i));
        auto b = loaded.find("e" + std::to_string(i));
        REQUIRE(b);
        CHECK(a->canonical_name == b->canonical_name);
        CHECK(a->background_text == b->background_text);
        CHECK(a->subgraph.normalized_triples() == b->subgraph.normalized_triples());
        REQUIRE(b->images.size() == 1);
        CHECK(a->images[0].image_embedding.values == b->images[0].image_embedding.values);
        CHECK(a->images[0].face_embeddings[0].values == b->images[0].face_embeddings[0].values);
    }
    // saving the loaded store reproduces identical files
    testutil::TempDir dir2;
    loaded.save(dir2.path());
    for (const char* name : {"entities.jsonl", "embeddings.bin", "MANIFEST"}) {
        std::ifstream f1(dir.path() / name, std::ios::binary);
        std::ifstream f2(dir2.path() / name, std::ios::binary);
        std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(c1 == c2);
    }
}

TEST_CASE("load failure modes are distinct") {
    testutil::TempDir dir;
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    store.upsert_entity(entity("e1", "One", {asset("a1", EmbeddingVector({1, 0, 0, 0}))}));
    store.save(dir.path());

    auto stamp = [&](const char* name, size_t offset, const std::string& bytes) {
        std::fstream f(dir.path() / name, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(offset));
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    auto reset = [&] { store.save(dir.path()); };
    auto kind_of_load = [&]() -> ErrorKind {
        try {
            EmkbStore::load(dir.path());
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::usage;  // sentinel for "no error"
    };

    SUBCASE("corrupted magic is a format error (checksum updated to isolate the header check)") {
        stamp("embeddings.bin", 0, "XXXX");
        // rebuild MANIFEST so only the magic is wrong
        std::ifstream f(dir.path() / "embeddings.bin", std::ios::binary);
        std::string bin((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        std::ifstream m(dir.path() / "MANIFEST");
        std::string manifest((std::istreambuf_iterator<char>(m)), std::istreambuf_iterator<char>());
        char crc[16];
        std::snprintf(crc, sizeof(crc), "%08x", merge::detail::crc32(bin));
        auto at = manifest.find("crc32 ");
        at = manifest.find("crc32 ", at + 1);  // second checksum line = embeddings.bin
        manifest.replace(at + 6, 8, crc);
        std::ofstream out(dir.path() / "MANIFEST", std::ios::trunc);
        out << manifest;
        out.close();
        CHECK(kind_of_load() == ErrorKind::format);
        reset();
    }
    SUBCASE("checksum mismatch") {
        stamp("embeddings.bin", 30, "\x7f");
        CHECK(kind_of_load() == ErrorKind::checksum);
        reset();
    }
    SUBCASE("newer version refuses to load") {
        EmkbStore v2 = store;
        v2.save(dir.path());
        // bump version field and fix the checksum
        std::ifstream f(dir.path() / "embeddings.bin", std::ios::binary);
        std::string bin((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        bin[4] = 9;
        std::ofstream bf(dir.path() / "embeddings.bin", std::ios::trunc | std::ios::binary);
        bf << bin;
        bf.close();
        std::ifstream m(dir.path() / "MANIFEST");
        std::string manifest((std::istreambuf_iterator<char>(m)), std::istreambuf_iterator<char>());
        char crc[16];
        std::snprintf(crc, sizeof(crc), "%08x", merge::detail::crc32(bin));
        auto at = manifest.find("crc32 ");
        at = manifest.find("crc32 ", at + 1);
        manifest.replace(at + 6, 8, crc);
        std::ofstream out(dir.path() / "MANIFEST", std::ios::trunc);
        out << manifest;
        out.close();
        CHECK(kind_of_load() == ErrorKind::version);
        reset();
    }
    SUBCASE("truncated embeddings are reported as truncation, not format") {
        std::ifstream f(dir.path() / "embeddings.bin", std::ios::binary);
        std::string bin((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        bin.resize(26);  // header survives, the payload does not
        std::ofstream bf(dir.path() / "embeddings.bin", std::ios::trunc | std::ios::binary);
        bf << bin;
        bf.close();
        std::ifstream m(dir.path() / "MANIFEST");
        std::string manifest((std::istreambuf_iterator<char>(m)), std::istreambuf_iterator<char>());
        char crc[16];
        std::snprintf(crc, sizeof(crc), "%08x", merge::detail::crc32(bin));
        auto at = manifest.find("crc32 ");
        at = manifest.find("crc32 ", at + 1);
        manifest.replace(at + 6, 8, crc);
        std::ofstream out(dir.path() / "MANIFEST", std::ios::trunc);
        out << manifest;
        out.close();
        CHECK(kind_of_load() == ErrorKind::truncated);
        reset();
    }
    SUBCASE("missing files are io errors") {
        testutil::TempDir empty;
        CHECK_THROWS_AS(EmkbStore::load(empty.path()), Error);
    }
}

TEST_CASE("apply_dedup filters every entity's image list in place") {
    EmkbStore store(StoreConfig{4, 4, 5, 0.95});
    auto near_dup = EmbeddingVector({1.0f, 0.001f, 0, 0});
    store.upsert_entity(entity("e1", "Dupes", {asset("keep", EmbeddingVector({1, 0, 0, 0})),
                                               asset("drop", near_dup)}));
    auto [removed, rejected] = store.apply_dedup(0.95, {});
    CHECK(removed == 1);
    CHECK(rejected == 0);
    REQUIRE(store.find("e1")->images.size() == 1);
    CHECK(store.find("e1")->images[0].asset_id == "keep");
    // the dropped asset no longer reaches queries
    auto hits = store.nearest_entities(near_dup, Modality::image, 2);
    CHECK(hits.size() == 1);
}

TEST_CASE("concurrent readers and an exclusive writer do not interfere") {
    EmkbStore store(StoreConfig{8, 8, 5, 0.95});
    std::mt19937_64 seed_rng(1);
    for (int i = 0; i < 50; ++i)
        store.upsert_entity(entity("e" + std::to_string(i), "Entity " + std::to_string(i),
                                   {asset("a" + std::to_string(i),
                                          testutil::random_unit_vector(seed_rng, 8))}));
    std::atomic<bool> stop{false};
    std::atomic<size_t> reads{0};
    std::vector<std::thread> readers;
    for (int r = 0; r < 4; ++r) {
        readers.emplace_back([&, r] {
            std::mt19937_64 rng(100 + r);
            while (!stop.load()) {
                auto hits = store.nearest_entities(testutil::random_unit_vector(rng, 8),
                                                   Modality::image, 3);
                if (!hits.empty()) {
                    auto rec = store.find(hits[0].entity_id);
                    if (rec) reads.fetch_add(1);
                }
                // pace the readers: saturating a reader-preferring rwlock from
                // every core would starve the writer and stall the test
                std::this_thread::sleep_for(std::chrono::microseconds(200));
            }
        });
    }
    // let the readers actually start before writing (single-core schedulers
    // may otherwise run the writer to completion first)
    for (int i = 0; i < 2000 && reads.load() == 0; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    std::mt19937_64 rng(7);
    for (int w = 0; w < 200; ++w)
        store.upsert_entity(entity("w" + std::to_string(w), "Writer " + std::to_string(w),
                                   {asset("wa" + std::to_string(w),
                                          testutil::random_unit_vector(rng, 8))}));
    size_t mid = reads.load();
    for (int i = 0; i < 2000 && reads.load() <= mid; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    stop.store(true);
    for (auto& t : readers) t.join();
    CHECK(reads.load() > 0);
    CHECK(store.entity_count() == 250);
}
