#pragma once
// Entity-centric multimodal knowledge base.
//
// One record per entity: canonical name, capped image set (with image and
// face embeddings), background text, and a knowledge subgraph. The store
// answers nearest-entity queries by exhaustive cosine scan over flat float
// arrays and persists to a directory:
//
//   entities.jsonl   one structured record per line, embedding byte offsets
//   embeddings.bin   EMKB magic, u32 version, u32 face dim, u32 image dim,
//                    u64 vector count, then row-major little-endian float32
//   MANIFEST         store config + CRC-32 per data file

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "merge/embedding.hpp"
#include "merge/error.hpp"
#include "merge/knowledge_graph.hpp"
#include "merge/text.hpp"

namespace merge {

enum class ImageSource { wikipedia, web_search, dataset, user };
enum class EntityType { PERSON, GPE, ORG, OTHER };
enum class Modality { face, image };

inline const char* to_string(ImageSource s) {
    switch (s) {
        case ImageSource::wikipedia: return "wikipedia";
        case ImageSource::web_search: return "web_search";
        case ImageSource::dataset: return "dataset";
        case ImageSource::user: return "user";
    }
    return "user";
}

inline ImageSource image_source_from_string(std::string_view s) {
    if (s == "wikipedia") return ImageSource::wikipedia;
    if (s == "web_search") return ImageSource::web_search;
    if (s == "dataset") return ImageSource::dataset;
    if (s == "user") return ImageSource::user;
    throw Error(ErrorKind::format, "unknown image source: " + std::string(s));
}

inline const char* to_string(EntityType t) {
    switch (t) {
        case EntityType::PERSON: return "PERSON";
        case EntityType::GPE: return "GPE";
        case EntityType::ORG: return "ORG";
        case EntityType::OTHER: return "OTHER";
    }
    return "OTHER";
}

inline EntityType entity_type_from_string(std::string_view s) {
    if (s == "PERSON") return EntityType::PERSON;
    if (s == "GPE") return EntityType::GPE;
    if (s == "ORG") return EntityType::ORG;
    if (s == "OTHER") return EntityType::OTHER;
    throw Error(ErrorKind::format, "unknown entity type: " + std::string(s));
}

struct ImageAsset {
    std::string asset_id;
    ImageSource source = ImageSource::user;
    EmbeddingVector image_embedding;
    std::vector<EmbeddingVector> face_embeddings;
    std::string uri;
};

struct EntityRecord {
    std::string entity_id;
    std::string canonical_name;
    EntityType entity_type = EntityType::OTHER;
    std::vector<ImageAsset> images;
    std::string background_text;
    KnowledgeGraph subgraph;
};

struct StoreConfig {
    size_t face_dim = 512;
    size_t image_dim = 512;
    size_t image_cap = 5;
    double delta = 0.95;
};

struct NearestHit {
    std::string entity_id;
    std::string asset_id;
    double similarity;
};

// dedup_images outcome: kept candidates in input order, asset ids dropped by
// the delta filter, and asset ids rejected because their embedding has zero
// norm (reported, never silently dropped).
struct DedupReport {
    std::vector<ImageAsset> kept;
    std::vector<std::string> removed;
    std::vector<std::string> rejected_zero_norm;
};

// Keeps exactly the candidates whose image embedding has cosine <= delta
// against every holdout vector and against every already-retained candidate,
// scanning in input order. Idempotent; order-preserving.
inline DedupReport dedup_images(const std::vector<ImageAsset>& candidates,
                                const std::vector<EmbeddingVector>& holdout,
                                double delta) {
    if (!(delta > 0.0 && delta <= 1.0))
        throw Error(ErrorKind::invalid_argument,
                    "dedup delta must be in (0, 1], got " + std::to_string(delta));
    size_t dim = 0;
    for (const auto& c : candidates)
        if (dim == 0) dim = c.image_embedding.dim();
    for (const auto& h : holdout)
        if (dim == 0) dim = h.dim();

    auto normalized = [&](const EmbeddingVector& v, const std::string& what) {
        if (v.dim() != dim)
            throw Error(ErrorKind::dimension_mismatch,
                        "dedup: " + what + " has dim " + std::to_string(v.dim()) +
                            ", expected " + std::to_string(dim));
        if (!v.finite())
            throw Error(ErrorKind::invalid_argument, "dedup: " + what + " is not finite");
        double n = v.norm();
        std::vector<double> u(v.values.begin(), v.values.end());
        if (n > 0.0)
            for (auto& x : u) x /= n;
        return std::pair<std::vector<double>, bool>{std::move(u), n > 0.0};
    };

    std::vector<std::vector<double>> hold;
    hold.reserve(holdout.size());
    for (size_t i = 0; i < holdout.size(); ++i) {
        auto [u, ok] = normalized(holdout[i], "holdout vector " + std::to_string(i));
        if (!ok)
            throw Error(ErrorKind::zero_norm, "dedup: holdout vector " + std::to_string(i) +
                                                  " has zero norm");
        hold.push_back(std::move(u));
    }

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };

    DedupReport report;
    std::vector<std::vector<double>> kept_units;
    for (const auto& cand : candidates) {
        auto [u, ok] = normalized(cand.image_embedding, "candidate " + cand.asset_id);
        if (!ok) {
            report.rejected_zero_norm.push_back(cand.asset_id);
            continue;
        }
        bool keep = true;
        for (const auto& h : hold)
            if (dot(u, h) > delta) { keep = false; break; }
        if (keep)
            for (const auto& k : kept_units)
                if (dot(u, k) > delta) { keep = false; break; }
        if (keep) {
            report.kept.push_back(cand);
            kept_units.push_back(std::move(u));
        } else {
            report.removed.push_back(cand.asset_id);
        }
    }
    return report;
}

namespace detail {

// CRC-32 (IEEE, reflected), table-driven.
inline uint32_t crc32(std::string_view data) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xffffffffu;
    for (char ch : data)
        crc = table[(crc ^ static_cast<unsigned char>(ch)) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline void put_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32le(std::string_view b, size_t off) {
    return static_cast<uint32_t>(static_cast<unsigned char>(b[off])) |
           (static_cast<uint32_t>(static_cast<unsigned char>(b[off + 1])) << 8) |
           (static_cast<uint32_t>(static_cast<unsigned char>(b[off + 2])) << 16) |
           (static_cast<uint32_t>(static_cast<unsigned char>(b[off + 3])) << 24);
}

inline uint64_t get_u64le(std::string_view b, size_t off) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | static_cast<unsigned char>(b[off + static_cast<size_t>(i)]);
    return v;
}

inline void put_f32le(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32le(out, bits);
}

inline float get_f32le(std::string_view b, size_t off) {
    uint32_t bits = get_u32le(b, off);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

}  // namespace detail

inline nlohmann::ordered_json graph_to_json(const KnowledgeGraph& g) {
    nlohmann::ordered_json j;
    j["nodes"] = g.nodes();
    auto edges = nlohmann::ordered_json::array();
    for (const auto& e : g.edges()) edges.push_back({e.source, e.target, e.relation});
    j["edges"] = std::move(edges);
    return j;
}

inline KnowledgeGraph graph_from_json(const nlohmann::json& j) {
    KnowledgeGraph g;
    if (j.contains("nodes"))
        for (const auto& n : j.at("nodes")) g.add_node(n.get<std::string>());
    if (j.contains("edges"))
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 3)
                throw Error(ErrorKind::format, "graph edge is not a [source, target, relation] triple");
            g.add_edge(e[0].get<std::string>(), e[1].get<std::string>(), e[2].get<std::string>());
        }
    return g;
}

constexpr uint32_t kEmkbFormatVersion = 1;

// The store handle. Many concurrent readers or one exclusive writer; all
// query methods are const and take shared locks, so a `const EmkbStore&` (or
// the shared_ptr returned by snapshot()) is an immutable view. Handles may be
// moved between threads.
class EmkbStore {
public:
    explicit EmkbStore(StoreConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.face_dim == 0 || cfg_.image_dim == 0)
            throw Error(ErrorKind::invalid_argument, "store dims must be positive");
        if (cfg_.image_cap == 0)
            throw Error(ErrorKind::invalid_argument, "image cap must be positive");
    }

    EmkbStore(const EmkbStore& o) {
        std::shared_lock lock(o.mu_);
        cfg_ = o.cfg_;
        records_ = o.records_;
        by_id_ = o.by_id_;
        by_name_ = o.by_name_;
        asset_ids_ = o.asset_ids_;
        face_index_ = o.face_index_;
        image_index_ = o.image_index_;
    }

    const StoreConfig& config() const { return cfg_; }

    // Validates and stores the record; an existing record with the same id is
    // replaced atomically. The image list is truncated to image_cap keeping
    // insertion order. Returns the entity id.
    std::string upsert_entity(EntityRecord record) {
        validate(record);
        if (record.images.size() > cfg_.image_cap) record.images.resize(cfg_.image_cap);

        std::unique_lock lock(mu_);
        // asset uniqueness across the store, ignoring the record being replaced
        auto prior = by_id_.find(record.entity_id);
        std::unordered_set<std::string> own;
        for (const auto& img : record.images) {
            if (!own.insert(img.asset_id).second)
                throw Error(ErrorKind::invalid_argument,
                            "duplicate asset_id within record: " + img.asset_id);
            auto it = asset_ids_.find(img.asset_id);
            if (it != asset_ids_.end() && (prior == by_id_.end() || it->second != record.entity_id))
                throw Error(ErrorKind::invalid_argument,
                            "asset_id already present in store: " + img.asset_id);
        }

        auto rec = std::make_shared<const EntityRecord>(std::move(record));
        if (prior != by_id_.end()) {
            for (const auto& img : records_[prior->second]->images) asset_ids_.erase(img.asset_id);
            records_[prior->second] = rec;
            rebuild_indexes();
        } else {
            by_id_.emplace(rec->entity_id, records_.size());
            records_.push_back(rec);
            append_to_indexes(*rec);
        }
        for (const auto& img : rec->images) asset_ids_.emplace(img.asset_id, rec->entity_id);
        by_name_[text::normalize_label(rec->canonical_name)] = rec->entity_id;
        return rec->entity_id;
    }

    std::shared_ptr<const EntityRecord> find(std::string_view entity_id) const {
        std::shared_lock lock(mu_);
        auto it = by_id_.find(std::string(entity_id));
        return it == by_id_.end() ? nullptr : records_[it->second];
    }

    std::shared_ptr<const EntityRecord> find_by_name(std::string_view name) const {
        std::shared_lock lock(mu_);
        auto it = by_name_.find(text::normalize_label(name));
        if (it == by_name_.end()) return nullptr;
        auto rec = by_id_.find(it->second);
        return rec == by_id_.end() ? nullptr : records_[rec->second];
    }

    // Stored subgraph, or the empty graph when the entity is unknown or has
    // none. Never an error: downstream graph construction proceeds without it.
    KnowledgeGraph get_subgraph(std::string_view entity_id) const {
        auto rec = find(entity_id);
        return rec ? rec->subgraph : KnowledgeGraph{};
    }

    KnowledgeGraph get_subgraph_by_name(std::string_view name) const {
        auto rec = find_by_name(name);
        return rec ? rec->subgraph : KnowledgeGraph{};
    }

    // Exhaustive cosine scan over every stored vector of the modality. An
    // asset's face similarity is the max over its face vectors. Descending
    // similarity, ties by ascending (entity_id, asset_id); at most k hits.
    // Empty store for the modality yields an empty list.
    std::vector<NearestHit> nearest_entities(const EmbeddingVector& query, Modality modality,
                                             size_t k) const {
        if (k == 0) throw Error(ErrorKind::invalid_argument, "nearest_entities: k must be positive");
        std::shared_lock lock(mu_);
        const FlatIndex& index = modality == Modality::face ? face_index_ : image_index_;
        size_t dim = modality == Modality::face ? cfg_.face_dim : cfg_.image_dim;
        if (query.dim() != dim)
            throw Error(ErrorKind::dimension_mismatch,
                        "query dim " + std::to_string(query.dim()) + " does not match store dim " +
                            std::to_string(dim));
        if (!query.finite())
            throw Error(ErrorKind::invalid_argument, "query embedding is not finite");
        if (index.count() == 0) return {};
        double qn = query.norm();
        if (qn == 0.0) throw Error(ErrorKind::zero_norm, "query embedding has zero norm");

        // per-vector similarity, reduced to per-asset max
        std::unordered_map<uint64_t, double> best;  // packed (entity idx, asset slot) -> sim
        best.reserve(index.count());
        for (size_t v = 0; v < index.count(); ++v) {
            const float* row = index.data.data() + v * dim;
            double dot = 0.0;
            for (size_t i = 0; i < dim; ++i) dot += static_cast<double>(row[i]) * query.values[i];
            double sim = dot * index.inv_norms[v] / qn;
            if (sim > 1.0) sim = 1.0;
            if (sim < -1.0) sim = -1.0;
            uint64_t key = index.owner[v];
            auto [it, inserted] = best.emplace(key, sim);
            if (!inserted && sim > it->second) it->second = sim;
        }

        std::vector<std::pair<uint64_t, double>> ranked(best.begin(), best.end());
        auto label = [&](uint64_t key) -> std::pair<const std::string&, const std::string&> {
            const auto& rec = *records_[key >> 20];
            return {rec.entity_id, rec.images[key & 0xfffff].asset_id};
        };
        std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            auto la = label(a.first), lb = label(b.first);
            if (la.first != lb.first) return la.first < lb.first;
            return la.second < lb.second;
        });
        if (ranked.size() > k) ranked.resize(k);
        std::vector<NearestHit> hits;
        hits.reserve(ranked.size());
        for (const auto& [key, sim] : ranked) {
            auto l = label(key);
            hits.push_back(NearestHit{l.first, l.second, sim});
        }
        return hits;
    }

    // Applies the delta filter to every entity's image list (optionally
    // against a holdout set). Returns (removed, zero-norm-rejected) counts.
    std::pair<size_t, size_t> apply_dedup(double delta, const std::vector<EmbeddingVector>& holdout) {
        std::unique_lock lock(mu_);
        size_t removed = 0, rejected = 0;
        bool changed = false;
        for (auto& rec : records_) {
            DedupReport rep = dedup_images(rec->images, holdout, delta);
            if (rep.removed.empty() && rep.rejected_zero_norm.empty()) continue;
            removed += rep.removed.size();
            rejected += rep.rejected_zero_norm.size();
            EntityRecord copy = *rec;
            for (const auto& gone : rep.removed) asset_ids_.erase(gone);
            for (const auto& gone : rep.rejected_zero_norm) asset_ids_.erase(gone);
            copy.images = std::move(rep.kept);
            rec = std::make_shared<const EntityRecord>(std::move(copy));
            changed = true;
        }
        if (changed) rebuild_indexes();
        return {removed, rejected};
    }

    size_t entity_count() const {
        std::shared_lock lock(mu_);
        return records_.size();
    }

    struct Stats {
        size_t entities = 0;
        size_t images = 0;
        size_t face_vectors = 0;
        size_t triples = 0;
    };

    Stats stats() const {
        std::shared_lock lock(mu_);
        Stats s;
        s.entities = records_.size();
        for (const auto& rec : records_) {
            s.images += rec->images.size();
            for (const auto& img : rec->images) s.face_vectors += img.face_embeddings.size();
            s.triples += rec->subgraph.edge_count();
        }
        return s;
    }

    std::vector<std::shared_ptr<const EntityRecord>> all_records() const {
        std::shared_lock lock(mu_);
        return records_;
    }

    // Immutable view for sharing across worker threads / hot reload.
    std::shared_ptr<const EmkbStore> snapshot() const {
        return std::make_shared<const EmkbStore>(*this);
    }

    void save(const std::filesystem::path& dir) const;
    static EmkbStore load(const std::filesystem::path& dir);

private:
    struct FlatIndex {
        size_t dim = 0;
        std::vector<float> data;        // count * dim, raw values
        std::vector<double> inv_norms;  // 1 / |v| per vector
        std::vector<uint64_t> owner;    // (record index << 20) | asset slot

        size_t count() const { return inv_norms.size(); }
        void clear() {
            data.clear();
            inv_norms.clear();
            owner.clear();
        }
        // zero-norm vectors are unmatchable under cosine and are skipped
        void add(const EmbeddingVector& v, uint64_t owner_key) {
            double n = v.norm();
            if (n == 0.0) return;
            data.insert(data.end(), v.values.begin(), v.values.end());
            inv_norms.push_back(1.0 / n);
            owner.push_back(owner_key);
        }
    };

    void validate(const EntityRecord& record) const {
        if (record.entity_id.empty())
            throw Error(ErrorKind::invalid_argument, "entity_id is empty");
        if (text::trim(record.canonical_name).empty())
            throw Error(ErrorKind::invalid_argument,
                        "canonical_name is empty for entity " + record.entity_id);
        for (const auto& img : record.images) {
            if (img.asset_id.empty())
                throw Error(ErrorKind::invalid_argument,
                            "asset_id is empty in entity " + record.entity_id);
            img.image_embedding.validate(cfg_.image_dim, "asset " + img.asset_id);
            for (const auto& f : img.face_embeddings)
                f.validate(cfg_.face_dim, "asset " + img.asset_id + " face");
        }
        if (!record.subgraph.empty() && !record.subgraph.contains(record.canonical_name))
            throw Error(ErrorKind::invalid_argument,
                        "subgraph of entity " + record.entity_id +
                            " lacks a node for its canonical name");
    }

    void append_to_indexes(const EntityRecord& rec) {
        size_t rec_idx = by_id_.at(rec.entity_id);
        if (rec.images.size() >= (1u << 20))
            throw Error(ErrorKind::invalid_argument, "too many images in one record");
        for (size_t a = 0; a < rec.images.size(); ++a) {
            uint64_t key = (static_cast<uint64_t>(rec_idx) << 20) | a;
            image_index_.add(rec.images[a].image_embedding, key);
            for (const auto& f : rec.images[a].face_embeddings) face_index_.add(f, key);
        }
    }

    void rebuild_indexes() {
        face_index_.clear();
        image_index_.clear();
        face_index_.dim = cfg_.face_dim;
        image_index_.dim = cfg_.image_dim;
        for (size_t r = 0; r < records_.size(); ++r) {
            const auto& rec = *records_[r];
            for (size_t a = 0; a < rec.images.size(); ++a) {
                uint64_t key = (static_cast<uint64_t>(r) << 20) | a;
                image_index_.add(rec.images[a].image_embedding, key);
                for (const auto& f : rec.images[a].face_embeddings) face_index_.add(f, key);
            }
        }
    }

    StoreConfig cfg_;
    std::vector<std::shared_ptr<const EntityRecord>> records_;
    std::unordered_map<std::string, size_t> by_id_;
    std::unordered_map<std::string, std::string> by_name_;   // normalized name -> id
    std::unordered_map<std::string, std::string> asset_ids_; // asset id -> entity id
    FlatIndex face_index_;
    FlatIndex image_index_;
    mutable std::shared_mutex mu_;
};

inline void EmkbStore::save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    std::shared_lock lock(mu_);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create store directory " + dir.string());

    std::string bin;
    bin.reserve(64);
    bin += "EMKB";
    detail::put_u32le(bin, kEmkbFormatVersion);
    detail::put_u32le(bin, static_cast<uint32_t>(cfg_.face_dim));
    detail::put_u32le(bin, static_cast<uint32_t>(cfg_.image_dim));
    uint64_t vector_count = 0;
    for (const auto& rec : records_)
        for (const auto& img : rec->images) vector_count += 1 + img.face_embeddings.size();
    detail::put_u64le(bin, vector_count);

    auto write_vec = [&](const EmbeddingVector& v) {
        uint64_t off = bin.size();
        for (float f : v.values) detail::put_f32le(bin, f);
        return off;
    };

    std::string jsonl;
    for (const auto& rec : records_) {
        nlohmann::ordered_json j;
        j["entity_id"] = rec->entity_id;
        j["canonical_name"] = rec->canonical_name;
        j["entity_type"] = to_string(rec->entity_type);
        j["background_text"] = rec->background_text;
        j["subgraph"] = graph_to_json(rec->subgraph);
        auto images = nlohmann::ordered_json::array();
        for (const auto& img : rec->images) {
            nlohmann::ordered_json ij;
            ij["asset_id"] = img.asset_id;
            ij["source"] = to_string(img.source);
            ij["uri"] = img.uri;
            ij["image_offset"] = write_vec(img.image_embedding);
            auto faces = nlohmann::ordered_json::array();
            for (const auto& f : img.face_embeddings) faces.push_back(write_vec(f));
            ij["face_offsets"] = std::move(faces);
            images.push_back(std::move(ij));
        }
        j["images"] = std::move(images);
        jsonl += j.dump();
        jsonl += '\n';
    }

    auto write_file = [&](const fs::path& p, const std::string& content) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(ErrorKind::io, "short write to " + p.string());
    };
    write_file(dir / "entities.jsonl", jsonl);
    write_file(dir / "embeddings.bin", bin);

    std::string manifest = "EMKB-MANIFEST 1\n";
    manifest += "image_cap " + std::to_string(cfg_.image_cap) + "\n";
    char delta_buf[32];
    std::snprintf(delta_buf, sizeof(delta_buf), "%.17g", cfg_.delta);
    manifest += std::string("delta ") + delta_buf + "\n";
    char crc_buf[16];
    std::snprintf(crc_buf, sizeof(crc_buf), "%08x", detail::crc32(jsonl));
    manifest += std::string("crc32 ") + crc_buf + " entities.jsonl\n";
    std::snprintf(crc_buf, sizeof(crc_buf), "%08x", detail::crc32(bin));
    manifest += std::string("crc32 ") + crc_buf + " embeddings.bin\n";
    write_file(dir / "MANIFEST", manifest);
}

inline EmkbStore EmkbStore::load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    auto read_file = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw Error(ErrorKind::io, "cannot read " + p.string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return content;
    };

    std::string manifest = read_file(dir / "MANIFEST");
    StoreConfig cfg;
    {
        std::istringstream in(manifest);
        std::string line;
        if (!std::getline(in, line) || line.rfind("EMKB-MANIFEST ", 0) != 0)
            throw Error(ErrorKind::format, "MANIFEST header is malformed");
        std::unordered_map<std::string, uint32_t> checksums;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string key;
            ls >> key;
            if (key == "image_cap") {
                ls >> cfg.image_cap;
            } else if (key == "delta") {
                ls >> cfg.delta;
            } else if (key == "crc32") {
                std::string hex, name;
                ls >> hex >> name;
                try {
                    checksums[name] = static_cast<uint32_t>(std::stoul(hex, nullptr, 16));
                } catch (const std::exception&) {
                    throw Error(ErrorKind::format, "MANIFEST checksum is not hex: " + hex);
                }
            } else {
                throw Error(ErrorKind::format, "MANIFEST has unknown entry: " + key);
            }
        }
        for (const auto& name : {"entities.jsonl", "embeddings.bin"}) {
            auto it = checksums.find(name);
            if (it == checksums.end())
                throw Error(ErrorKind::format, std::string("MANIFEST lacks checksum for ") + name);
            std::string content = read_file(dir / name);
            if (detail::crc32(content) != it->second)
                throw Error(ErrorKind::checksum, std::string("checksum mismatch for ") + name);
        }
    }

    std::string bin = read_file(dir / "embeddings.bin");
    if (bin.size() < 24) throw Error(ErrorKind::truncated, "embeddings.bin shorter than its header");
    if (bin.compare(0, 4, "EMKB") != 0)
        throw Error(ErrorKind::format, "embeddings.bin has bad magic");
    uint32_t version = detail::get_u32le(bin, 4);
    if (version > kEmkbFormatVersion)
        throw Error(ErrorKind::version, "embeddings.bin format version " + std::to_string(version) +
                                            " is newer than supported " +
                                            std::to_string(kEmkbFormatVersion));
    cfg.face_dim = detail::get_u32le(bin, 8);
    cfg.image_dim = detail::get_u32le(bin, 12);
    uint64_t vector_count = detail::get_u64le(bin, 16);

    EmkbStore store(cfg);
    auto read_vec = [&](uint64_t off, size_t dim) {
        if (off < 24 || off + dim * 4 > bin.size())
            throw Error(ErrorKind::truncated, "embedding offset past end of embeddings.bin");
        std::vector<float> v(dim);
        for (size_t i = 0; i < dim; ++i) v[i] = detail::get_f32le(bin, off + i * 4);
        return EmbeddingVector(std::move(v));
    };

    std::string jsonl = read_file(dir / "entities.jsonl");
    std::istringstream lines(jsonl);
    std::string line;
    size_t line_no = 0;
    uint64_t seen_vectors = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, "entities.jsonl line " + std::to_string(line_no) +
                                               " is not valid JSON: " + e.what());
        }
        try {
            EntityRecord rec;
            rec.entity_id = j.at("entity_id").get<std::string>();
            rec.canonical_name = j.at("canonical_name").get<std::string>();
            rec.entity_type = entity_type_from_string(j.at("entity_type").get<std::string>());
            rec.background_text = j.value("background_text", std::string());
            rec.subgraph = graph_from_json(j.at("subgraph"));
            for (const auto& ij : j.at("images")) {
                ImageAsset img;
                img.asset_id = ij.at("asset_id").get<std::string>();
                img.source = image_source_from_string(ij.at("source").get<std::string>());
                img.uri = ij.value("uri", std::string());
                img.image_embedding = read_vec(ij.at("image_offset").get<uint64_t>(), cfg.image_dim);
                ++seen_vectors;
                for (const auto& off : ij.at("face_offsets")) {
                    img.face_embeddings.push_back(read_vec(off.get<uint64_t>(), cfg.face_dim));
                    ++seen_vectors;
                }
                rec.images.push_back(std::move(img));
            }
            store.upsert_entity(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, "entities.jsonl line " + std::to_string(line_no) +
                                               " is missing fields: " + e.what());
        }
    }
    if (seen_vectors != vector_count)
        throw Error(ErrorKind::format,
                    "embeddings.bin header promises " + std::to_string(vector_count) +
                        " vectors, entities.jsonl references " + std::to_string(seen_vectors));
    return store;
}

}  // namespace merge
