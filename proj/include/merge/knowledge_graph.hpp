#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "merge/error.hpp"
#include "merge/text.hpp"

namespace merge {

// Labeled nodes plus directed (source, target, relation) edges. Used for the
// per-entity knowledge subgraphs, the base relation graph, and the integrated
// background graph.
//
// Invariants maintained by construction:
//   - node labels unique after normalization (case-fold + whitespace collapse);
//     the first-seen casing is kept for display
//   - every edge endpoint is a node
//   - no duplicate (normalized source, normalized target, relation) triples
//   - relations are non-empty and at most 3 whitespace-separated words
class KnowledgeGraph {
public:
    struct Edge {
        std::string source;    // display label
        std::string target;    // display label
        std::string relation;

        bool operator==(const Edge& o) const {
            return source == o.source && target == o.target && relation == o.relation;
        }
    };

    KnowledgeGraph() = default;

    bool empty() const { return nodes_.empty() && edges_.empty(); }
    size_t node_count() const { return nodes_.size(); }
    size_t edge_count() const { return edges_.size(); }

    const std::vector<std::string>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }

    bool contains(std::string_view label) const {
        return norm_to_index_.count(text::normalize_label(label)) > 0;
    }

    // Display label for a (possibly differently-cased) label, empty if absent.
    std::string display_label(std::string_view label) const {
        auto it = norm_to_index_.find(text::normalize_label(label));
        return it == norm_to_index_.end() ? std::string() : nodes_[it->second];
    }

    // Inserts the node unless an equivalent label is already present.
    // Returns the display label in effect.
    const std::string& add_node(std::string_view label) {
        std::string norm = text::normalize_label(label);
        if (norm.empty())
            throw Error(ErrorKind::invalid_argument, "graph node label is empty");
        auto it = norm_to_index_.find(norm);
        if (it != norm_to_index_.end()) return nodes_[it->second];
        nodes_.emplace_back(text::trim(label));
        norm_to_index_.emplace(std::move(norm), nodes_.size() - 1);
        return nodes_.back();
    }

    // Adds the directed edge, inserting endpoints as needed. Exact duplicates
    // (normalized endpoints + identical relation) are dropped. Returns true
    // when the edge was new.
    bool add_edge(std::string_view source, std::string_view target, std::string_view relation) {
        std::string rel = text::trim(relation);
        if (rel.empty())
            throw Error(ErrorKind::invalid_argument, "graph relation is empty");
        if (text::word_count(rel) > 3)
            throw Error(ErrorKind::invalid_argument,
                        "graph relation exceeds 3 words: \"" + rel + "\"");
        std::string ns = text::normalize_label(source);
        std::string nt = text::normalize_label(target);
        if (ns.empty() || nt.empty())
            throw Error(ErrorKind::invalid_argument, "graph edge endpoint label is empty");
        std::string key = ns + '\x1f' + nt + '\x1f' + rel;
        if (!edge_keys_.insert(key).second) return false;
        std::string ds = add_node(source);  // by value: the second add_node may reallocate nodes_
        std::string dt = add_node(target);
        edges_.push_back(Edge{std::move(ds), std::move(dt), std::move(rel)});
        return true;
    }

    // Normalized triple set, independent of insertion order and display casing.
    std::vector<std::string> normalized_triples() const {
        std::vector<std::string> out;
        out.reserve(edges_.size());
        for (const auto& e : edges_)
            out.push_back(text::normalize_label(e.source) + '\t' + e.relation + '\t' +
                          text::normalize_label(e.target));
        std::sort(out.begin(), out.end());
        return out;
    }

    // Wire form: sorted `source<TAB>relation<TAB>target` lines, one per edge,
    // plus `node<TAB><TAB>` lines for isolated nodes. UTF-8, '\n'-terminated.
    std::string to_tsv() const {
        std::vector<std::string> lines;
        lines.reserve(edges_.size() + nodes_.size());
        std::unordered_set<std::string> connected;
        for (const auto& e : edges_) {
            lines.push_back(e.source + '\t' + e.relation + '\t' + e.target);
            connected.insert(text::normalize_label(e.source));
            connected.insert(text::normalize_label(e.target));
        }
        for (const auto& n : nodes_)
            if (!connected.count(text::normalize_label(n))) lines.push_back(n + "\t\t");
        std::sort(lines.begin(), lines.end());
        std::string out;
        for (const auto& l : lines) {
            out += l;
            out += '\n';
        }
        return out;
    }

    bool operator==(const KnowledgeGraph& o) const {
        return nodes_ == o.nodes_ && edges_ == o.edges_;
    }

private:
    std::vector<std::string> nodes_;
    std::unordered_map<std::string, size_t> norm_to_index_;
    std::vector<Edge> edges_;
    std::unordered_set<std::string> edge_keys_;
};

}  // namespace merge
