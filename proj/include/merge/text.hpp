#pragma once
// Shared text routines: normalization, word counting, the metric tokenizer,
// and the rule-based sentence splitter. Every module that compares or counts
// text goes through these so the definitions stay identical project-wide.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace merge::text {

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char ascii_lower(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

// Case-fold + collapse internal whitespace runs to a single space.
// This is the node-label / entity-name normalization.
inline std::string normalize_label(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(ascii_lower(c));
    }
    return out;
}

// Sentence-provenance normalization: case-fold, collapse whitespace, and strip
// surrounding quotes/punctuation from both ends (interior punctuation stays).
inline std::string normalize_for_match(std::string_view s) {
    static constexpr std::string_view strip = ".,;:!?\"'`()[]{}";
    size_t b = 0, e = s.size();
    auto strippable = [&](char c) {
        return is_space(c) || strip.find(c) != std::string_view::npos ||
               static_cast<unsigned char>(c) >= 0x80;  // also drops stray UTF-8 quote bytes at the edges
    };
    // Only strip non-ASCII at the very edges when it forms a common quote mark;
    // being permissive here just widens what counts as "the same sentence".
    while (b < e && strippable(s[b]) && !std::isalnum(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && strippable(s[e - 1]) && !std::isalnum(static_cast<unsigned char>(s[e - 1]))) --e;
    return normalize_label(s.substr(b, e - b));
}

// Whitespace-separated token count after trimming. The project-wide
// definition of "word" (and the default prompt token estimator).
inline size_t word_count(std::string_view s) {
    size_t n = 0;
    bool in_word = false;
    for (char c : s) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++n;
        }
    }
    return n;
}

inline std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        size_t j = i;
        while (j < s.size() && !is_space(s[j])) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

// Keep the first `max_words` whitespace-separated words.
inline std::string truncate_words(std::string_view s, size_t max_words) {
    size_t n = 0;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        if (i >= s.size()) break;
        if (n == max_words) break;
        while (i < s.size() && !is_space(s[i])) ++i;
        ++n;
    }
    if (i >= s.size() && n <= max_words) return std::string(s);
    // i points just past the last kept word
    size_t end = i;
    return trim(s.substr(0, end));
}

// Metric tokenizer, shared by BLEU/ROUGE/CIDEr so scores stay comparable:
// ASCII case-fold, alphanumeric runs become tokens, each ASCII punctuation
// character becomes its own single-character token, whitespace separates.
// Bytes >= 0x80 are treated as word characters so UTF-8 sequences survive.
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (is_space(c) || u < 0x20) {  // control bytes separate, never become tokens
            flush();
        } else if (std::isalnum(u) || u >= 0x80) {
            cur.push_back(ascii_lower(c));
        } else {
            flush();
            out.emplace_back(1, c);
        }
    }
    flush();
    return out;
}

using SentenceSplitter = std::function<std::vector<std::string>(const std::string&)>;

namespace detail {
inline const std::vector<std::string>& abbreviations() {
    static const std::vector<std::string> abbr = {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "gen", "gov", "sen",
        "rep", "col", "lt", "sgt", "capt", "cmdr", "vs", "etc", "inc", "ltd", "corp",
        "co", "dept", "univ", "assn", "bros", "ph.d", "u.s", "u.k", "u.n", "e.g", "i.e",
        "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
        "no", "vol", "fig", "approx",
    };
    return abbr;
}

inline bool ends_with_abbreviation(std::string_view upto) {
    // upto ends just before the terminal '.'; find the last word.
    size_t e = upto.size();
    size_t b = e;
    while (b > 0 && !is_space(upto[b - 1])) --b;
    std::string word;
    word.reserve(e - b);
    for (size_t i = b; i < e; ++i) word.push_back(ascii_lower(upto[i]));
    if (word.empty()) return false;
    // Single capital letter followed by '.' is an initial ("Ramon M. Santiago").
    if (word.size() == 1 && std::isalpha(static_cast<unsigned char>(word[0]))) return true;
    for (const auto& a : abbreviations())
        if (word == a) return true;
    return false;
}
}  // namespace detail

// Rule-based sentence splitter: a sentence ends at '.', '!' or '?' (plus any
// closing quotes) unless the dot terminates a known abbreviation or initial.
// Terminal punctuation stays with its sentence.
inline std::vector<std::string> split_sentences(const std::string& article) {
    std::vector<std::string> out;
    std::string cur;
    const size_t n = article.size();
    for (size_t i = 0; i < n; ++i) {
        char c = article[i];
        cur.push_back(c);
        bool terminal = (c == '!' || c == '?');
        if (c == '.') {
            std::string_view upto(article.data(), i);
            terminal = !detail::ends_with_abbreviation(upto);
            // "..." and decimal numbers do not end a sentence mid-run
            if (i + 1 < n && (article[i + 1] == '.' || std::isdigit(static_cast<unsigned char>(article[i + 1]))))
                terminal = false;
        }
        if (terminal) {
            // absorb trailing closing quotes/brackets
            while (i + 1 < n && (article[i + 1] == '"' || article[i + 1] == '\'' ||
                                 article[i + 1] == ')' || article[i + 1] == ']')) {
                cur.push_back(article[++i]);
            }
            std::string s = trim(cur);
            if (!s.empty()) out.push_back(std::move(s));
            cur.clear();
        }
    }
    std::string tail = trim(cur);
    if (!tail.empty()) out.push_back(std::move(tail));
    return out;
}

// FNV-1a 64-bit, the deterministic content hash behind the mock gateways and
// fixture generation.
inline uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL) {
    uint64_t h = seed;
    for (char c : data) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace merge::text
