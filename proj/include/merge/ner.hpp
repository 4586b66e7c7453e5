#pragma once
// Pluggable named-entity recognition. The default tagger is deterministic:
// a caller-supplied gazetteer (longest match wins) layered over a
// capitalization heuristic, so tests and the mock pipeline need no external
// model. A real tagger can be wired in behind the same interface.

#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "merge/emkb.hpp"
#include "merge/text.hpp"

namespace merge {

struct EntityMention {
    std::string surface;
    EntityType type = EntityType::OTHER;

    bool operator==(const EntityMention& o) const {
        return surface == o.surface && type == o.type;
    }
};

class Ner {
public:
    virtual ~Ner() = default;
    virtual std::vector<EntityMention> extract(const std::string& text) const = 0;
    virtual std::string name() const = 0;
};

namespace detail {
inline const std::unordered_set<std::string>& sentence_start_stopwords() {
    static const std::unordered_set<std::string> words = {
        "the", "a", "an", "in", "on", "at", "it", "he", "she", "they", "we", "i", "you",
        "this", "that", "these", "those", "but", "and", "or", "so", "as", "if", "when",
        "while", "after", "before", "his", "her", "its", "their", "our", "there", "here",
        "now", "then", "however", "meanwhile", "yet", "still", "once", "though", "although",
        "officials", "police", "today", "yesterday", "monday", "tuesday", "wednesday",
        "thursday", "friday", "saturday", "sunday", "no", "not", "one", "two", "three",
    };
    return words;
}

inline const std::unordered_set<std::string>& org_suffixes() {
    static const std::unordered_set<std::string> words = {
        "inc", "inc.", "corp", "corp.", "corporation", "company", "co", "co.", "ltd",
        "ltd.", "university", "institute", "agency", "committee", "council", "department",
        "association", "ministry", "bank", "group", "club", "fc", "united", "times",
        "post", "museum", "foundation", "airlines", "studios",
    };
    return words;
}

inline const std::unordered_set<std::string>& builtin_gpe() {
    // countries, states, and large cities; enough for the heuristic path
    static const std::unordered_set<std::string> places = {
        "america", "argentina", "australia", "austria", "belgium", "brazil", "britain",
        "canada", "chile", "china", "colombia", "cuba", "denmark", "egypt", "england",
        "france", "germany", "greece", "india", "indonesia", "iran", "iraq", "ireland",
        "israel", "italy", "japan", "kenya", "mexico", "nigeria", "norway", "pakistan",
        "poland", "portugal", "russia", "scotland", "spain", "sweden", "switzerland",
        "turkey", "ukraine", "wales", "united states", "united kingdom", "new zealand",
        "south korea", "north korea", "south africa", "saudi arabia",
        "california", "texas", "florida", "ohio", "virginia", "georgia", "arizona",
        "michigan", "colorado", "oregon", "nevada", "missouri", "alabama", "kansas",
        "iowa", "utah", "maine", "montana", "idaho", "alaska", "hawaii", "vermont",
        "new york", "new jersey", "new mexico", "north carolina", "south carolina",
        "new hampshire", "rhode island", "north dakota", "south dakota", "west virginia",
        "london", "paris", "berlin", "madrid", "rome", "moscow", "beijing", "tokyo",
        "seoul", "sydney", "toronto", "chicago", "boston", "seattle", "denver", "atlanta",
        "houston", "dallas", "miami", "detroit", "philadelphia", "washington",
        "los angeles", "san francisco", "las vegas", "new orleans", "mexico city",
        "hong kong", "springfield", "baltimore", "cleveland", "pittsburgh", "nashville",
    };
    return places;
}
}  // namespace detail

// Gazetteer + capitalization tagger.
//
// Tokens are scanned left to right; maximal runs of capitalized tokens form
// candidate mentions (a run consisting solely of one sentence-initial stopword
// is ignored). Gazetteer entries decide the type when they match (longest
// normalized match first); otherwise ORG when the mention carries a corporate
// suffix, GPE when it is a known place, PERSON for multi-token mentions, and
// OTHER for the rest.
class GazetteerNer : public Ner {
public:
    GazetteerNer() = default;

    explicit GazetteerNer(const std::vector<std::pair<std::string, EntityType>>& entries) {
        for (const auto& [name, type] : entries) add(name, type);
    }

    // Convenience: seed the gazetteer with every entity in a knowledge base.
    static std::shared_ptr<GazetteerNer> from_store(const EmkbStore& store) {
        auto ner = std::make_shared<GazetteerNer>();
        for (const auto& rec : store.all_records()) ner->add(rec->canonical_name, rec->entity_type);
        return ner;
    }

    void add(std::string_view name, EntityType type) {
        std::string norm = text::normalize_label(name);
        if (norm.empty()) return;
        size_t words = text::word_count(norm);
        gazetteer_[norm] = type;
        if (words > max_entry_words_) max_entry_words_ = words;
    }

    std::vector<EntityMention> extract(const std::string& input) const override {
        std::vector<EntityMention> mentions;
        for (const auto& sentence : text::split_sentences(input)) {
            auto words = text::split_words(sentence);
            std::vector<std::string> cleaned(words.size());
            for (size_t i = 0; i < words.size(); ++i) cleaned[i] = strip_punct(words[i]);

            size_t i = 0;
            while (i < words.size()) {
                // gazetteer pass: longest normalized window match, any casing
                bool matched = false;
                size_t max_w = std::min(max_entry_words_, words.size() - i);
                for (size_t w = max_w; w >= 1 && !matched; --w) {
                    std::string window;
                    for (size_t k = 0; k < w; ++k) {
                        if (k) window += ' ';
                        window += cleaned[i + k];
                    }
                    auto it = gazetteer_.find(text::normalize_label(window));
                    if (it != gazetteer_.end()) {
                        mentions.push_back(EntityMention{window, it->second});
                        i += w;
                        matched = true;
                    }
                    if (w == 1) break;
                }
                if (matched) continue;

                if (!is_capitalized(cleaned[i])) {
                    ++i;
                    continue;
                }
                size_t j = i;
                while (j < words.size() && is_capitalized(cleaned[j])) ++j;
                bool sentence_initial_stopword =
                    (j - i == 1) && i == 0 &&
                    detail::sentence_start_stopwords().count(text::normalize_label(cleaned[i]));
                if (!sentence_initial_stopword) {
                    std::string surface;
                    for (size_t k = i; k < j; ++k) {
                        if (k > i) surface += ' ';
                        surface += cleaned[k];
                    }
                    mentions.push_back(EntityMention{surface, heuristic_type(surface, cleaned, i, j)});
                }
                i = j;
            }
        }
        return mentions;
    }

    std::string name() const override { return "gazetteer"; }

private:
    static std::string strip_punct(std::string_view w) {
        size_t b = 0, e = w.size();
        auto is_word_char = [](char c) {
            unsigned char u = static_cast<unsigned char>(c);
            return std::isalnum(u) || u >= 0x80 || c == '\'' || c == '-' || c == '.';
        };
        while (b < e && !is_word_char(w[b])) ++b;
        while (e > b && !is_word_char(w[e - 1])) --e;
        std::string out(w.substr(b, e - b));
        if (!out.empty() && out.back() == '.') out.pop_back();  // trailing period, keep initials dots inside
        return out;
    }

    static bool is_capitalized(const std::string& w) {
        return !w.empty() && w[0] >= 'A' && w[0] <= 'Z';
    }

    EntityType heuristic_type(const std::string& surface, const std::vector<std::string>& words,
                              size_t begin, size_t end) const {
        std::string norm = text::normalize_label(surface);
        if (detail::builtin_gpe().count(norm)) return EntityType::GPE;
        for (size_t k = begin; k < end; ++k)
            if (detail::org_suffixes().count(text::normalize_label(words[k]))) return EntityType::ORG;
        if (end - begin >= 2) return EntityType::PERSON;
        return EntityType::OTHER;
    }

    std::unordered_map<std::string, EntityType> gazetteer_;
    size_t max_entry_words_ = 1;
};

}  // namespace merge
