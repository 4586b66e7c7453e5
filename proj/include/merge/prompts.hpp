#pragma once
// Prompt templates for the three alignment stages and relation extraction.
// Templates are plain text with named placeholders ({ARTICLE}, {HYPOTHESIS},
// {IMAGE}, {ENTITIES}, {SENTENCES}); the compiled-in defaults are mirrored by
// the versioned files under prompts/, and a directory of overrides can be
// loaded at runtime. Leading '#' lines in template files are metadata and are
// stripped.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "merge/error.hpp"

namespace merge::prompts {

// Stage 1: hypothesis caption + key sentences.
inline constexpr std::string_view kHypothesisSystem =
    "You draft grounded news-image captions. Read the attached image and the article, pick up "
    "to 10 key sentences that carry the article's main facts and visual content, then write one "
    "entity-aware caption of at most 30 words.\n"
    "Respond with JSON only: {\"caption\": \"...\", \"key_sentences\": [\"...\"]}";
inline constexpr std::string_view kHypothesisUser =
    "Image: {IMAGE}\n"
    "Article:\n{ARTICLE}";

// Stage 2: relevant sentence selection anchored on the hypothesis caption.
inline constexpr std::string_view kSentenceSystem =
    "You align article sentences with an image. Select up to 5 sentences, copied verbatim from "
    "the article, that best connect the draft caption to the image.\n"
    "Respond with JSON only: {\"sentences\": [\"...\"]}";
inline constexpr std::string_view kSentenceUser =
    "Image: {IMAGE}\n"
    "Draft caption: {HYPOTHESIS}\n"
    "Article:\n{ARTICLE}";

// Stage 3: global summary.
inline constexpr std::string_view kSummarySystem =
    "You summarize news articles. Write a summary of at most 100 words covering the article's "
    "broader context.\n"
    "Respond with JSON only: {\"summary\": \"...\"}";
inline constexpr std::string_view kSummaryUser =
    "Article:\n{ARTICLE}";

// Relation extraction over the entities found in the selected sentences.
inline constexpr std::string_view kRelationSystem =
    "You extract relations between named entities in news text. Emit one directed relationship "
    "per entity pair at most, use only the listed entities as endpoints, and keep each relation "
    "description to at most three words.\n"
    "Respond with a list of tuples like: [(\"source\", \"target\", \"relation\")]";
inline constexpr std::string_view kRelationUser =
    "Entities: {ENTITIES}\n"
    "Sentences:\n{SENTENCES}";

struct TemplateSet {
    std::string hypothesis_system{kHypothesisSystem};
    std::string hypothesis_user{kHypothesisUser};
    std::string sentence_system{kSentenceSystem};
    std::string sentence_user{kSentenceUser};
    std::string summary_system{kSummarySystem};
    std::string summary_user{kSummaryUser};
    std::string relation_system{kRelationSystem};
    std::string relation_user{kRelationUser};
};

inline std::string load_template_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read prompt template " + path.string());
    std::string out, line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header && (line.empty() || line[0] == '#')) continue;
        header = false;
        if (!out.empty()) out += '\n';
        out += line;
    }
    return out;
}

// Loads p_h.txt / p_s.txt / p_g.txt / p_r.txt from `dir`. Each file holds the
// system instructions, a line of three dashes, then the user template.
inline TemplateSet load_templates(const std::filesystem::path& dir) {
    TemplateSet set;
    auto split = [](const std::string& content, std::string& system, std::string& user,
                    const std::string& which) {
        size_t sep = content.find("\n---\n");
        if (sep == std::string::npos)
            throw Error(ErrorKind::format, "prompt template " + which +
                                               " lacks the `---` system/user separator");
        system = content.substr(0, sep);
        user = content.substr(sep + 5);
    };
    split(load_template_file(dir / "p_h.txt"), set.hypothesis_system, set.hypothesis_user, "p_h");
    split(load_template_file(dir / "p_s.txt"), set.sentence_system, set.sentence_user, "p_s");
    split(load_template_file(dir / "p_g.txt"), set.summary_system, set.summary_user, "p_g");
    split(load_template_file(dir / "p_r.txt"), set.relation_system, set.relation_user, "p_r");
    return set;
}

inline std::string render(std::string_view tpl,
                          std::initializer_list<std::pair<std::string_view, std::string_view>>
                              replacements) {
    std::string out(tpl);
    for (const auto& [key, value] : replacements) {
        std::string placeholder = "{" + std::string(key) + "}";
        size_t pos = 0;
        while ((pos = out.find(placeholder, pos)) != std::string::npos) {
            out.replace(pos, placeholder.size(), value);
            pos += value.size();
        }
    }
    return out;
}

}  // namespace merge::prompts
