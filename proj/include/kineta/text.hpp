#pragma once

// Prompt decomposition and text embedding.
//
// decompose_rules splits a prompt into chronologically ordered sub-sentences
// on clause markers and expands repetition markers. The embedder is a learned
// closed-vocabulary lookup table with mean pooling per sub-sentence; external
// embeddings can be supplied through the adapter file format instead.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/core.hpp"
#include "kineta/layers.hpp"
#include "kineta/motion.hpp"
#include "kineta/tensor.hpp"

namespace kineta::text {

enum class PromptSource { llm, rules, ground_truth };

inline const char* prompt_source_name(PromptSource s) {
    switch (s) {
        case PromptSource::llm: return "llm";
        case PromptSource::rules: return "rules";
        case PromptSource::ground_truth: return "ground_truth";
    }
    return "?";
}

struct DecomposedPrompt {
    std::string full_text;
    std::vector<std::string> parts;
    PromptSource source = PromptSource::rules;

    size_t n() const { return parts.size(); }

    void validate() const {
        if (parts.empty() || parts.size() > 20)
            throw ValidationError("prompt: part count must be in [1, 20]");
        for (const auto& p : parts)
            if (trim(p).empty()) throw ValidationError("prompt: empty sub-sentence");
    }
};

constexpr int kMaxParts = 20;

inline const char* verb_phrase(motion::Verb v) {
    switch (v) {
        case motion::Verb::walk_forward: return "walks forward";
        case motion::Verb::walk_backward: return "walks backward";
        case motion::Verb::run_forward: return "runs forward";
        case motion::Verb::run_backward: return "runs backward";
        case motion::Verb::turn_left: return "turns left";
        case motion::Verb::turn_right: return "turns right";
        case motion::Verb::squat: return "squats";
        case motion::Verb::stand_up: return "stands up";
        case motion::Verb::raise_left_hand: return "raises the left hand";
        case motion::Verb::raise_right_hand: return "raises the right hand";
        case motion::Verb::lower_left_hand: return "lowers the left hand";
        case motion::Verb::lower_right_hand: return "lowers the right hand";
        case motion::Verb::wave: return "waves";
        case motion::Verb::idle: return "stands still";
    }
    return "?";
}

inline std::string make_full_text(const motion::MotionScript& script) {
    std::string s = "a person ";
    for (size_t i = 0; i < script.commands.size(); ++i) {
        if (i) s += ", then ";
        s += verb_phrase(script.commands[i].verb);
    }
    return s;
}

// One templated sub-sentence per command, in command order.
inline DecomposedPrompt script_to_ground_truth(const motion::MotionScript& script) {
    script.validate();
    DecomposedPrompt p;
    p.full_text = make_full_text(script);
    for (const auto& c : script.commands) p.parts.push_back(std::string("a person ") + verb_phrase(c.verb));
    p.source = PromptSource::ground_truth;
    return p;
}

namespace detail {

// Words plus standalone "," / ";" tokens; other punctuation is dropped.
inline std::vector<std::string> clause_tokens(const std::string& s) {
    std::vector<std::string> toks;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            toks.push_back(lowercase(cur));
            cur.clear();
        }
    };
    for (char c : s) {
        if (c == ',' || c == ';') {
            flush();
            toks.push_back(",");
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            flush();
        } else if (c == '.' || c == '!' || c == '?') {
            flush();
        } else {
            cur += c;
        }
    }
    flush();
    return toks;
}

inline std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

}  // namespace detail

// Deterministic marker-based splitter. Clause boundaries: "," ";" "then"
// "and then" "before" "after" "while". A clause introduced by "after" is
// temporally prior to the clause before the marker and is moved ahead of it.
// "twice"/"again" inside a clause duplicate that clause with the marker
// removed. Worst case the whole prompt is returned as a single part.
inline DecomposedPrompt decompose_rules(const std::string& full_text) {
    if (trim(full_text).empty()) throw ValidationError("decompose: empty prompt");
    auto toks = detail::clause_tokens(full_text);

    struct Clause {
        std::vector<std::string> words;
        bool after_marked = false; // introduced by "after"
    };
    std::vector<Clause> clauses;
    Clause cur;
    bool next_after = false;
    auto close = [&]() {
        if (!cur.words.empty()) {
            cur.after_marked = next_after;
            clauses.push_back(cur);
            next_after = false;
        }
        cur = Clause{};
    };
    for (size_t i = 0; i < toks.size(); ++i) {
        const std::string& w = toks[i];
        if (w == "," || w == "then" || w == "before" || w == "while") {
            close();
        } else if (w == "and" && i + 1 < toks.size() && toks[i + 1] == "then") {
            close();
            ++i;
        } else if (w == "after") {
            close();
            next_after = true;
        } else {
            cur.words.push_back(w);
        }
    }
    close();

    // "Y after X" -> X, Y. A leading "after X, Y" is already in order.
    for (size_t i = 0; i < clauses.size(); ++i)
        if (clauses[i].after_marked && i > 0) std::swap(clauses[i - 1], clauses[i]);

    DecomposedPrompt out;
    out.full_text = full_text;
    out.source = PromptSource::rules;
    for (const auto& c : clauses) {
        std::vector<std::string> words;
        int copies = 1;
        for (const auto& w : c.words) {
            if (w == "twice" || w == "again")
                copies = 2;
            else
                words.push_back(w);
        }
        if (words.empty()) continue;
        for (int r = 0; r < copies && int(out.parts.size()) < kMaxParts; ++r)
            out.parts.push_back(detail::join(words));
        if (int(out.parts.size()) >= kMaxParts) break;
    }
    if (out.parts.empty()) out.parts.push_back(trim(full_text));
    return out;
}

// ---- closed-vocabulary embedder ----

inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> vocab = {
        "<unk>", "a",     "person", "walks", "runs",  "turns",  "squats", "stands",  "raises",
        "lowers", "waves", "forward", "backward", "left", "right", "up",   "down",   "still",
        "the",    "hand",  "then",   "and",   "twice", "again",  "before", "after",  "while",
        "man",    "woman", "he",     "she",   "quickly", "slowly",
    };
    return vocab;
}

constexpr const char* kVocabularyVersion = "kineta-vocab/1";

inline std::vector<int> tokenize(const std::string& sentence) {
    const auto& vocab = vocabulary();
    std::vector<int> ids;
    for (const auto& tok : detail::clause_tokens(sentence)) {
        if (tok == ",") continue;
        int id = 0; // <unk>
        for (size_t i = 0; i < vocab.size(); ++i)
            if (vocab[i] == tok) {
                id = int(i);
                break;
            }
        ids.push_back(id);
    }
    if (ids.empty()) ids.push_back(0);
    return ids;
}

// Per-part embedding vectors; plain values for evaluation and file exchange.
struct TextEmbedding {
    std::vector<std::vector<float>> vectors; // n rows of d_text
    int d_text = 0;
    std::string vocabulary_version = kVocabularyVersion;

    size_t n() const { return vectors.size(); }

    void validate() const {
        for (const auto& row : vectors) {
            if (int(row.size()) != d_text) throw ValidationError("embedding: row width mismatch");
            for (float x : row)
                if (!std::isfinite(x)) throw ValidationError("embedding: non-finite value");
        }
    }
};

// Learned lookup-table embedder, mean-pooled per sub-sentence.
template <typename T>
struct TextEmbedderT {
    nn::EmbeddingT<T> table;
    int d_text = 64;
    nn::ParamSetT<T> params;

    TextEmbedderT() = default;
    TextEmbedderT(int d, uint64_t seed) : d_text(d) {
        Rng rng(derive_seed(seed, 0xe3b));
        table = nn::EmbeddingT<T>(int(vocabulary().size()), d, rng, params, "embedder");
    }

    // Graph node for one sub-sentence: [1, d_text].
    nn::TensorPtr<T> embed_part(nn::TapeT<T>& tape, const std::string& sentence) const {
        return tape.mean_rows(tape.embed(table.table, tokenize(sentence)));
    }

    std::vector<nn::TensorPtr<T>> embed_parts(nn::TapeT<T>& tape, const DecomposedPrompt& prompt) const {
        std::vector<nn::TensorPtr<T>> out;
        out.reserve(prompt.parts.size());
        for (const auto& p : prompt.parts) out.push_back(embed_part(tape, p));
        return out;
    }

    TextEmbedding embed_values(const DecomposedPrompt& prompt) const {
        nn::TapeT<T> tape(false);
        TextEmbedding e;
        e.d_text = d_text;
        for (const auto& p : prompt.parts) {
            auto node = embed_part(const_cast<nn::TapeT<T>&>(tape), p);
            std::vector<float> row(node->v.size());
            for (size_t i = 0; i < row.size(); ++i) row[i] = float(node->v[i]);
            e.vectors.push_back(std::move(row));
        }
        return e;
    }
};

using TextEmbedder = TextEmbedderT<float>;

// ---- external embedding adapter ----
//
// File format "kineta-embed/1": single-line JSON header {format, n, d_text}
// followed by n rows of d_text little-endian float32 values. Lets externally
// computed sub-sentence embeddings stand in for the learned embedder.

constexpr const char* kEmbeddingFormat = "kineta-embed/1";

inline void write_embedding_file(const TextEmbedding& e, const std::string& path) {
    e.validate();
    nlohmann::json header{{"format", kEmbeddingFormat},
                          {"n", e.n()},
                          {"d_text", e.d_text},
                          {"vocabulary_version", e.vocabulary_version}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    os << header.dump() << '\n';
    for (const auto& row : e.vectors)
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
    if (!os) throw ValidationError("write failed: " + path);
}

inline TextEmbedding read_embedding_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path, 0);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("missing embedding header in " + path, 0);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ParseError("malformed embedding header in " + path, ex.byte);
    }
    if (header.at("format").get<std::string>() != kEmbeddingFormat)
        throw ValidationError("unsupported embedding format in " + path);
    TextEmbedding e;
    e.d_text = header.at("d_text").get<int>();
    e.vocabulary_version = header.value("vocabulary_version", std::string(kVocabularyVersion));
    size_t n = header.at("n").get<size_t>();
    for (size_t i = 0; i < n; ++i) {
        std::vector<float> row(size_t(e.d_text));
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (size_t(is.gcount()) != row.size() * sizeof(float))
            throw ParseError("truncated embedding payload in " + path, line.size() + 1 + i * row.size() * 4);
        e.vectors.push_back(std::move(row));
    }
    e.validate();
    return e;
}

}  // namespace kineta::text
