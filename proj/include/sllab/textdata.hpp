#pragma once

// Corpus handling: line cleaning, vocabulary with reserved ids, deterministic
// per-class splits, and a synthetic unigram-mixture corpus whose class overlap
// is controllable — the knob the desk-scale experiments turn.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/rng.hpp"

namespace sllab {

inline constexpr std::size_t kMaxSentenceLen = 200;

// ---------------------------------------------------------------------------
// Preprocessing: strip non-ASCII bytes and double quotes, lowercase,
// whitespace-tokenize, drop hyperlink tokens, clamp length.

struct PreprocessStats {
    std::size_t dropped_empty = 0;   // lines with nothing left after cleaning
    std::size_t truncated = 0;       // lines clamped to kMaxSentenceLen
    std::size_t unk_substitutions = 0;  // filled by encode_corpus
};

inline bool is_hyperlink_token(const std::string& tok) {
    return tok.rfind("http://", 0) == 0 || tok.rfind("https://", 0) == 0 ||
           tok.rfind("www.", 0) == 0;
}

/// One raw line -> cleaned lowercase tokens. Empty result means the line
/// should be dropped (the caller counts it).
inline std::vector<std::string> preprocess_line(const std::string& raw,
                                                PreprocessStats* stats = nullptr) {
    std::string clean;
    clean.reserve(raw.size());
    for (unsigned char ch : raw) {
        if (ch >= 0x80) continue;  // non-ASCII byte
        if (ch == '"') continue;
        clean.push_back(static_cast<char>(std::tolower(ch)));
    }
    std::vector<std::string> tokens;
    std::istringstream ss(clean);
    std::string tok;
    while (ss >> tok) {
        if (is_hyperlink_token(tok)) continue;
        tokens.push_back(tok);
    }
    if (tokens.size() > kMaxSentenceLen) {
        tokens.resize(kMaxSentenceLen);
        if (stats) ++stats->truncated;
    }
    return tokens;
}

inline std::vector<std::vector<std::string>> preprocess(
    const std::vector<std::string>& lines, PreprocessStats* stats = nullptr) {
    std::vector<std::vector<std::string>> out;
    out.reserve(lines.size());
    for (const auto& line : lines) {
        auto tokens = preprocess_line(line, stats);
        if (tokens.empty()) {
            if (stats) ++stats->dropped_empty;
            continue;
        }
        out.push_back(std::move(tokens));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;
    static constexpr int kReserved = 3;

    std::vector<std::string> id_to_token;  // starts with the three reserved entries
    std::unordered_map<std::string, int> token_to_id;

    Vocab() : id_to_token{"<pad>", "<eos>", "<unk>"} {
        for (int i = 0; i < kReserved; ++i) token_to_id[id_to_token[i]] = i;
    }

    std::size_t size() const { return id_to_token.size(); }

    int lookup(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        require(id >= 0 && static_cast<std::size_t>(id) < id_to_token.size(),
                "Vocab: token id out of range");
        return id_to_token[static_cast<std::size_t>(id)];
    }

    void add(const std::string& tok) {
        if (token_to_id.count(tok)) return;
        token_to_id[tok] = static_cast<int>(id_to_token.size());
        id_to_token.push_back(tok);
    }

    /// Most frequent `cap` tokens (ties broken lexicographically) on top of
    /// the reserved ids; everything else maps to <unk> at encode time.
    static Vocab build(const std::vector<std::vector<std::string>>& docs,
                       std::size_t cap = 20000) {
        require(!docs.empty(), "build_vocab: corpus must be non-empty");
        std::unordered_map<std::string, std::size_t> freq;
        for (const auto& doc : docs) {
            for (const auto& tok : doc) ++freq[tok];
        }
        std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (ranked.size() > cap) ranked.resize(cap);
        Vocab v;
        for (const auto& [tok, n] : ranked) v.add(tok);
        return v;
    }
};

// ---------------------------------------------------------------------------
// Corpora

struct LabeledCorpus {
    std::vector<std::vector<int>> sentences;  // token ids, <eos>-terminated
    std::vector<int> labels;                  // empty when unlabeled
    Vocab vocab;

    bool labeled() const { return !labels.empty(); }
    std::size_t size() const { return sentences.size(); }

    void validate() const {
        require(labels.empty() || labels.size() == sentences.size(),
                "LabeledCorpus: labels must align 1:1 with sentences");
        for (const auto& s : sentences) {
            require(!s.empty(), "LabeledCorpus: empty sentence");
            for (int id : s) {
                require(id >= 0 && static_cast<std::size_t>(id) < vocab.size(),
                        "LabeledCorpus: token id out of vocab");
            }
        }
    }
};

/// Tokens -> ids with a trailing <eos>; out-of-vocab tokens become <unk>.
inline std::vector<int> encode(const std::vector<std::string>& tokens, const Vocab& v,
                               std::size_t* unk_count = nullptr) {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    for (const auto& tok : tokens) {
        const int id = v.lookup(tok);
        if (id == Vocab::kUnk && unk_count) ++*unk_count;
        ids.push_back(id);
    }
    ids.push_back(Vocab::kEos);
    return ids;
}

/// Ids -> tokens, dropping <pad> and the terminating <eos>.
inline std::vector<std::string> decode(const std::vector<int>& ids, const Vocab& v) {
    std::vector<std::string> tokens;
    for (int id : ids) {
        if (id == Vocab::kPad) continue;
        if (id == Vocab::kEos) break;
        tokens.push_back(v.token(id));
    }
    return tokens;
}

struct RawCorpus {
    std::vector<std::vector<std::string>> docs;
    std::vector<int> labels;  // empty when unlabeled
};

inline LabeledCorpus encode_corpus(const RawCorpus& raw, const Vocab& v,
                                   PreprocessStats* stats = nullptr) {
    LabeledCorpus c;
    c.vocab = v;
    c.labels = raw.labels;
    c.sentences.reserve(raw.docs.size());
    std::size_t unk = 0;
    for (const auto& doc : raw.docs) c.sentences.push_back(encode(doc, v, &unk));
    if (stats) stats->unk_substitutions += unk;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Deterministic per-class splits

struct SplitResult {
    LabeledCorpus train, valid, test;
    // original corpus indices per split, for manifest writing
    std::vector<std::size_t> train_idx, valid_idx, test_idx;
};

inline SplitResult split_per_class(const LabeledCorpus& corpus, std::size_t train_n,
                                   std::size_t eval_n, std::uint64_t seed) {
    corpus.validate();
    require(corpus.labeled(), "split_per_class: corpus must be labeled");
    std::unordered_map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < corpus.size(); ++i) by_class[corpus.labels[i]].push_back(i);

    std::vector<int> classes;
    for (const auto& [c, idx] : by_class) classes.push_back(c);
    std::sort(classes.begin(), classes.end());

    SplitResult r;
    r.train.vocab = r.valid.vocab = r.test.vocab = corpus.vocab;
    RngStream rng(seed, "split");
    for (int c : classes) {
        auto& idx = by_class[c];
        if (idx.size() < train_n + 2 * eval_n) {
            throw contract_error("split_per_class: class " + std::to_string(c) + " has " +
                                 std::to_string(idx.size()) + " sentences, needs " +
                                 std::to_string(train_n + 2 * eval_n));
        }
        RngStream class_rng = rng.derive("class-" + std::to_string(c));
        class_rng.shuffle(idx);
        auto take = [&](LabeledCorpus& dst, std::vector<std::size_t>& dst_idx,
                        std::size_t begin, std::size_t count) {
            for (std::size_t k = begin; k < begin + count; ++k) {
                dst.sentences.push_back(corpus.sentences[idx[k]]);
                dst.labels.push_back(c);
                dst_idx.push_back(idx[k]);
            }
        };
        take(r.train, r.train_idx, 0, train_n);
        take(r.valid, r.valid_idx, train_n, eval_n);
        take(r.test, r.test_idx, train_n + eval_n, eval_n);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: per-class exclusive vocabulary plus a shared pool

struct SynthSpec {
    std::size_t num_classes = 2;
    std::size_t class_vocab = 80;          // exclusive tokens per class
    std::size_t shared_vocab = 40;
    std::size_t min_len = 5;
    std::size_t max_len = 15;
    std::size_t sentences_per_class = 1000;
    std::uint64_t seed = 0;
    // Probability a token comes from the shared pool. Negative means "use the
    // pool-size ratio shared/(shared+class)"; 1.0 makes classes identical.
    double shared_fraction = -1.0;

    void validate() const {
        require(num_classes >= 1, "SynthSpec: num_classes must be positive");
        require(class_vocab >= 1, "SynthSpec: class_vocab must be positive");
        require(sentences_per_class >= 1, "SynthSpec: sentences_per_class must be positive");
        require(min_len >= 1 && min_len <= max_len && max_len <= kMaxSentenceLen,
                "SynthSpec: length range must lie within [1, 200]");
        require(shared_fraction <= 1.0, "SynthSpec: shared_fraction must be <= 1");
        if (shared_fraction > 0.0) {
            require(shared_vocab >= 1, "SynthSpec: shared_fraction > 0 needs shared tokens");
        }
    }

    double effective_shared_fraction() const {
        if (shared_fraction >= 0.0) return shared_fraction;
        return double(shared_vocab) / double(shared_vocab + class_vocab);
    }
};

/// Class c draws tokens from the shared pool with probability f, otherwise
/// uniformly from its exclusive pool. Shrinking the shared pool (or f) pushes
/// the class unigram distributions apart.
inline LabeledCorpus synth_generate(const SynthSpec& spec) {
    spec.validate();
    Vocab v;
    std::vector<std::vector<std::string>> class_pool(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t k = 0; k < spec.class_vocab; ++k) {
            class_pool[c].push_back("c" + std::to_string(c) + "w" + std::to_string(k));
            v.add(class_pool[c].back());
        }
    }
    std::vector<std::string> shared_pool;
    for (std::size_t k = 0; k < spec.shared_vocab; ++k) {
        shared_pool.push_back("sw" + std::to_string(k));
        v.add(shared_pool.back());
    }

    const double f = spec.effective_shared_fraction();
    LabeledCorpus corpus;
    corpus.vocab = v;
    RngStream root(spec.seed, "synth");
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        RngStream rng = root.derive("class-" + std::to_string(c));
        for (std::size_t s = 0; s < spec.sentences_per_class; ++s) {
            const std::size_t len =
                spec.min_len + rng.uniform_index(spec.max_len - spec.min_len + 1);
            std::vector<int> ids;
            ids.reserve(len + 1);
            for (std::size_t t = 0; t < len; ++t) {
                const bool from_shared = !shared_pool.empty() && rng.uniform() < f;
                const auto& pool = from_shared ? shared_pool : class_pool[c];
                ids.push_back(v.lookup(pool[rng.uniform_index(pool.size())]));
            }
            ids.push_back(Vocab::kEos);
            corpus.sentences.push_back(std::move(ids));
            corpus.labels.push_back(static_cast<int>(c));
        }
    }
    corpus.validate();
    return corpus;
}

// ---------------------------------------------------------------------------
// File formats: corpus = `label<TAB>sentence` lines; vocab = one token per
// line at id - 3; split manifest = `split<TAB>class<TAB>line-index` records.

inline void save_corpus(const std::string& path, const LabeledCorpus& corpus) {
    std::ofstream out(path);
    require(out.good(), "save_corpus: cannot open " + path);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus.labeled()) out << corpus.labels[i] << '\t';
        const auto tokens = decode(corpus.sentences[i], corpus.vocab);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (t) out << ' ';
            out << tokens[t];
        }
        out << '\n';
    }
    require(out.good(), "save_corpus: write failed for " + path);
}

/// Reads `label<TAB>sentence` (or bare sentences) without any cleaning;
/// callers preprocess afterwards if the text is raw.
inline RawCorpus read_raw_corpus(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_raw_corpus: cannot open " + path);
    RawCorpus raw;
    std::string line;
    bool saw_label = false, saw_unlabeled = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string text = line;
        const auto tab = line.find('\t');
        std::optional<int> label;
        if (tab != std::string::npos) {
            try {
                std::size_t used = 0;
                const int parsed = std::stoi(line.substr(0, tab), &used);
                if (used == tab) {
                    label = parsed;
                    text = line.substr(tab + 1);
                }
            } catch (const std::exception&) {
                // a tab without a numeric prefix is part of the sentence
            }
        }
        if (label) {
            saw_label = true;
            raw.labels.push_back(*label);
        } else {
            saw_unlabeled = true;
        }
        std::vector<std::string> tokens;
        std::istringstream ss(text);
        std::string tok;
        while (ss >> tok) tokens.push_back(tok);
        raw.docs.push_back(std::move(tokens));
        if (saw_label && saw_unlabeled) {
            throw contract_error("read_raw_corpus: mixed labeled/unlabeled lines at line " +
                                 std::to_string(lineno) + " of " + path);
        }
    }
    return raw;
}

inline void save_vocab(const std::string& path, const Vocab& v) {
    std::ofstream out(path);
    require(out.good(), "save_vocab: cannot open " + path);
    for (std::size_t id = Vocab::kReserved; id < v.size(); ++id) {
        out << v.id_to_token[id] << '\n';
    }
    require(out.good(), "save_vocab: write failed for " + path);
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_vocab: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        require(!line.empty(), "load_vocab: empty token line in " + path);
        v.add(line);
    }
    return v;
}

inline void save_split_manifest(const std::string& path, const SplitResult& r,
                                const LabeledCorpus& source) {
    std::ofstream out(path);
    require(out.good(), "save_split_manifest: cannot open " + path);
    auto dump = [&](const char* name, const std::vector<std::size_t>& idx) {
        for (std::size_t i : idx) {
            out << name << '\t' << source.labels[i] << '\t' << i << '\n';
        }
    };
    dump("train", r.train_idx);
    dump("valid", r.valid_idx);
    dump("test", r.test_idx);
    require(out.good(), "save_split_manifest: write failed for " + path);
}

}  // namespace sllab
