#pragma once

// Pretraining data: three disjoint synthetic text sources with distinct
// vocabulary/statistics profiles, a weighted (source, length-type)
// mixture over them, and MLM masking.
//
// Default mixture weights, by (length type, source):
//     variable   0.10 / 0.10 / 0.10
//     maximum    0.24 / 0.23 / 0.23
//
// Variable examples are single passages truncated to a length drawn
// uniformly from [10, S]; maximum examples concatenate successive
// passages (SEP-joined) to exactly S tokens.

#include <string>
#include <vector>

#include "enclab/errors.hpp"
#include "enclab/rng.hpp"
#include "enclab/tokenizer.hpp"

namespace enclab {

inline constexpr int kIgnoreLabel = -1;

struct TextCorpus {
    std::string name;
    std::vector<std::string> passages;
};

struct SourceProfile {
    std::string name;
    std::string alphabet;   // letters this source draws words from
    int min_word = 2, max_word = 6;
    int min_words_per_sentence = 4, max_words_per_sentence = 10;
    int min_sentences = 2, max_sentences = 6;
};

inline TextCorpus make_synthetic_corpus(const SourceProfile& profile, int n_passages,
                                        std::uint64_t seed) {
    if (profile.alphabet.empty()) throw ConfigError("corpus: empty alphabet");
    Rng rng(seed);
    TextCorpus corpus;
    corpus.name = profile.name;
    corpus.passages.reserve(n_passages);
    for (int p = 0; p < n_passages; ++p) {
        std::string text;
        const long sentences = rng.range(profile.min_sentences, profile.max_sentences);
        for (long s = 0; s < sentences; ++s) {
            const long words = rng.range(profile.min_words_per_sentence,
                                         profile.max_words_per_sentence);
            for (long w = 0; w < words; ++w) {
                const long len = rng.range(profile.min_word, profile.max_word);
                for (long c = 0; c < len; ++c)
                    text += profile.alphabet[rng.below(profile.alphabet.size())];
                text += (w + 1 < words) ? ' ' : '.';
            }
            if (s + 1 < sentences) text += ' ';
        }
        corpus.passages.push_back(std::move(text));
    }
    return corpus;
}

// Three sources standing in for web, encyclopedia, and book text: disjoint
// letter ranges and different word/sentence statistics.
inline std::vector<TextCorpus> default_desk_corpora(std::uint64_t seed, int n_passages = 400) {
    SourceProfile web{"web", "abcdefgh", 2, 6, 4, 9, 2, 5};
    SourceProfile wiki{"wiki", "ijklmnop", 3, 8, 5, 12, 2, 6};
    SourceProfile books{"books", "qrstuvwx", 2, 9, 6, 14, 3, 8};
    return {make_synthetic_corpus(web, n_passages, Rng::derive_seed(seed, 1)),
            make_synthetic_corpus(wiki, n_passages, Rng::derive_seed(seed, 2)),
            make_synthetic_corpus(books, n_passages, Rng::derive_seed(seed, 3))};
}

enum class LengthType { variable, maximum };

struct MixtureCell {
    int source = 0;  // index into the corpus list
    LengthType type = LengthType::variable;
    double weight = 0.0;
};

struct MixtureSpec {
    std::vector<MixtureCell> cells;

    void validate(std::size_t n_sources) const {
        double total = 0.0;
        for (const auto& cell : cells) {
            if (cell.source < 0 || static_cast<std::size_t>(cell.source) >= n_sources)
                throw ConfigError("mixture: cell references unknown source");
            if (cell.weight < 0.0) throw ConfigError("mixture: negative weight");
            total += cell.weight;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ConfigError("mixture: weights sum to " + std::to_string(total) +
                              ", expected 1.0");
    }

    static MixtureSpec defaults() {
        MixtureSpec spec;
        spec.cells = {{0, LengthType::variable, 0.10}, {1, LengthType::variable, 0.10},
                      {2, LengthType::variable, 0.10}, {0, LengthType::maximum, 0.24},
                      {1, LengthType::maximum, 0.23},  {2, LengthType::maximum, 0.23}};
        return spec;
    }

    // Variable cells only, renormalized (the "short examples" regime).
    static MixtureSpec short_only() {
        MixtureSpec spec;
        const double w = 1.0 / 3.0;
        spec.cells = {{0, LengthType::variable, w},
                      {1, LengthType::variable, w},
                      {2, LengthType::variable, 1.0 - 2.0 * w}};
        return spec;
    }

    static MixtureSpec long_only() {
        MixtureSpec spec;
        const double w = 1.0 / 3.0;
        spec.cells = {{0, LengthType::maximum, w},
                      {1, LengthType::maximum, w},
                      {2, LengthType::maximum, 1.0 - 2.0 * w}};
        return spec;
    }
};

struct MixtureExample {
    std::vector<int> ids;
    int cell = 0;
};

// Deterministic example stream: each draw picks a cell by weight, then
// builds the token sequence from that source.
class MixtureStream {
public:
    MixtureStream(std::vector<TextCorpus> sources, MixtureSpec spec, int max_seq_len,
                  std::uint64_t seed)
        : sources_(std::move(sources)), spec_(std::move(spec)), S_(max_seq_len), rng_(seed) {
        for (const auto& src : sources_)
            if (src.passages.empty()) throw DataError("mixture: source '" + src.name + "' is empty");
        spec_.validate(sources_.size());
        weights_.reserve(spec_.cells.size());
        for (const auto& cell : spec_.cells) weights_.push_back(cell.weight);
    }

    const MixtureSpec& spec() const { return spec_; }
    std::size_t cell_count() const { return spec_.cells.size(); }

    MixtureExample next() {
        const std::size_t cell_ix = rng_.weighted(weights_);
        const MixtureCell& cell = spec_.cells[cell_ix];
        const TextCorpus& src = sources_[cell.source];
        MixtureExample out;
        out.cell = static_cast<int>(cell_ix);
        if (cell.type == LengthType::variable) {
            const auto& passage = src.passages[rng_.below(src.passages.size())];
            const long target = rng_.range(10, S_);
            out.ids = tok::encode(passage, static_cast<int>(target));
        } else {
            // successive passages from a random start, SEP-joined, exactly S
            out.ids.push_back(tok::CLS);
            std::size_t ix = rng_.below(src.passages.size());
            while (static_cast<int>(out.ids.size()) < S_) {
                for (unsigned char c : src.passages[ix]) {
                    out.ids.push_back(static_cast<int>(c));
                    if (static_cast<int>(out.ids.size()) == S_) break;
                }
                if (static_cast<int>(out.ids.size()) < S_) out.ids.push_back(tok::SEP);
                ix = (ix + 1) % src.passages.size();
            }
        }
        return out;
    }

private:
    std::vector<TextCorpus> sources_;
    MixtureSpec spec_;
    std::vector<double> weights_;
    int S_;
    Rng rng_;
};

struct MaskedExample {
    std::vector<int> ids;     // inputs with MASK/random/keep applied
    std::vector<int> labels;  // original ids at selected positions, kIgnoreLabel elsewhere
};

// Each non-special position is selected independently with probability p.
// Of the selected: 80% MASK, 10% random byte, 10% unchanged.  Specials
// (pad, CLS, SEP, MASK) are never selected.
inline MaskedExample mask_tokens(const std::vector<int>& ids, double p, Rng& rng) {
    if (p <= 0.0 || p >= 1.0) throw ConfigError("mask_tokens: p must lie in (0,1)");
    MaskedExample out;
    out.ids = ids;
    out.labels.assign(ids.size(), kIgnoreLabel);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (tok::is_special(ids[i])) continue;
        if (rng.uniform01() >= p) continue;
        out.labels[i] = ids[i];
        const double roll = rng.uniform01();
        if (roll < 0.8)
            out.ids[i] = tok::MASK;
        else if (roll < 0.9)
            out.ids[i] = static_cast<int>(rng.below(256));
        // else: keep the original token
    }
    return out;
}

inline MaskedExample mask_tokens(const std::vector<int>& ids, double p, std::uint64_t seed) {
    Rng rng(seed);
    return mask_tokens(ids, p, rng);
}

}  // namespace enclab
