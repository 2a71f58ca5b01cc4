#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pdbias/corpus.hpp"

// Frequency-banded rare-word lists and the count boosting that amplifies
// their statistics before the transform matrix is built.

namespace pdbias {

// Half-open-below band (low, high]. The singleton band {1} is (0,1].
struct FrequencyBand {
    std::uint64_t low = 0;   // exclusive
    std::uint64_t high = 1;  // inclusive

    bool contains(std::uint64_t freq) const { return freq > low && freq <= high; }
    std::string label() const;

    // Accepts "(1,5]" and the bare "1,5" form.
    static FrequencyBand parse(std::string_view s);
};

// The four bands used throughout reporting: (10,20], (5,10], (1,5], (0,1].
const std::vector<FrequencyBand>& standard_bands();

struct BiasingEntry {
    std::string word;
    std::uint64_t train_freq = 0;
    std::vector<TokenId> tokens;
};

struct BiasingList {
    std::vector<BiasingEntry> entries;

    bool contains(std::string_view word) const;
    // `word<TAB>train_freq` per line; token decompositions are recomputed
    // against the given vocabulary on load.
    void save(const std::filesystem::path& path) const;
    static BiasingList load(const std::filesystem::path& path, const Vocabulary& vocab);
};

struct BoostSpec {
    std::uint64_t factor = 100;  // 1 is the identity boost
    BiasingList targets;
};

// Word occurrence counts recovered by detokenizing every utterance.
std::map<std::string, std::uint64_t> word_frequencies(const TokenizedCorpus& corpus,
                                                      const Vocabulary& vocab);

struct ExtractResult {
    BiasingList list;                          // lexicographically sorted
    std::vector<std::string> unsegmentable;    // skipped words, reported not dropped
};

ExtractResult extract_band(const std::map<std::string, std::uint64_t>& freqs, FrequencyBand band,
                           const Vocabulary& vocab);

// Counts as if every occurrence of a target word had been repeated
// `factor` times in place inside its utterance. All other statistics are
// untouched. The corpus and mode must be the ones `counts` came from.
CountTable boost_counts(const CountTable& counts, const TokenizedCorpus& corpus,
                        const Vocabulary& vocab, CountingMode mode, const BoostSpec& spec);

}  // namespace pdbias
