#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdbias/biasing.hpp"
#include "pdbias/corpus.hpp"
#include "pdbias/postdecoder.hpp"

// Word-level alignment, WER and the rare-word error rate, plus greedy
// hypothesis extraction from posterior tensors.

namespace pdbias {

enum class EditOp { Match, Substitution, Deletion, Insertion };

struct AlignmentOp {
    EditOp op;
    std::string ref;  // empty for insertions
    std::string hyp;  // empty for deletions
};

struct Alignment {
    std::vector<AlignmentOp> ops;
    std::uint64_t cost = 0;  // unit-cost edit distance

    std::uint64_t substitutions() const;
    std::uint64_t deletions() const;
    std::uint64_t insertions() const;
    std::uint64_t matches() const;
};

using WordSeq = std::vector<std::string>;
using ScoredPair = std::pair<WordSeq, WordSeq>;  // (reference, hypothesis)

// Minimal-cost alignment. Backtrace ties break match > substitution >
// deletion > insertion.
Alignment align(std::span<const std::string> ref, std::span<const std::string> hyp);

// Pooled (S+D+I)/N_ref * 100 over the whole corpus. Throws if every
// reference is empty.
double wer(const std::vector<ScoredPair>& pairs);

struct RwerEntry {
    std::string band_label;
    std::uint64_t rare_del = 0;
    std::uint64_t rare_sub_missed = 0;       // substitutions losing a rare reference word
    std::uint64_t rare_wrongly_appeared = 0; // rare hypothesis words over non-rare or absent reference
    std::uint64_t rare_ref_occurrences = 0;  // denominator
    std::optional<double> rwer;              // percentage; unset when not applicable
    bool denominator_fallback = false;       // denominator fell back to wrongful appearances
    bool not_applicable = false;             // no rare words on either side

    std::uint64_t numerator() const { return rare_del + rare_sub_missed + rare_wrongly_appeared; }
};

RwerEntry rwer(const std::vector<ScoredPair>& pairs, const BiasingList& list,
               std::string band_label = "");

struct ErrorReport {
    double wer = 0.0;
    std::uint64_t reference_words = 0;
    std::uint64_t substitutions = 0;
    std::uint64_t deletions = 0;
    std::uint64_t insertions = 0;
    std::vector<RwerEntry> bands;
};

ErrorReport score_pairs(const std::vector<ScoredPair>& pairs,
                        const std::vector<std::pair<std::string, BiasingList>>& lists);

// Per-step argmax (lowest index wins ties) over valid steps, detokenized
// into words.
std::vector<WordSeq> decode_greedy(const PosteriorTensor& post, const Vocabulary& vocab);

}  // namespace pdbias
