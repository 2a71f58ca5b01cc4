#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pdbias/corpus.hpp"

// Directional connection probabilities and the row-stochastic replacement
// matrix derived from them.

namespace pdbias {

// Conditional adjacency distributions. Prefix-class tokens get a
// successor distribution, suffix-class tokens a predecessor distribution;
// tokens with a zero denominator have no row.
struct ConnectionModel {
    std::map<TokenId, std::map<TokenId, double>> forward;   // i in P: p(j follows i)
    std::map<TokenId, std::map<TokenId, double>> backward;  // i in S: p(j precedes i)

    // The distribution attached to `id`, per its class; nullptr when omitted.
    const std::map<TokenId, double>* row(TokenId id, const Vocabulary& vocab) const;
};

ConnectionModel connection_probs(const CountTable& counts, const Vocabulary& vocab);

// How a schedule value is turned into an effective replacement
// probability: Keep treats the value as the probability of leaving the
// token unchanged, Replace uses it directly.
enum class ProbConvention { Keep, Replace };

std::string to_string(ProbConvention c);
ProbConvention convention_from_string(std::string_view s);

// Piecewise-linear frequency schedule: 0.09 up to 100 occurrences, then
// 0.9*n/1000 up to 1000, then 0.9. Continuous at both knees.
double auto_schedule_value(std::uint64_t n);

struct ReplacementSchedule {
    enum class Kind { Fixed, Auto };

    Kind kind = Kind::Auto;
    double fixed_p = 0.0;                                // only for Fixed, in [0,1]
    ProbConvention convention = ProbConvention::Keep;    // only applied to Auto

    static ReplacementSchedule fixed(double p);
    static ReplacementSchedule automatic(ProbConvention convention = ProbConvention::Keep);

    std::string describe() const;  // "fixed(0.7)" or "auto(keep)"
};

// Effective per-token replacement probability for a token seen n_i times.
double replacement_prob(std::uint64_t n_i, const ReplacementSchedule& schedule);

struct TransformOptions {
    bool same_class_only = true;  // restrict replacements to the source token's class
};

struct TransformProvenance {
    std::string schedule;       // ReplacementSchedule::describe()
    std::string convention;     // keep | replace
    std::uint64_t boost_factor = 1;
    std::string counting_mode;  // full-stream | intra-word
    bool same_class_only = true;
    std::string vocab_fingerprint;
};

// Dense |V|x|V| row-stochastic matrix; entry (i,j) is the probability of
// replacing token i with token j, diagonal the keep probability.
struct TransformMatrix {
    std::uint32_t dim = 0;
    std::vector<double> data;  // row-major
    TransformProvenance provenance;

    double at(TokenId i, TokenId j) const { return data[static_cast<std::size_t>(i) * dim + j]; }
    double& at(TokenId i, TokenId j) { return data[static_cast<std::size_t>(i) * dim + j]; }

    static TransformMatrix identity(std::uint32_t dim);

    // Binary format: magic "PDBM", u32 version, u32 dim, dim*dim f64
    // little-endian row-major, then a UTF-8 JSON trailer with provenance.
    // `extra_trailer` must be a serialized JSON object or empty; its keys
    // are merged into the trailer.
    void save(const std::filesystem::path& path, const std::string& extra_trailer = "") const;
    static TransformMatrix load(const std::filesystem::path& path);
};

// Unnormalized replacement scores: score(i,j) = p_i * sum_k c(i,k)*c(k,j)
// over every k (k != i, k != j) whose conditionals both exist, with the
// diagonal left at zero. This is the quantity the row renormalization in
// build_transform starts from; exposed separately so it can be checked
// against a direct dense evaluation.
std::vector<double> replacement_scores(const ConnectionModel& conn, const Vocabulary& vocab,
                                       const std::vector<std::uint64_t>& unigram,
                                       const ReplacementSchedule& schedule,
                                       const TransformOptions& options = {});

// Scales each row's off-diagonal scores to sum to exactly p_i and sets
// the diagonal to 1-p_i; rows with no off-diagonal mass keep everything.
TransformMatrix build_transform(const ConnectionModel& conn,
                                const std::vector<std::uint64_t>& unigram,
                                const Vocabulary& vocab, const ReplacementSchedule& schedule,
                                const TransformOptions& options = {});

}  // namespace pdbias
