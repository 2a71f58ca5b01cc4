#include "pdbias/eval.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace pdbias {

namespace {

std::uint64_t count_ops(const Alignment& a, EditOp kind) {
    return static_cast<std::uint64_t>(
        std::count_if(a.ops.begin(), a.ops.end(), [&](const AlignmentOp& op) { return op.op == kind; }));
}

}  // namespace

std::uint64_t Alignment::substitutions() const { return count_ops(*this, EditOp::Substitution); }
std::uint64_t Alignment::deletions() const { return count_ops(*this, EditOp::Deletion); }
std::uint64_t Alignment::insertions() const { return count_ops(*this, EditOp::Insertion); }
std::uint64_t Alignment::matches() const { return count_ops(*this, EditOp::Match); }

Alignment align(std::span<const std::string> ref, std::span<const std::string> hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    // cost[i][j]: edit distance between ref[0..i) and hyp[0..j).
    std::vector<std::vector<std::uint64_t>> cost(n + 1, std::vector<std::uint64_t>(m + 1, 0));
    for (std::size_t i = 1; i <= n; ++i) cost[i][0] = i;
    for (std::size_t j = 1; j <= m; ++j) cost[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const std::uint64_t diag = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cost[i][j] = std::min({diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
        }
    }

    Alignment out;
    out.cost = cost[n][m];
    // Backtrace, preferring match > substitution > deletion > insertion.
    std::size_t i = n, j = m;
    std::vector<AlignmentOp> rev;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && cost[i][j] == cost[i - 1][j - 1]) {
            rev.push_back({EditOp::Match, ref[i - 1], hyp[j - 1]});
            --i, --j;
        } else if (i > 0 && j > 0 && cost[i][j] == cost[i - 1][j - 1] + 1 && ref[i - 1] != hyp[j - 1]) {
            rev.push_back({EditOp::Substitution, ref[i - 1], hyp[j - 1]});
            --i, --j;
        } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
            rev.push_back({EditOp::Deletion, ref[i - 1], ""});
            --i;
        } else {
            rev.push_back({EditOp::Insertion, "", hyp[j - 1]});
            --j;
        }
    }
    out.ops.assign(rev.rbegin(), rev.rend());
    return out;
}

double wer(const std::vector<ScoredPair>& pairs) {
    std::uint64_t errors = 0, ref_words = 0;
    for (const auto& [ref, hyp] : pairs) {
        auto a = align(ref, hyp);
        errors += a.cost;
        ref_words += ref.size();
    }
    if (ref_words == 0) throw std::runtime_error("wer: undefined, every reference is empty");
    return 100.0 * static_cast<double>(errors) / static_cast<double>(ref_words);
}

RwerEntry rwer(const std::vector<ScoredPair>& pairs, const BiasingList& list,
               std::string band_label) {
    std::unordered_set<std::string> rare;
    for (const auto& e : list.entries) rare.insert(e.word);

    RwerEntry entry;
    entry.band_label = std::move(band_label);
    for (const auto& [ref, hyp] : pairs) {
        for (const auto& w : ref)
            if (rare.count(w)) ++entry.rare_ref_occurrences;
        for (const auto& op : align(ref, hyp).ops) {
            switch (op.op) {
                case EditOp::Deletion:
                    if (rare.count(op.ref)) ++entry.rare_del;
                    break;
                case EditOp::Substitution:
                    if (rare.count(op.ref)) ++entry.rare_sub_missed;
                    else if (rare.count(op.hyp)) ++entry.rare_wrongly_appeared;
                    break;
                case EditOp::Insertion:
                    if (rare.count(op.hyp)) ++entry.rare_wrongly_appeared;
                    break;
                case EditOp::Match:
                    break;
            }
        }
    }

    if (entry.rare_ref_occurrences > 0) {
        entry.rwer = 100.0 * static_cast<double>(entry.numerator()) /
                     static_cast<double>(entry.rare_ref_occurrences);
    } else if (entry.rare_wrongly_appeared > 0) {
        // No rare reference words, but rare words showed up anyway: rate
        // them against their own appearance count and flag the report.
        entry.rwer = 100.0 * static_cast<double>(entry.numerator()) /
                     static_cast<double>(entry.rare_wrongly_appeared);
        entry.denominator_fallback = true;
    } else {
        entry.not_applicable = true;
    }
    return entry;
}

ErrorReport score_pairs(const std::vector<ScoredPair>& pairs,
                        const std::vector<std::pair<std::string, BiasingList>>& lists) {
    ErrorReport report;
    std::uint64_t errors = 0;
    for (const auto& [ref, hyp] : pairs) {
        auto a = align(ref, hyp);
        report.substitutions += a.substitutions();
        report.deletions += a.deletions();
        report.insertions += a.insertions();
        report.reference_words += ref.size();
        errors += a.cost;
    }
    if (report.reference_words == 0)
        throw std::runtime_error("score: undefined WER, every reference is empty");
    report.wer = 100.0 * static_cast<double>(errors) / static_cast<double>(report.reference_words);
    for (const auto& [label, list] : lists) report.bands.push_back(rwer(pairs, list, label));
    return report;
}

std::vector<WordSeq> decode_greedy(const PosteriorTensor& post, const Vocabulary& vocab) {
    if (post.bpe_size != vocab.size())
        throw std::runtime_error("decode_greedy: tensor bpe_size " + std::to_string(post.bpe_size) +
                                 " does not match vocabulary size " + std::to_string(vocab.size()));
    std::vector<WordSeq> out;
    out.reserve(post.batch);
    for (std::uint32_t b = 0; b < post.batch; ++b) {
        std::vector<TokenId> ids;
        for (std::uint32_t t = 0; t < post.lengths[b]; ++t) {
            auto s = post.slice(b, t);
            std::uint32_t best = 0;
            for (std::uint32_t v = 1; v < post.bpe_size; ++v)
                if (s[v] > s[best]) best = v;  // lowest index wins ties
            ids.push_back(best);
        }
        out.push_back(detokenize(ids, vocab));
    }
    return out;
}

}  // namespace pdbias
