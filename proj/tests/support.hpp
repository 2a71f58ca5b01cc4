#pragma once

// Shared test fixtures and independent oracles. Everything here computes
// expected values by a route separate from the library implementation:
// count boosting is checked against literal corpus expansion, replacement
// scores against a dense triple loop over raw counts, and alignment costs
// against recursive edit distance.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pdbias/biasing.hpp"
#include "pdbias/corpus.hpp"
#include "pdbias/postdecoder.hpp"
#include "pdbias/transform.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline std::string P(const std::string& piece) { return pdbias::kDefaultMarker + piece; }

struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<std::uint64_t> counter{0};
        path = fs::temp_directory_path() /
               ("pdbias_" + tag + "_" + std::to_string(counter.fetch_add(1)) + "_" +
                std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

inline void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// Builds a corpus in memory from token strings, assigning ids in
// first-appearance order like the file loader does.
inline pdbias::LoadedCorpus make_corpus(const std::vector<std::vector<std::string>>& utterances,
                                        const std::string& marker = pdbias::kDefaultMarker) {
    pdbias::LoadedCorpus out;
    out.vocab = pdbias::Vocabulary({}, marker);
    for (std::size_t i = 0; i < utterances.size(); ++i) {
        std::vector<pdbias::TokenId> ids;
        for (const auto& tok : utterances[i]) {
            auto id = out.vocab.id_of(tok);
            ids.push_back(id ? *id : out.vocab.add_token(tok));
        }
        out.corpus.utterances.push_back(std::move(ids));
        out.corpus.source_ids.push_back("u" + std::to_string(i + 1));
    }
    return out;
}

// The canonical three-utterance corpus used across the suites:
// {warrant, warrant, warfarin} over tokens {_war, rant, farin}.
inline pdbias::LoadedCorpus micro_corpus() {
    return make_corpus({{P("war"), "rant"}, {P("war"), "rant"}, {P("war"), "farin"}});
}

// --------------------------------------------------------------------------
// Oracle: boost by literally expanding the corpus and recounting.
// --------------------------------------------------------------------------

inline pdbias::TokenizedCorpus expand_corpus(const pdbias::TokenizedCorpus& corpus,
                                             const pdbias::Vocabulary& vocab,
                                             const std::set<std::string>& targets,
                                             std::uint64_t factor) {
    const std::string& marker = vocab.word_begin_marker();
    pdbias::TokenizedCorpus out;
    out.source_ids = corpus.source_ids;
    for (const auto& utt : corpus.utterances) {
        // Split into word spans: a span starts at each prefix-class token.
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (std::size_t k = 0; k < utt.size(); ++k) {
            if (vocab.is_prefix(utt[k]) || spans.empty())
                spans.emplace_back(k, k + 1);
            else
                spans.back().second = k + 1;
        }
        std::vector<pdbias::TokenId> expanded;
        for (auto [b, e] : spans) {
            std::string word;
            for (std::size_t k = b; k < e; ++k) word += vocab.token(utt[k]);
            if (word.compare(0, marker.size(), marker) == 0) word.erase(0, marker.size());
            const std::uint64_t copies = targets.count(word) ? factor : 1;
            for (std::uint64_t c = 0; c < copies; ++c)
                for (std::size_t k = b; k < e; ++k) expanded.push_back(utt[k]);
        }
        out.utterances.push_back(std::move(expanded));
    }
    return out;
}

// --------------------------------------------------------------------------
// Oracle: dense triple-loop replacement scores straight from raw counts.
// --------------------------------------------------------------------------

struct OracleSchedule {
    bool fixed = true;
    double p = 0.5;
    bool keep_convention = true;  // only meaningful when !fixed
};

inline double oracle_replacement_p(std::uint64_t n, const OracleSchedule& s) {
    if (s.fixed) return s.p;
    double v;
    if (n >= 1000)
        v = 0.9;
    else if (n > 100)
        v = 0.9 * static_cast<double>(n) / 1000.0;
    else
        v = 0.09;
    return s.keep_convention ? 1.0 - v : v;
}

inline std::vector<double> oracle_raw_scores(const pdbias::CountTable& counts,
                                             const pdbias::Vocabulary& vocab,
                                             const OracleSchedule& schedule,
                                             bool same_class_only) {
    const std::size_t dim = vocab.size();
    std::vector<double> succ(dim * dim, 0.0), pred(dim * dim, 0.0);
    std::vector<double> succ_total(dim, 0.0), pred_total(dim, 0.0);
    for (const auto& [pair, n] : counts.adjacency) {
        succ[pair.first * dim + pair.second] += static_cast<double>(n);
        pred[pair.second * dim + pair.first] += static_cast<double>(n);
        succ_total[pair.first] += static_cast<double>(n);
        pred_total[pair.second] += static_cast<double>(n);
    }
    // cond(a, b): successor distribution for prefix-class a, predecessor
    // distribution for suffix-class a; zero when the denominator is zero.
    auto cond = [&](std::size_t a, std::size_t b) -> double {
        if (vocab.is_prefix(static_cast<pdbias::TokenId>(a)))
            return succ_total[a] > 0.0 ? succ[a * dim + b] / succ_total[a] : 0.0;
        return pred_total[a] > 0.0 ? pred[a * dim + b] / pred_total[a] : 0.0;
    };

    std::vector<double> scores(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
        const double p_i = oracle_replacement_p(counts.unigram[i], schedule);
        for (std::size_t j = 0; j < dim; ++j) {
            if (j == i) continue;
            if (same_class_only && vocab.is_prefix(static_cast<pdbias::TokenId>(j)) !=
                                       vocab.is_prefix(static_cast<pdbias::TokenId>(i)))
                continue;
            double sum = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                if (k == i || k == j) continue;
                sum += cond(i, k) * cond(k, j);
            }
            scores[i * dim + j] = p_i * sum;
        }
    }
    return scores;
}

// --------------------------------------------------------------------------
// Oracle: recursive unit-cost edit distance.
// --------------------------------------------------------------------------

inline std::uint64_t brute_edit_distance(const std::vector<std::string>& ref,
                                         const std::vector<std::string>& hyp, std::size_t i = 0,
                                         std::size_t j = 0) {
    if (i == ref.size()) return hyp.size() - j;
    if (j == hyp.size()) return ref.size() - i;
    std::uint64_t best = brute_edit_distance(ref, hyp, i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
    best = std::min(best, brute_edit_distance(ref, hyp, i + 1, j) + 1);
    best = std::min(best, brute_edit_distance(ref, hyp, i, j + 1) + 1);
    return best;
}

// --------------------------------------------------------------------------
// Randomized word-structured corpora (vocabulary capped at 12 tokens).
// --------------------------------------------------------------------------

struct RandomCorpusSpec {
    int max_prefix_tokens = 5;
    int max_suffix_tokens = 7;
    int max_utterances = 30;
    int max_words_per_utterance = 4;
    int max_suffixes_per_word = 2;
};

inline pdbias::LoadedCorpus random_corpus(std::mt19937_64& rng,
                                          const RandomCorpusSpec& spec = {}) {
    auto pick = [&](int lo, int hi) {
        return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    };
    const int np = pick(1, spec.max_prefix_tokens);
    const int ns = pick(0, spec.max_suffix_tokens);

    std::vector<std::string> tokens;
    for (int i = 0; i < np; ++i) tokens.push_back(P("p" + std::to_string(i)));
    for (int i = 0; i < ns; ++i) tokens.push_back("s" + std::to_string(i));
    pdbias::LoadedCorpus out;
    out.vocab = pdbias::Vocabulary(tokens);

    const int utts = pick(1, spec.max_utterances);
    for (int u = 0; u < utts; ++u) {
        std::vector<pdbias::TokenId> ids;
        const int words = pick(1, spec.max_words_per_utterance);
        for (int w = 0; w < words; ++w) {
            ids.push_back(static_cast<pdbias::TokenId>(pick(0, np - 1)));
            if (ns > 0) {
                const int suffixes = pick(0, spec.max_suffixes_per_word);
                for (int s = 0; s < suffixes; ++s)
                    ids.push_back(static_cast<pdbias::TokenId>(np + pick(0, ns - 1)));
            }
        }
        out.corpus.utterances.push_back(std::move(ids));
        out.corpus.source_ids.push_back("u" + std::to_string(u + 1));
    }
    return out;
}

// --------------------------------------------------------------------------
// Posterior tensor construction.
// --------------------------------------------------------------------------

inline pdbias::PosteriorTensor make_tensor(
    const std::vector<std::vector<std::vector<double>>>& utterances,
    const std::vector<std::string>& utt_ids, std::uint32_t bpe_size) {
    std::uint32_t max_len = 0;
    for (const auto& u : utterances)
        max_len = std::max(max_len, static_cast<std::uint32_t>(u.size()));
    auto t = pdbias::PosteriorTensor::zeros(static_cast<std::uint32_t>(utterances.size()), max_len,
                                            bpe_size);
    for (std::uint32_t b = 0; b < t.batch; ++b) {
        t.lengths[b] = static_cast<std::uint32_t>(utterances[b].size());
        t.utt_ids[b] = utt_ids[b];
        for (std::uint32_t step = 0; step < t.lengths[b]; ++step) {
            auto dst = t.slice(b, step);
            for (std::uint32_t v = 0; v < bpe_size; ++v) dst[v] = utterances[b][step][v];
        }
    }
    return t;
}

// --------------------------------------------------------------------------
// The rare-word flip fixture: "warrant" is common, "warfarin" occurs once,
// and the evaluation utterance is ambiguous at the suffix step. Boosting
// must flip the greedy decode from warrant to warfarin.
//
// Vocabulary order: _take=0 _war=1 rant=2 den=3 farin=4.
// --------------------------------------------------------------------------

struct FlipFixture {
    fs::path corpus;
    fs::path tensor;
    fs::path refs;
    fs::path train_tensor;
    fs::path train_refs;
};

inline FlipFixture write_flip_fixture(const fs::path& dir, double rant_mass = 0.55,
                                      double den_mass = 0.02, double farin_mass = 0.41) {
    FlipFixture fx;
    fx.corpus = dir / "corpus.txt";
    std::string corpus;
    for (int i = 1; i <= 3; ++i)
        corpus += "t" + std::to_string(i) + "\t" + P("take") + " " + P("war") + " rant\n";
    for (int i = 4; i <= 6; ++i)
        corpus += "t" + std::to_string(i) + "\t" + P("take") + " " + P("war") + " den\n";
    corpus += "t7\t" + P("war") + " farin\n";
    write_file(fx.corpus, corpus);

    const double rest = 1.0 - rant_mass - den_mass - farin_mass;  // split over _take/_war
    auto tensor = make_tensor(
        {{
            {0.96, 0.01, 0.01, 0.01, 0.01},
            {0.01, 0.96, 0.01, 0.01, 0.01},
            {rest / 2.0, rest / 2.0, rant_mass, den_mass, farin_mass},
        }},
        {"e1"}, 5);
    fx.tensor = dir / "tensor.pdbt";
    tensor.save(fx.tensor);

    fx.refs = dir / "refs.txt";
    write_file(fx.refs, "e1\ttake warfarin\n");

    // Small consistent training set for the linear-layer arm.
    auto train = make_tensor(
        {{
             {0.90, 0.04, 0.02, 0.02, 0.02},
             {0.04, 0.90, 0.02, 0.02, 0.02},
             {0.02, 0.02, 0.90, 0.04, 0.02},
         },
         {
             {0.05, 0.85, 0.04, 0.03, 0.03},
             {0.03, 0.03, 0.04, 0.05, 0.85},
         }},
        {"tr1", "tr2"}, 5);
    fx.train_tensor = dir / "train_tensor.pdbt";
    train.save(fx.train_tensor);
    fx.train_refs = dir / "train_refs.txt";
    write_file(fx.train_refs, "tr1\t" + P("take") + " " + P("war") + " rant\ntr2\t" + P("war") +
                                  " farin\n");
    return fx;
}

}  // namespace testsupport
