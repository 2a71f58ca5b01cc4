#include "pdbias/biasing.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace pdbias {

namespace {

std::uint64_t parse_u64(std::string_view s, const std::string& what) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::runtime_error(what + ": not a non-negative integer: '" + std::string(s) + "'");
    return v;
}

// Word groups of an utterance: [begin,end) token ranges split before each
// prefix-class token, with the detokenized word for each range.
struct WordGroup {
    std::size_t begin;
    std::size_t end;
    std::string word;
};

std::vector<WordGroup> word_groups(const std::vector<TokenId>& utt, const Vocabulary& vocab) {
    std::vector<WordGroup> groups;
    const std::string& marker = vocab.word_begin_marker();
    for (std::size_t k = 0; k < utt.size(); ++k) {
        const std::string& tok = vocab.token(utt[k]);
        if (vocab.is_prefix(utt[k]) || groups.empty()) {
            std::string word = tok;
            if (word.compare(0, marker.size(), marker) == 0) word.erase(0, marker.size());
            groups.push_back({k, k + 1, std::move(word)});
        } else {
            groups.back().end = k + 1;
            groups.back().word += tok;
        }
    }
    return groups;
}

}  // namespace

std::string FrequencyBand::label() const {
    return "(" + std::to_string(low) + "," + std::to_string(high) + "]";
}

FrequencyBand FrequencyBand::parse(std::string_view s) {
    std::string_view body = s;
    if (!body.empty() && body.front() == '(') {
        if (body.back() != ']')
            throw std::runtime_error("band: expected '(low,high]', got '" + std::string(s) + "'");
        body = body.substr(1, body.size() - 2);
    }
    auto comma = body.find(',');
    if (comma == std::string_view::npos)
        throw std::runtime_error("band: expected 'low,high', got '" + std::string(s) + "'");
    FrequencyBand band;
    band.low = parse_u64(body.substr(0, comma), "band low");
    band.high = parse_u64(body.substr(comma + 1), "band high");
    if (band.low >= band.high)
        throw std::runtime_error("band: low must be < high in '" + std::string(s) + "'");
    return band;
}

const std::vector<FrequencyBand>& standard_bands() {
    static const std::vector<FrequencyBand> bands = {{10, 20}, {5, 10}, {1, 5}, {0, 1}};
    return bands;
}

bool BiasingList::contains(std::string_view word) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const BiasingEntry& e) { return e.word == word; });
}

void BiasingList::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    for (const auto& e : entries) os << e.word << '\t' << e.train_freq << '\n';
}

BiasingList BiasingList::load(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    BiasingList list;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw std::runtime_error(path.string() + ":" + std::to_string(n) +
                                     ": expected 'word<TAB>train_freq'");
        BiasingEntry entry;
        entry.word = line.substr(0, tab);
        entry.train_freq = parse_u64(std::string_view(line).substr(tab + 1), "biasing list freq");
        if (list.contains(entry.word))
            throw std::runtime_error(path.string() + ":" + std::to_string(n) +
                                     ": duplicate word '" + entry.word + "'");
        entry.tokens = segment_word(entry.word, vocab);
        list.entries.push_back(std::move(entry));
    }
    return list;
}

std::map<std::string, std::uint64_t> word_frequencies(const TokenizedCorpus& corpus,
                                                      const Vocabulary& vocab) {
    std::map<std::string, std::uint64_t> freqs;
    for (const auto& utt : corpus.utterances)
        for (auto& group : word_groups(utt, vocab)) ++freqs[group.word];
    return freqs;
}

ExtractResult extract_band(const std::map<std::string, std::uint64_t>& freqs, FrequencyBand band,
                           const Vocabulary& vocab) {
    ExtractResult result;
    for (const auto& [word, freq] : freqs) {  // std::map: already lexicographic
        if (!band.contains(freq)) continue;
        BiasingEntry entry;
        entry.word = word;
        entry.train_freq = freq;
        try {
            entry.tokens = segment_word(word, vocab);
        } catch (const std::exception&) {
            result.unsegmentable.push_back(word);
            continue;
        }
        result.list.entries.push_back(std::move(entry));
    }
    return result;
}

CountTable boost_counts(const CountTable& counts, const TokenizedCorpus& corpus,
                        const Vocabulary& vocab, CountingMode mode, const BoostSpec& spec) {
    if (counts.unigram.size() != vocab.size())
        throw std::runtime_error("boost_counts: count table does not match vocabulary size");
    std::unordered_map<std::string, const BiasingEntry*> targets;
    for (const auto& e : spec.targets.entries) {
        for (TokenId id : e.tokens)
            if (id >= vocab.size())
                throw std::runtime_error("boost_counts: biasing entry '" + e.word +
                                         "' was segmented under a different vocabulary");
        auto roundtrip = detokenize(e.tokens, vocab);
        if (roundtrip.size() != 1 || roundtrip[0] != e.word)
            throw std::runtime_error("boost_counts: biasing entry '" + e.word +
                                     "' was segmented under a different vocabulary");
        targets.emplace(e.word, &e);
    }
    if (spec.factor == 0) throw std::runtime_error("boost_counts: factor must be >= 1");

    CountTable boosted = counts;
    if (spec.factor == 1 || targets.empty()) return boosted;

    const std::uint64_t extra = spec.factor - 1;
    for (const auto& utt : corpus.utterances) {
        for (const auto& group : word_groups(utt, vocab)) {
            if (!targets.count(group.word)) continue;
            // Repeating the occurrence in place adds, per extra copy: one
            // count of each token, each internal pair, and the junction
            // pair from the occurrence's last token back to its first.
            for (std::size_t k = group.begin; k < group.end; ++k)
                boosted.unigram[utt[k]] += extra;
            for (std::size_t k = group.begin + 1; k < group.end; ++k) {
                if (mode == CountingMode::IntraWord && vocab.is_prefix(utt[k])) continue;
                boosted.adjacency[{utt[k - 1], utt[k]}] += extra;
            }
            TokenId first = utt[group.begin];
            TokenId last = utt[group.end - 1];
            if (!(mode == CountingMode::IntraWord && vocab.is_prefix(first)))
                boosted.adjacency[{last, first}] += extra;
        }
    }
    return boosted;
}

}  // namespace pdbias
