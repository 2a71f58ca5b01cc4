#include "pdbias/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pdbias/binio.hpp"

namespace pdbias {

namespace {

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::string marker)
    : marker_(std::move(marker)) {
    if (marker_.empty()) throw std::runtime_error("vocabulary: empty word-begin marker");
    for (auto& t : tokens) add_token(t);
}

TokenId Vocabulary::add_token(const std::string& token) {
    if (token.empty()) throw std::runtime_error("vocabulary: empty token");
    auto [it, inserted] = ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    if (!inserted) throw std::runtime_error("vocabulary: duplicate token '" + token + "'");
    tokens_.push_back(token);
    classes_.push_back(starts_with(token, marker_) ? TokenClass::Prefix : TokenClass::Suffix);
    return it->second;
}

std::optional<TokenId> Vocabulary::id_of(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, std::string marker) {
    Vocabulary vocab({}, std::move(marker));
    auto lines = read_lines(path);
    // Tolerate a single trailing blank line, reject blanks elsewhere.
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty())
            throw std::runtime_error("vocabulary " + path.string() + ": blank line " + std::to_string(i + 1));
        vocab.add_token(lines[i]);
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    for (const auto& t : tokens_) os << t << '\n';
}

std::string Vocabulary::fingerprint() const {
    std::uint64_t h = binio::fnv1a(marker_);
    for (const auto& t : tokens_) {
        h = binio::fnv1a(t, h);
        h = binio::fnv1a(std::string(1, '\n'), h);
    }
    return binio::hex64(h);
}

std::size_t TokenizedCorpus::total_tokens() const {
    std::size_t n = 0;
    for (const auto& u : utterances) n += u.size();
    return n;
}

std::uint64_t CountTable::pair_count(TokenId i, TokenId j) const {
    auto it = adjacency.find({i, j});
    return it == adjacency.end() ? 0 : it->second;
}

std::string to_string(CountingMode mode) {
    return mode == CountingMode::FullStream ? "full-stream" : "intra-word";
}

CountingMode counting_mode_from_string(std::string_view s) {
    if (s == "full-stream") return CountingMode::FullStream;
    if (s == "intra-word") return CountingMode::IntraWord;
    throw std::runtime_error("unknown counting mode '" + std::string(s) +
                             "' (expected full-stream or intra-word)");
}

LoadedCorpus load_corpus(const std::filesystem::path& path, const std::optional<Vocabulary>& vocab,
                         std::string marker) {
    const bool fixed_vocab = vocab.has_value();
    LoadedCorpus out;
    out.vocab = fixed_vocab ? *vocab : Vocabulary({}, std::move(marker));

    auto lines = read_lines(path);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::string& line = lines[n];
        const std::string where = path.string() + ":" + std::to_string(n + 1);
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw std::runtime_error(where + ": malformed line, expected 'utt_id<TAB>tokens'");
        std::string utt_id = line.substr(0, tab);

        std::vector<TokenId> ids;
        std::istringstream toks(line.substr(tab + 1));
        std::string tok;
        while (toks >> tok) {
            if (fixed_vocab) {
                auto id = out.vocab.id_of(tok);
                if (!id)
                    throw std::runtime_error(where + ": token '" + tok + "' not in vocabulary");
                ids.push_back(*id);
            } else {
                auto id = out.vocab.id_of(tok);
                ids.push_back(id ? *id : out.vocab.add_token(tok));
            }
        }
        if (ids.empty()) throw std::runtime_error(where + ": empty token sequence");
        out.corpus.utterances.push_back(std::move(ids));
        out.corpus.source_ids.push_back(std::move(utt_id));
    }
    return out;
}

std::pair<std::vector<TokenId>, std::vector<TokenId>> partition_vocab(const Vocabulary& vocab) {
    if (vocab.empty()) throw std::runtime_error("partition_vocab: empty vocabulary");
    std::vector<TokenId> prefixes, suffixes;
    for (TokenId id = 0; id < vocab.size(); ++id)
        (vocab.is_prefix(id) ? prefixes : suffixes).push_back(id);
    return {std::move(prefixes), std::move(suffixes)};
}

CountTable count_stats(const TokenizedCorpus& corpus, const Vocabulary& vocab, CountingMode mode) {
    CountTable table;
    table.unigram.assign(vocab.size(), 0);
    for (const auto& utt : corpus.utterances) {
        for (std::size_t k = 0; k < utt.size(); ++k) {
            TokenId id = utt[k];
            if (id >= vocab.size())
                throw std::runtime_error("count_stats: token id out of range");
            ++table.unigram[id];
            if (k == 0) continue;
            if (mode == CountingMode::IntraWord && vocab.is_prefix(id)) continue;
            ++table.adjacency[{utt[k - 1], id}];
        }
    }
    return table;
}

std::vector<TokenId> segment_word(std::string_view word, const Vocabulary& vocab) {
    if (word.empty()) throw std::runtime_error("segment_word: empty word");
    const std::string target = vocab.word_begin_marker() + std::string(word);
    std::vector<TokenId> ids;
    std::size_t pos = 0;
    while (pos < target.size()) {
        std::string_view rest = std::string_view(target).substr(pos);
        // Longest token matching at this position; unique because equal-length
        // prefixes of the same string are the same string.
        std::optional<TokenId> best;
        std::size_t best_len = 0;
        for (TokenId id = 0; id < vocab.size(); ++id) {
            const std::string& tok = vocab.token(id);
            if (tok.size() > best_len && starts_with(rest, tok)) {
                best = id;
                best_len = tok.size();
            }
        }
        if (!best)
            throw std::runtime_error("segment_word: cannot segment '" + std::string(word) +
                                     "', no token matches residue '" + std::string(rest) + "'");
        ids.push_back(*best);
        pos += best_len;
    }
    return ids;
}

std::vector<std::string> detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
    std::vector<std::string> words;
    const std::string& marker = vocab.word_begin_marker();
    for (TokenId id : ids) {
        const std::string& tok = vocab.token(id);
        if (vocab.is_prefix(id) || words.empty()) {
            std::string word = tok;
            if (starts_with(word, marker)) word.erase(0, marker.size());
            words.push_back(std::move(word));
        } else {
            words.back() += tok;
        }
    }
    return words;
}

}  // namespace pdbias
