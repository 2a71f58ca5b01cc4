#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

// Sub-word vocabulary, tokenized transcription corpus and the unigram /
// adjacency statistics everything downstream is built from.

namespace pdbias {

using TokenId = std::uint32_t;

enum class TokenClass { Prefix, Suffix };

// Default word-begin marker (the SentencePiece convention, U+2581).
inline constexpr const char* kDefaultMarker = "\xE2\x96\x81";

// Dense token table. Ids are 0..size()-1 in insertion order. A token is
// prefix-class iff it starts with the word-begin marker; everything else
// is suffix-class (word-internal or word-final pieces).
class Vocabulary {
public:
    Vocabulary() : marker_(kDefaultMarker) {}
    explicit Vocabulary(std::vector<std::string> tokens, std::string marker = kDefaultMarker);

    // One token per line; the line number is the id.
    static Vocabulary load(const std::filesystem::path& path, std::string marker = kDefaultMarker);
    void save(const std::filesystem::path& path) const;

    TokenId add_token(const std::string& token);

    std::size_t size() const { return tokens_.size(); }
    bool empty() const { return tokens_.empty(); }
    const std::string& token(TokenId id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::optional<TokenId> id_of(std::string_view token) const;
    TokenClass class_of(TokenId id) const { return classes_.at(id); }
    bool is_prefix(TokenId id) const { return classes_.at(id) == TokenClass::Prefix; }
    const std::string& word_begin_marker() const { return marker_; }

    // Fingerprint over marker and token list; stored in matrix provenance
    // so artifacts can be matched to the vocabulary that produced them.
    std::string fingerprint() const;

private:
    std::vector<std::string> tokens_;
    std::vector<TokenClass> classes_;
    std::unordered_map<std::string, TokenId> ids_;
    std::string marker_;
};

struct TokenizedCorpus {
    std::vector<std::vector<TokenId>> utterances;
    std::vector<std::string> source_ids;  // one opaque id per utterance

    std::size_t total_tokens() const;
};

// Unigram and first-order adjacency counts. adjacency[(i,j)] counts j
// immediately following i; zero-count pairs are never stored.
struct CountTable {
    std::vector<std::uint64_t> unigram;
    std::map<std::pair<TokenId, TokenId>, std::uint64_t> adjacency;

    std::uint64_t pair_count(TokenId i, TokenId j) const;
};

enum class CountingMode {
    FullStream,  // adjacent pairs across word boundaries (never across utterances)
    IntraWord,   // drop pairs whose second token is prefix-class
};

std::string to_string(CountingMode mode);
CountingMode counting_mode_from_string(std::string_view s);

struct LoadedCorpus {
    TokenizedCorpus corpus;
    Vocabulary vocab;
};

// Reads `utt_id<TAB>tok tok tok` lines. When `vocab` is supplied every
// token must already be known; otherwise the vocabulary is built from the
// corpus in first-appearance order.
LoadedCorpus load_corpus(const std::filesystem::path& path,
                         const std::optional<Vocabulary>& vocab = std::nullopt,
                         std::string marker = kDefaultMarker);

// (prefix-class ids, suffix-class ids), each ascending.
std::pair<std::vector<TokenId>, std::vector<TokenId>> partition_vocab(const Vocabulary& vocab);

CountTable count_stats(const TokenizedCorpus& corpus, const Vocabulary& vocab, CountingMode mode);

// Greedy longest-match segmentation of marker+word against the vocabulary.
// Throws naming the unmatched residue if no token covers the next position.
std::vector<TokenId> segment_word(std::string_view word, const Vocabulary& vocab);

// Splits before each prefix-class token and strips the marker.
std::vector<std::string> detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

}  // namespace pdbias
