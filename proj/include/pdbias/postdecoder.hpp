#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pdbias/corpus.hpp"
#include "pdbias/transform.hpp"

// The post-decoder itself: replacement-matrix application over decoder
// posterior tensors plus the trainable single linear layer.

namespace pdbias {

// Decoder output probabilities, shape [batch, max_len, bpe_size]. Each
// valid step slice is a probability distribution; steps at or beyond an
// utterance's length are all-zero padding.
struct PosteriorTensor {
    std::uint32_t batch = 0;
    std::uint32_t max_len = 0;
    std::uint32_t bpe_size = 0;
    std::vector<double> data;             // [b][t][v] row-major
    std::vector<std::uint32_t> lengths;   // valid steps per utterance
    std::vector<std::string> utt_ids;

    static PosteriorTensor zeros(std::uint32_t batch, std::uint32_t max_len, std::uint32_t bpe_size);

    double at(std::uint32_t b, std::uint32_t t, std::uint32_t v) const;
    std::span<const double> slice(std::uint32_t b, std::uint32_t t) const;
    std::span<double> slice(std::uint32_t b, std::uint32_t t);

    // Distribution and padding invariants; throws naming the offending
    // [b,t] on violation.
    void validate(double tol = 1e-6) const;

    // Binary format: magic "PDBT", u32 version, u32 batch, u32 max_len,
    // u32 bpe_size, batch u32 lengths, f32 little-endian data row-major,
    // then a UTF-8 JSON trailer carrying utt_ids. Data is stored at f32
    // precision. `extra_trailer` as in TransformMatrix::save.
    void save(const std::filesystem::path& path, const std::string& extra_trailer = "") const;
    static PosteriorTensor load(const std::filesystem::path& path);
};

// out[b,t,j] = sum_i in[b,t,i] * T[i,j] on valid steps; padding stays zero.
PosteriorTensor apply_transform(const PosteriorTensor& post, const TransformMatrix& matrix);

struct LinearLayer {
    std::uint32_t dim = 0;
    std::vector<double> weight;  // dim x dim row-major
    std::vector<double> bias;    // dim

    static LinearLayer identity(std::uint32_t dim);
    bool is_identity() const;

    // Binary format: magic "PDBL", u32 version, u32 dim, f64 weight
    // row-major, f64 bias, all little-endian. No trailer.
    void save(const std::filesystem::path& path) const;
    static LinearLayer load(const std::filesystem::path& path);
};

// softmax(weight*x + bias) per valid step; padding stays zero.
PosteriorTensor linear_forward(const PosteriorTensor& post, const LinearLayer& layer);

struct TrainConfig {
    double learning_rate = 1e-2;
    std::uint32_t epochs = 20;
    std::uint64_t seed = 0;  // reserved for reproducibility bookkeeping; full-batch descent has no sampling
};

struct TrainResult {
    LinearLayer layer;
    // epochs+1 entries: loss before the first update, then after each epoch.
    std::vector<double> loss_trajectory;
};

// Full-batch gradient descent on mean cross-entropy between
// softmax(weight*x + bias) and the per-step reference ids. refs holds one
// id sequence per utterance, each exactly the utterance's valid length.
TrainResult train_linear(const PosteriorTensor& inputs,
                         const std::vector<std::vector<TokenId>>& refs, const TrainConfig& config);

// Max relative error between the analytic cross-entropy gradient and
// central finite differences over every weight/bias coordinate, for one
// slice (dim <= 8) and its reference id.
double grad_check(const LinearLayer& layer, std::span<const double> slice, TokenId ref, double eps);

}  // namespace pdbias
