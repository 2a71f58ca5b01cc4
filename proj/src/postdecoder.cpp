#include "pdbias/postdecoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "pdbias/binio.hpp"

namespace pdbias {

namespace {

std::string slice_name(std::uint32_t b, std::uint32_t t) {
    return "[b=" + std::to_string(b) + ",t=" + std::to_string(t) + "]";
}

void softmax_inplace(std::span<double> z) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

}  // namespace

PosteriorTensor PosteriorTensor::zeros(std::uint32_t batch, std::uint32_t max_len,
                                       std::uint32_t bpe_size) {
    PosteriorTensor t;
    t.batch = batch;
    t.max_len = max_len;
    t.bpe_size = bpe_size;
    t.data.assign(static_cast<std::size_t>(batch) * max_len * bpe_size, 0.0);
    t.lengths.assign(batch, 0);
    t.utt_ids.resize(batch);
    return t;
}

double PosteriorTensor::at(std::uint32_t b, std::uint32_t t, std::uint32_t v) const {
    return data[(static_cast<std::size_t>(b) * max_len + t) * bpe_size + v];
}

std::span<const double> PosteriorTensor::slice(std::uint32_t b, std::uint32_t t) const {
    return {data.data() + (static_cast<std::size_t>(b) * max_len + t) * bpe_size, bpe_size};
}

std::span<double> PosteriorTensor::slice(std::uint32_t b, std::uint32_t t) {
    return {data.data() + (static_cast<std::size_t>(b) * max_len + t) * bpe_size, bpe_size};
}

void PosteriorTensor::validate(double tol) const {
    if (lengths.size() != batch || utt_ids.size() != batch)
        throw std::runtime_error("posterior tensor: lengths/utt_ids do not match batch size");
    if (data.size() != static_cast<std::size_t>(batch) * max_len * bpe_size)
        throw std::runtime_error("posterior tensor: data size does not match shape");
    for (std::uint32_t b = 0; b < batch; ++b) {
        if (lengths[b] > max_len)
            throw std::runtime_error("posterior tensor: length exceeds max_len at b=" +
                                     std::to_string(b));
        for (std::uint32_t t = 0; t < max_len; ++t) {
            auto s = slice(b, t);
            if (t < lengths[b]) {
                double sum = 0.0;
                for (double v : s) {
                    if (v < 0.0)
                        throw std::runtime_error("posterior tensor: negative probability at " +
                                                 slice_name(b, t));
                    sum += v;
                }
                if (std::abs(sum - 1.0) > tol)
                    throw std::runtime_error("posterior tensor: slice " + slice_name(b, t) +
                                             " sums to " + std::to_string(sum));
            } else {
                for (double v : s)
                    if (v != 0.0)
                        throw std::runtime_error("posterior tensor: nonzero padding at " +
                                                 slice_name(b, t));
            }
        }
    }
}

void PosteriorTensor::save(const std::filesystem::path& path, const std::string& extra_trailer) const {
    nlohmann::json trailer = {{"utt_ids", utt_ids}};
    if (!extra_trailer.empty()) {
        auto extra = nlohmann::json::parse(extra_trailer);
        for (auto& [k, v] : extra.items()) trailer[k] = v;
    }
    auto os = binio::open_out(path);
    binio::write_magic(os, "PDBT");
    binio::write_u32(os, 1);
    binio::write_u32(os, batch);
    binio::write_u32(os, max_len);
    binio::write_u32(os, bpe_size);
    for (std::uint32_t len : lengths) binio::write_u32(os, len);
    for (double v : data) binio::write_f32(os, static_cast<float>(v));
    const std::string json = trailer.dump();
    os.write(json.data(), static_cast<std::streamsize>(json.size()));
    if (!os) throw std::runtime_error("failed writing tensor: " + path.string());
}

PosteriorTensor PosteriorTensor::load(const std::filesystem::path& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "PDBT", "posterior tensor");
    const std::uint32_t version = binio::read_u32(is);
    if (version != 1)
        throw std::runtime_error("unsupported tensor version " + std::to_string(version) + ": " +
                                 path.string());
    PosteriorTensor t;
    t.batch = binio::read_u32(is);
    t.max_len = binio::read_u32(is);
    t.bpe_size = binio::read_u32(is);
    t.lengths.resize(t.batch);
    for (auto& len : t.lengths) len = binio::read_u32(is);
    t.data.resize(static_cast<std::size_t>(t.batch) * t.max_len * t.bpe_size);
    for (double& v : t.data) v = binio::read_f32(is);
    const std::string tail = binio::read_to_end(is);
    t.utt_ids.assign(t.batch, "");
    if (!tail.empty()) {
        auto trailer = nlohmann::json::parse(tail);
        if (trailer.contains("utt_ids")) {
            auto ids = trailer["utt_ids"].get<std::vector<std::string>>();
            if (ids.size() != t.batch)
                throw std::runtime_error("tensor trailer utt_ids count does not match batch: " +
                                         path.string());
            t.utt_ids = std::move(ids);
        }
    }
    return t;
}

PosteriorTensor apply_transform(const PosteriorTensor& post, const TransformMatrix& matrix) {
    if (post.bpe_size != matrix.dim)
        throw std::runtime_error("apply_transform: tensor bpe_size " + std::to_string(post.bpe_size) +
                                 " does not match matrix dim " + std::to_string(matrix.dim));
    if (post.lengths.size() != post.batch)
        throw std::runtime_error("apply_transform: malformed tensor");

    PosteriorTensor out = post;
    const std::uint32_t dim = post.bpe_size;
    for (std::uint32_t b = 0; b < post.batch; ++b) {
        for (std::uint32_t t = 0; t < std::min(post.lengths[b], post.max_len); ++t) {
            auto in = post.slice(b, t);
            double sum = 0.0;
            for (double v : in) {
                if (v < 0.0)
                    throw std::runtime_error("apply_transform: negative probability at " +
                                             slice_name(b, t));
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-4)
                throw std::runtime_error("apply_transform: slice " + slice_name(b, t) +
                                         " is not a distribution (sum " + std::to_string(sum) + ")");
            auto dst = out.slice(b, t);
            std::fill(dst.begin(), dst.end(), 0.0);
            for (std::uint32_t i = 0; i < dim; ++i) {
                const double x = in[i];
                if (x == 0.0) continue;
                const double* row = matrix.data.data() + static_cast<std::size_t>(i) * dim;
                for (std::uint32_t j = 0; j < dim; ++j) dst[j] += x * row[j];
            }
        }
    }
    return out;
}

LinearLayer LinearLayer::identity(std::uint32_t dim) {
    LinearLayer l;
    l.dim = dim;
    l.weight.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    for (std::uint32_t i = 0; i < dim; ++i) l.weight[static_cast<std::size_t>(i) * dim + i] = 1.0;
    l.bias.assign(dim, 0.0);
    return l;
}

bool LinearLayer::is_identity() const {
    for (std::uint32_t i = 0; i < dim; ++i)
        for (std::uint32_t j = 0; j < dim; ++j)
            if (weight[static_cast<std::size_t>(i) * dim + j] != (i == j ? 1.0 : 0.0)) return false;
    return std::all_of(bias.begin(), bias.end(), [](double b) { return b == 0.0; });
}

void LinearLayer::save(const std::filesystem::path& path) const {
    auto os = binio::open_out(path);
    binio::write_magic(os, "PDBL");
    binio::write_u32(os, 1);
    binio::write_u32(os, dim);
    for (double v : weight) binio::write_f64(os, v);
    for (double v : bias) binio::write_f64(os, v);
    if (!os) throw std::runtime_error("failed writing layer: " + path.string());
}

LinearLayer LinearLayer::load(const std::filesystem::path& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "PDBL", "linear layer");
    const std::uint32_t version = binio::read_u32(is);
    if (version != 1)
        throw std::runtime_error("unsupported layer version " + std::to_string(version) + ": " +
                                 path.string());
    LinearLayer l;
    l.dim = binio::read_u32(is);
    l.weight.resize(static_cast<std::size_t>(l.dim) * l.dim);
    for (double& v : l.weight) v = binio::read_f64(is);
    l.bias.resize(l.dim);
    for (double& v : l.bias) v = binio::read_f64(is);
    return l;
}

PosteriorTensor linear_forward(const PosteriorTensor& post, const LinearLayer& layer) {
    if (post.bpe_size != layer.dim)
        throw std::runtime_error("linear_forward: tensor bpe_size " + std::to_string(post.bpe_size) +
                                 " does not match layer dim " + std::to_string(layer.dim));
    PosteriorTensor out = post;
    const std::uint32_t dim = layer.dim;
    std::vector<double> z(dim);
    for (std::uint32_t b = 0; b < post.batch; ++b) {
        for (std::uint32_t t = 0; t < std::min(post.lengths[b], post.max_len); ++t) {
            auto in = post.slice(b, t);
            for (std::uint32_t j = 0; j < dim; ++j) {
                const double* wrow = layer.weight.data() + static_cast<std::size_t>(j) * dim;
                double acc = layer.bias[j];
                for (std::uint32_t i = 0; i < dim; ++i) acc += wrow[i] * in[i];
                z[j] = acc;
            }
            softmax_inplace(z);
            auto dst = out.slice(b, t);
            for (std::uint32_t j = 0; j < dim; ++j) {
                if (!std::isfinite(z[j]))
                    throw std::runtime_error("linear_forward: non-finite output at " +
                                             slice_name(b, t));
                dst[j] = z[j];
            }
        }
    }
    return out;
}

namespace {

// Mean cross-entropy over valid steps and its gradient in one pass.
// grad_w/grad_b may be null to skip gradient accumulation.
double ce_loss_and_grad(const PosteriorTensor& inputs,
                        const std::vector<std::vector<TokenId>>& refs, const LinearLayer& layer,
                        std::vector<double>* grad_w, std::vector<double>* grad_b) {
    const std::uint32_t dim = layer.dim;
    std::vector<double> z(dim);
    double loss = 0.0;
    std::size_t steps = 0;
    if (grad_w) std::fill(grad_w->begin(), grad_w->end(), 0.0);
    if (grad_b) std::fill(grad_b->begin(), grad_b->end(), 0.0);

    for (std::uint32_t b = 0; b < inputs.batch; ++b) {
        for (std::uint32_t t = 0; t < inputs.lengths[b]; ++t) {
            auto x = inputs.slice(b, t);
            for (std::uint32_t j = 0; j < dim; ++j) {
                const double* wrow = layer.weight.data() + static_cast<std::size_t>(j) * dim;
                double acc = layer.bias[j];
                for (std::uint32_t i = 0; i < dim; ++i) acc += wrow[i] * x[i];
                z[j] = acc;
            }
            softmax_inplace(z);
            const TokenId r = refs[b][t];
            loss += -std::log(std::max(z[r], 1e-300));
            ++steps;
            if (grad_w) {
                // d(loss)/dz_j = softmax_j - [j == r]
                for (std::uint32_t j = 0; j < dim; ++j) {
                    const double dz = z[j] - (j == r ? 1.0 : 0.0);
                    (*grad_b)[j] += dz;
                    double* gw = grad_w->data() + static_cast<std::size_t>(j) * dim;
                    for (std::uint32_t i = 0; i < dim; ++i) gw[i] += dz * x[i];
                }
            }
        }
    }
    if (steps == 0) throw std::runtime_error("train_linear: no valid steps to train on");
    const double inv = 1.0 / static_cast<double>(steps);
    if (grad_w)
        for (double& g : *grad_w) g *= inv;
    if (grad_b)
        for (double& g : *grad_b) g *= inv;
    return loss * inv;
}

}  // namespace

TrainResult train_linear(const PosteriorTensor& inputs,
                         const std::vector<std::vector<TokenId>>& refs, const TrainConfig& config) {
    if (config.learning_rate < 0.0)
        throw std::runtime_error("train_linear: learning rate must be >= 0");
    if (config.epochs < 1) throw std::runtime_error("train_linear: epochs must be >= 1");
    if (refs.size() != inputs.batch)
        throw std::runtime_error("train_linear: expected one reference sequence per utterance");
    inputs.validate(1e-4);
    for (std::uint32_t b = 0; b < inputs.batch; ++b) {
        if (refs[b].size() != inputs.lengths[b])
            throw std::runtime_error("train_linear: utterance '" + inputs.utt_ids[b] +
                                     "': reference length " + std::to_string(refs[b].size()) +
                                     " does not match valid length " +
                                     std::to_string(inputs.lengths[b]));
        for (TokenId r : refs[b])
            if (r >= inputs.bpe_size)
                throw std::runtime_error("train_linear: utterance '" + inputs.utt_ids[b] +
                                         "': reference id out of range");
    }

    TrainResult result;
    result.layer = LinearLayer::identity(inputs.bpe_size);
    const std::size_t wsize = result.layer.weight.size();
    std::vector<double> grad_w(wsize), grad_b(inputs.bpe_size);

    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double loss = ce_loss_and_grad(inputs, refs, result.layer, &grad_w, &grad_b);
        result.loss_trajectory.push_back(loss);
        for (std::size_t i = 0; i < wsize; ++i)
            result.layer.weight[i] -= config.learning_rate * grad_w[i];
        for (std::uint32_t i = 0; i < inputs.bpe_size; ++i)
            result.layer.bias[i] -= config.learning_rate * grad_b[i];
    }
    result.loss_trajectory.push_back(ce_loss_and_grad(inputs, refs, result.layer, nullptr, nullptr));
    return result;
}

double grad_check(const LinearLayer& layer, std::span<const double> slice, TokenId ref, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw std::runtime_error("grad_check: eps must be in (0, 1e-2]");
    const std::uint32_t dim = layer.dim;
    if (slice.size() != dim) throw std::runtime_error("grad_check: slice size does not match layer");
    if (dim > 8) throw std::runtime_error("grad_check: supports dim <= 8");
    if (ref >= dim) throw std::runtime_error("grad_check: ref id out of range");

    PosteriorTensor one = PosteriorTensor::zeros(1, 1, dim);
    one.lengths[0] = 1;
    one.utt_ids[0] = "grad_check";
    std::copy(slice.begin(), slice.end(), one.slice(0, 0).begin());
    const std::vector<std::vector<TokenId>> refs = {{ref}};

    std::vector<double> grad_w(layer.weight.size()), grad_b(dim);
    ce_loss_and_grad(one, refs, layer, &grad_w, &grad_b);

    LinearLayer probe = layer;
    auto fd = [&](double* coord) {
        const double saved = *coord;
        *coord = saved + eps;
        const double up = ce_loss_and_grad(one, refs, probe, nullptr, nullptr);
        *coord = saved - eps;
        const double down = ce_loss_and_grad(one, refs, probe, nullptr, nullptr);
        *coord = saved;
        return (up - down) / (2.0 * eps);
    };

    double max_rel = 0.0;
    auto update = [&](double analytic, double numeric) {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    };
    for (std::size_t i = 0; i < probe.weight.size(); ++i)
        update(grad_w[i], fd(&probe.weight[i]));
    for (std::uint32_t i = 0; i < dim; ++i) update(grad_b[i], fd(&probe.bias[i]));
    return max_rel;
}

}  // namespace pdbias
