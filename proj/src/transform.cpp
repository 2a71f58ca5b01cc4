#include "pdbias/transform.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "pdbias/binio.hpp"

namespace pdbias {

const std::map<TokenId, double>* ConnectionModel::row(TokenId id, const Vocabulary& vocab) const {
    const auto& table = vocab.is_prefix(id) ? forward : backward;
    auto it = table.find(id);
    return it == table.end() ? nullptr : &it->second;
}

ConnectionModel connection_probs(const CountTable& counts, const Vocabulary& vocab) {
    ConnectionModel model;
    // Successor and predecessor totals per token.
    std::map<TokenId, std::uint64_t> out_total, in_total;
    for (const auto& [pair, n] : counts.adjacency) {
        out_total[pair.first] += n;
        in_total[pair.second] += n;
    }
    for (const auto& [pair, n] : counts.adjacency) {
        auto [i, j] = pair;
        if (vocab.is_prefix(i))
            model.forward[i][j] = static_cast<double>(n) / static_cast<double>(out_total[i]);
        if (!vocab.is_prefix(j))
            model.backward[j][i] = static_cast<double>(n) / static_cast<double>(in_total[j]);
    }
    return model;
}

std::string to_string(ProbConvention c) {
    return c == ProbConvention::Keep ? "keep" : "replace";
}

ProbConvention convention_from_string(std::string_view s) {
    if (s == "keep") return ProbConvention::Keep;
    if (s == "replace") return ProbConvention::Replace;
    throw std::runtime_error("unknown convention '" + std::string(s) + "' (expected keep or replace)");
}

double auto_schedule_value(std::uint64_t n) {
    if (n >= 1000) return 0.9;
    if (n > 100) return 0.9 * (static_cast<double>(n) / 1000.0);
    return 0.09;
}

ReplacementSchedule ReplacementSchedule::fixed(double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw std::runtime_error("replacement schedule: fixed p must be in [0,1]");
    ReplacementSchedule s;
    s.kind = Kind::Fixed;
    s.fixed_p = p;
    return s;
}

ReplacementSchedule ReplacementSchedule::automatic(ProbConvention convention) {
    ReplacementSchedule s;
    s.kind = Kind::Auto;
    s.convention = convention;
    return s;
}

std::string ReplacementSchedule::describe() const {
    if (kind == Kind::Fixed) {
        std::ostringstream os;
        os << "fixed(" << fixed_p << ")";
        return os.str();
    }
    return "auto(" + to_string(convention) + ")";
}

double replacement_prob(std::uint64_t n_i, const ReplacementSchedule& schedule) {
    if (schedule.kind == ReplacementSchedule::Kind::Fixed) return schedule.fixed_p;
    double v = auto_schedule_value(n_i);
    return schedule.convention == ProbConvention::Keep ? 1.0 - v : v;
}

TransformMatrix TransformMatrix::identity(std::uint32_t dim) {
    TransformMatrix m;
    m.dim = dim;
    m.data.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    for (std::uint32_t i = 0; i < dim; ++i) m.at(i, i) = 1.0;
    return m;
}

std::vector<double> replacement_scores(const ConnectionModel& conn, const Vocabulary& vocab,
                                       const std::vector<std::uint64_t>& unigram,
                                       const ReplacementSchedule& schedule,
                                       const TransformOptions& options) {
    const std::size_t dim = vocab.size();
    if (unigram.size() != dim)
        throw std::runtime_error("replacement_scores: unigram table size " +
                                 std::to_string(unigram.size()) + " does not match vocabulary size " +
                                 std::to_string(dim));
    for (const auto& table : {conn.forward, conn.backward})
        for (const auto& [i, row] : table) {
            if (i >= dim) throw std::runtime_error("replacement_scores: connection row id out of range");
            for (const auto& [j, p] : row) {
                (void)p;
                if (j >= dim)
                    throw std::runtime_error("replacement_scores: connection entry id out of range");
            }
        }

    std::vector<double> scores(dim * dim, 0.0);
    for (TokenId i = 0; i < dim; ++i) {
        const auto* row_i = conn.row(i, vocab);
        if (!row_i) continue;
        const double p_i = replacement_prob(unigram[i], schedule);
        const bool i_is_prefix = vocab.is_prefix(i);
        for (const auto& [k, p_ik] : *row_i) {
            if (k == i) continue;
            const auto* row_k = conn.row(k, vocab);
            if (!row_k) continue;
            for (const auto& [j, p_kj] : *row_k) {
                if (j == i || j == k) continue;
                if (options.same_class_only && vocab.is_prefix(j) != i_is_prefix) continue;
                scores[static_cast<std::size_t>(i) * dim + j] += p_i * p_ik * p_kj;
            }
        }
    }
    return scores;
}

TransformMatrix build_transform(const ConnectionModel& conn,
                                const std::vector<std::uint64_t>& unigram,
                                const Vocabulary& vocab, const ReplacementSchedule& schedule,
                                const TransformOptions& options) {
    const std::size_t dim = vocab.size();
    TransformMatrix m;
    m.dim = static_cast<std::uint32_t>(dim);
    m.data = replacement_scores(conn, vocab, unigram, schedule, options);
    m.provenance.schedule = schedule.describe();
    m.provenance.convention = to_string(schedule.convention);
    m.provenance.counting_mode = "";
    m.provenance.same_class_only = options.same_class_only;
    m.provenance.vocab_fingerprint = vocab.fingerprint();

    for (TokenId i = 0; i < dim; ++i) {
        double* row = m.data.data() + static_cast<std::size_t>(i) * dim;
        double off_mass = 0.0;
        for (std::size_t j = 0; j < dim; ++j)
            if (j != i) off_mass += row[j];
        if (off_mass > 0.0) {
            const double p_i = replacement_prob(unigram[i], schedule);
            const double scale = p_i / off_mass;
            for (std::size_t j = 0; j < dim; ++j)
                if (j != i) row[j] *= scale;
            row[i] = 1.0 - p_i;
        } else {
            row[i] = 1.0;
        }
    }
    return m;
}

void TransformMatrix::save(const std::filesystem::path& path, const std::string& extra_trailer) const {
    nlohmann::json trailer = {
        {"schedule", provenance.schedule},
        {"convention", provenance.convention},
        {"boost_factor", provenance.boost_factor},
        {"counting_mode", provenance.counting_mode},
        {"same_class_only", provenance.same_class_only},
        {"vocab_fingerprint", provenance.vocab_fingerprint},
    };
    if (!extra_trailer.empty()) {
        auto extra = nlohmann::json::parse(extra_trailer);
        for (auto& [k, v] : extra.items()) trailer[k] = v;
    }

    auto os = binio::open_out(path);
    binio::write_magic(os, "PDBM");
    binio::write_u32(os, 1);
    binio::write_u32(os, dim);
    for (double v : data) binio::write_f64(os, v);
    const std::string json = trailer.dump();
    os.write(json.data(), static_cast<std::streamsize>(json.size()));
    if (!os) throw std::runtime_error("failed writing matrix: " + path.string());
}

TransformMatrix TransformMatrix::load(const std::filesystem::path& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "PDBM", "transform matrix");
    const std::uint32_t version = binio::read_u32(is);
    if (version != 1)
        throw std::runtime_error("unsupported matrix version " + std::to_string(version) + ": " +
                                 path.string());
    TransformMatrix m;
    m.dim = binio::read_u32(is);
    m.data.resize(static_cast<std::size_t>(m.dim) * m.dim);
    for (double& v : m.data) v = binio::read_f64(is);
    const std::string tail = binio::read_to_end(is);
    if (!tail.empty()) {
        auto trailer = nlohmann::json::parse(tail);
        m.provenance.schedule = trailer.value("schedule", "");
        m.provenance.convention = trailer.value("convention", "");
        m.provenance.boost_factor = trailer.value("boost_factor", std::uint64_t{1});
        m.provenance.counting_mode = trailer.value("counting_mode", "");
        m.provenance.same_class_only = trailer.value("same_class_only", true);
        m.provenance.vocab_fingerprint = trailer.value("vocab_fingerprint", "");
    }
    return m;
}

}  // namespace pdbias
