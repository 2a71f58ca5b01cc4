#include "pdbias/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "pdbias/binio.hpp"
#include "pdbias/eval.hpp"
#include "pdbias/postdecoder.hpp"

namespace pdbias::cli {

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // inputs
        "corpus", "vocab", "marker", "tensor", "train_tensor", "train_refs", "refs",
        // parameters
        "mode", "band", "boost_factor", "schedule", "p", "convention", "same_class_only",
        "use_matrix", "use_linear", "hyp_source", "lr", "epochs", "seed", "factors",
        // outputs
        "out", "list", "matrix", "layer", "biased", "hyps", "report", "stats_report",
        "sweep_report", "train_report", "manifest"};
    return keys;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("failed writing: " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::filesystem::path require_input(const RunConfig& cfg, const std::string& key) {
    if (!cfg.has(key)) throw std::runtime_error("config key '" + key + "' is required");
    std::filesystem::path p = cfg.get(key);
    if (!std::filesystem::exists(p))
        throw std::runtime_error("input '" + key + "' does not exist: " + p.string());
    return p;
}

LoadedCorpus load_corpus_cfg(const RunConfig& cfg) {
    auto corpus_path = require_input(cfg, "corpus");
    std::optional<Vocabulary> vocab;
    if (cfg.has("vocab")) vocab = Vocabulary::load(require_input(cfg, "vocab"), cfg.marker());
    return load_corpus(corpus_path, vocab, cfg.marker());
}

// `utt_id<TAB>word word ...` per line; blank lines skipped.
std::vector<std::pair<std::string, WordSeq>> read_word_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::vector<std::pair<std::string, WordSeq>> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw std::runtime_error(path.string() + ":" + std::to_string(n) +
                                     ": expected 'utt_id<TAB>words'");
        WordSeq words;
        std::istringstream ws(line.substr(tab + 1));
        std::string w;
        while (ws >> w) words.push_back(w);
        out.emplace_back(line.substr(0, tab), std::move(words));
    }
    return out;
}

void write_word_file(const std::filesystem::path& path, const std::vector<std::string>& ids,
                     const std::vector<WordSeq>& seqs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        os << ids[i] << '\t';
        for (std::size_t k = 0; k < seqs[i].size(); ++k) {
            if (k) os << ' ';
            os << seqs[i][k];
        }
        os << '\n';
    }
    write_text(path, os.str());
}

json band_json(const RwerEntry& e) {
    return {{"band", e.band_label},
            {"rare_del", e.rare_del},
            {"rare_sub_missed", e.rare_sub_missed},
            {"rare_wrongly_appeared", e.rare_wrongly_appeared},
            {"rare_ref_occurrences", e.rare_ref_occurrences},
            {"numerator", e.numerator()},
            {"rwer", e.rwer ? json(*e.rwer) : json(nullptr)},
            {"denominator_fallback", e.denominator_fallback},
            {"not_applicable", e.not_applicable}};
}

// Band membership only; token decompositions are not needed for scoring,
// so unsegmentable words still count as rare here.
BiasingList band_word_set(const std::map<std::string, std::uint64_t>& freqs, FrequencyBand band) {
    BiasingList list;
    for (const auto& [word, freq] : freqs)
        if (band.contains(freq)) list.entries.push_back({word, freq, {}});
    return list;
}

std::vector<std::pair<std::string, BiasingList>> scoring_lists(
    const std::map<std::string, std::uint64_t>& freqs, const RunConfig& cfg) {
    std::vector<FrequencyBand> bands = standard_bands();
    if (cfg.has("band")) {
        FrequencyBand custom = cfg.band();
        bool known = std::any_of(bands.begin(), bands.end(), [&](const FrequencyBand& b) {
            return b.low == custom.low && b.high == custom.high;
        });
        if (!known) bands.push_back(custom);
    }
    std::vector<std::pair<std::string, BiasingList>> lists;
    for (const auto& band : bands) lists.emplace_back(band.label(), band_word_set(freqs, band));
    return lists;
}

void rollback(CommandOutcome& out) {
    for (const auto& path : out.written) {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
    out.written.clear();
}

template <typename Body>
void run_stage(const std::string& stage, Body&& body) {
    try {
        body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void ensure_out_dir(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir());
}

void note_written(CommandOutcome& out, const std::filesystem::path& path, const std::string& stage) {
    out.written.push_back(path);
    std::cerr << "pdbias " << stage << ": wrote " << path.string() << "\n";
}

// ---------------------------------------------------------------------------
// Stage bodies, shared between single subcommands and the pipeline.
// ---------------------------------------------------------------------------

void stage_stats(const RunConfig& cfg, CommandOutcome& out) {
    auto loaded = load_corpus_cfg(cfg);
    auto freqs = word_frequencies(loaded.corpus, loaded.vocab);

    std::map<std::uint64_t, std::uint64_t> histogram;
    std::uint64_t total_words = 0;
    for (const auto& [word, freq] : freqs) {
        (void)word;
        ++histogram[freq];
        total_words += freq;
    }
    json hist = json::object();
    for (const auto& [freq, n] : histogram) hist[std::to_string(freq)] = n;

    json bands = json::array();
    for (const auto& band : standard_bands()) {
        json words = json::array();
        std::uint64_t occurrences = 0;
        for (const auto& [word, freq] : freqs) {
            if (!band.contains(freq)) continue;
            words.push_back(word);
            occurrences += freq;
        }
        bands.push_back({{"band", band.label()},
                         {"unique", words.size()},
                         {"occurrences", occurrences},
                         {"words", words}});
    }

    out.report = json{{"schema_version", kSchemaVersion},
                      {"config_hash", cfg.config_hash()},
                      {"utterances", loaded.corpus.utterances.size()},
                      {"total_tokens", loaded.corpus.total_tokens()},
                      {"total_words", total_words},
                      {"unique_words", freqs.size()},
                      {"vocab_size", loaded.vocab.size()},
                      {"histogram", hist},
                      {"bands", bands}};

    ensure_out_dir(cfg);
    auto path = cfg.artifact_path("stats_report", "stats.json");
    out.written.push_back(path);
    write_json_file(path, out.report);
}

void stage_extract_list(const RunConfig& cfg, CommandOutcome& out) {
    auto loaded = load_corpus_cfg(cfg);
    auto freqs = word_frequencies(loaded.corpus, loaded.vocab);
    auto extracted = extract_band(freqs, cfg.band(), loaded.vocab);
    for (const auto& word : extracted.unsegmentable)
        std::cerr << "pdbias extract-list: warning: skipped unsegmentable word '" << word << "'\n";

    ensure_out_dir(cfg);
    auto path = cfg.artifact_path("list", "list.tsv");
    note_written(out, path, "extract-list");
    extracted.list.save(path);
    out.report = json{{"schema_version", kSchemaVersion},
                      {"config_hash", cfg.config_hash()},
                      {"band", cfg.band().label()},
                      {"words", extracted.list.entries.size()},
                      {"unsegmentable", extracted.unsegmentable}};
}

void stage_build_matrix(const RunConfig& cfg, CommandOutcome& out) {
    auto loaded = load_corpus_cfg(cfg);
    const CountingMode mode = cfg.counting_mode();
    auto counts = count_stats(loaded.corpus, loaded.vocab, mode);

    auto list_path = cfg.artifact_path("list", "list.tsv");
    if (!std::filesystem::exists(list_path))
        throw std::runtime_error("biasing list not found: " + list_path.string() +
                                 " (run extract-list first)");
    BoostSpec spec;
    spec.factor = cfg.get_u64("boost_factor", 100);
    spec.targets = BiasingList::load(list_path, loaded.vocab);

    auto boosted = boost_counts(counts, loaded.corpus, loaded.vocab, mode, spec);
    auto conn = connection_probs(boosted, loaded.vocab);
    auto matrix = build_transform(conn, boosted.unigram, loaded.vocab, cfg.schedule(),
                                  cfg.transform_options());
    matrix.provenance.boost_factor = spec.factor;
    matrix.provenance.counting_mode = to_string(mode);

    ensure_out_dir(cfg);
    auto path = cfg.artifact_path("matrix", "matrix.pdbm");
    note_written(out, path, "build-matrix");
    matrix.save(path, json{{"config_hash", cfg.config_hash()}}.dump());
}

// Maps `utt_id<TAB>tok tok` reference transcriptions onto the tensor's
// rows, one token id per valid step.
std::vector<std::vector<TokenId>> align_train_refs(const PosteriorTensor& tensor,
                                                   const std::filesystem::path& refs_path,
                                                   const Vocabulary& vocab) {
    auto loaded = load_corpus(refs_path, vocab);
    std::map<std::string, const std::vector<TokenId>*> by_id;
    for (std::size_t i = 0; i < loaded.corpus.source_ids.size(); ++i)
        by_id[loaded.corpus.source_ids[i]] = &loaded.corpus.utterances[i];
    std::vector<std::vector<TokenId>> refs;
    refs.reserve(tensor.batch);
    for (const auto& id : tensor.utt_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::runtime_error("no reference transcription for utterance '" + id + "'");
        refs.push_back(*it->second);
    }
    return refs;
}

void stage_train_linear(const RunConfig& cfg, CommandOutcome& out) {
    ensure_out_dir(cfg);
    auto layer_path = cfg.artifact_path("layer", "layer.pdbl");

    if (!cfg.has("train_tensor")) {
        // No training data configured: materialize the identity
        // initialization so downstream biasing has a layer artifact.
        if (!cfg.has("tensor"))
            throw std::runtime_error(
                "need train_tensor+train_refs to train, or tensor to size the identity layer");
        auto tensor = PosteriorTensor::load(require_input(cfg, "tensor"));
        note_written(out, layer_path, "train-linear");
        LinearLayer::identity(tensor.bpe_size).save(layer_path);
        out.report = json{{"schema_version", kSchemaVersion},
                          {"config_hash", cfg.config_hash()},
                          {"trained", false},
                          {"dim", tensor.bpe_size}};
        return;
    }

    auto loaded = load_corpus_cfg(cfg);
    auto tensor = PosteriorTensor::load(require_input(cfg, "train_tensor"));
    tensor.validate(1e-4);
    if (tensor.bpe_size != loaded.vocab.size())
        throw std::runtime_error("train tensor bpe_size " + std::to_string(tensor.bpe_size) +
                                 " does not match vocabulary size " +
                                 std::to_string(loaded.vocab.size()));
    if (cfg.get_bool("use_matrix", true)) {
        auto matrix_path = cfg.artifact_path("matrix", "matrix.pdbm");
        if (!std::filesystem::exists(matrix_path))
            throw std::runtime_error("transform matrix not found: " + matrix_path.string() +
                                     " (run build-matrix first)");
        tensor = apply_transform(tensor, TransformMatrix::load(matrix_path));
    }
    auto refs = align_train_refs(tensor, require_input(cfg, "train_refs"), loaded.vocab);

    TrainConfig tc;
    tc.learning_rate = cfg.get_double("lr", 1e-2);
    tc.epochs = static_cast<std::uint32_t>(cfg.get_u64("epochs", 20));
    tc.seed = cfg.get_u64("seed", 0);
    auto result = train_linear(tensor, refs, tc);

    note_written(out, layer_path, "train-linear");
    result.layer.save(layer_path);

    out.report = json{{"schema_version", kSchemaVersion},
                      {"config_hash", cfg.config_hash()},
                      {"trained", true},
                      {"dim", result.layer.dim},
                      {"learning_rate", tc.learning_rate},
                      {"epochs", tc.epochs},
                      {"seed", tc.seed},
                      {"loss_trajectory", result.loss_trajectory},
                      {"final_loss", result.loss_trajectory.back()}};
    auto report_path = cfg.artifact_path("train_report", "train.json");
    note_written(out, report_path, "train-linear");
    write_json_file(report_path, out.report);
}

void stage_bias(const RunConfig& cfg, CommandOutcome& out) {
    auto tensor = PosteriorTensor::load(require_input(cfg, "tensor"));
    tensor.validate(1e-4);
    if (cfg.get_bool("use_matrix", true)) {
        auto matrix_path = cfg.artifact_path("matrix", "matrix.pdbm");
        if (!std::filesystem::exists(matrix_path))
            throw std::runtime_error("transform matrix not found: " + matrix_path.string() +
                                     " (run build-matrix first)");
        tensor = apply_transform(tensor, TransformMatrix::load(matrix_path));
    }
    if (cfg.get_bool("use_linear", false)) {
        auto layer_path = cfg.artifact_path("layer", "layer.pdbl");
        if (!std::filesystem::exists(layer_path))
            throw std::runtime_error("linear layer not found: " + layer_path.string() +
                                     " (run train-linear first)");
        tensor = linear_forward(tensor, LinearLayer::load(layer_path));
    }
    ensure_out_dir(cfg);
    auto path = cfg.artifact_path("biased", "biased.pdbt");
    note_written(out, path, "bias");
    tensor.save(path, json{{"config_hash", cfg.config_hash()}}.dump());
}

void stage_score(const RunConfig& cfg, CommandOutcome& out) {
    auto loaded = load_corpus_cfg(cfg);
    auto freqs = word_frequencies(loaded.corpus, loaded.vocab);

    std::vector<std::string> hyp_ids;
    std::vector<WordSeq> hyps;
    const std::string source = cfg.get_or("hyp_source", "tensor");
    ensure_out_dir(cfg);
    if (source == "tensor") {
        auto tensor_path = cfg.artifact_path("biased", "biased.pdbt");
        if (!std::filesystem::exists(tensor_path))
            throw std::runtime_error("biased tensor not found: " + tensor_path.string() +
                                     " (run bias first)");
        auto tensor = PosteriorTensor::load(tensor_path);
        tensor.validate(1e-4);
        hyps = decode_greedy(tensor, loaded.vocab);
        hyp_ids = tensor.utt_ids;
        auto hyp_path = cfg.artifact_path("hyps", "hyps.txt");
        note_written(out, hyp_path, "score");
        write_word_file(hyp_path, hyp_ids, hyps);
    } else if (source == "file") {
        for (auto& [id, words] : read_word_file(require_input(cfg, "hyps"))) {
            hyp_ids.push_back(id);
            hyps.push_back(std::move(words));
        }
    } else {
        throw std::runtime_error("hyp_source must be 'tensor' or 'file', got '" + source + "'");
    }

    std::map<std::string, WordSeq> refs;
    for (auto& [id, words] : read_word_file(require_input(cfg, "refs"))) {
        if (!refs.emplace(id, std::move(words)).second)
            throw std::runtime_error("duplicate reference utterance '" + id + "'");
    }
    std::vector<ScoredPair> pairs;
    for (std::size_t i = 0; i < hyp_ids.size(); ++i) {
        auto it = refs.find(hyp_ids[i]);
        if (it == refs.end())
            throw std::runtime_error("no reference for utterance '" + hyp_ids[i] + "'");
        pairs.emplace_back(it->second, hyps[i]);
        refs.erase(it);
    }
    if (!refs.empty())
        throw std::runtime_error("reference utterance '" + refs.begin()->first +
                                 "' has no hypothesis");

    auto report = score_pairs(pairs, scoring_lists(freqs, cfg));
    json bands = json::array();
    for (const auto& entry : report.bands) bands.push_back(band_json(entry));
    out.report = json{{"schema_version", kSchemaVersion},
                      {"config_hash", cfg.config_hash()},
                      {"utterances", pairs.size()},
                      {"wer", report.wer},
                      {"reference_words", report.reference_words},
                      {"substitutions", report.substitutions},
                      {"deletions", report.deletions},
                      {"insertions", report.insertions},
                      {"bands", bands}};
    auto path = cfg.artifact_path("report", "report.json");
    note_written(out, path, "score");
    write_json_file(path, out.report);
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

template <typename Body>
CommandOutcome guarded(const std::string& stage, Body&& body) {
    CommandOutcome out;
    try {
        run_stage(stage, [&] { body(out); });
    } catch (...) {
        rollback(out);
        throw;
    }
    return out;
}

}  // namespace

CommandOutcome cmd_stats(const RunConfig& cfg) {
    return guarded("stats", [&](CommandOutcome& out) { stage_stats(cfg, out); });
}

CommandOutcome cmd_extract_list(const RunConfig& cfg) {
    return guarded("extract-list", [&](CommandOutcome& out) { stage_extract_list(cfg, out); });
}

CommandOutcome cmd_build_matrix(const RunConfig& cfg) {
    return guarded("build-matrix", [&](CommandOutcome& out) { stage_build_matrix(cfg, out); });
}

CommandOutcome cmd_train_linear(const RunConfig& cfg) {
    return guarded("train-linear", [&](CommandOutcome& out) { stage_train_linear(cfg, out); });
}

CommandOutcome cmd_bias(const RunConfig& cfg) {
    return guarded("bias", [&](CommandOutcome& out) { stage_bias(cfg, out); });
}

CommandOutcome cmd_score(const RunConfig& cfg) {
    return guarded("score", [&](CommandOutcome& out) { stage_score(cfg, out); });
}

CommandOutcome cmd_pipeline(const RunConfig& cfg) {
    CommandOutcome out;
    try {
        run_stage("extract-list", [&] { stage_extract_list(cfg, out); });
        if (cfg.get_bool("use_matrix", true))
            run_stage("build-matrix", [&] { stage_build_matrix(cfg, out); });
        if (cfg.get_bool("use_linear", false))
            run_stage("train-linear", [&] { stage_train_linear(cfg, out); });
        run_stage("bias", [&] { stage_bias(cfg, out); });
        run_stage("score", [&] { stage_score(cfg, out); });
        run_stage("manifest", [&] {
            json artifacts = json::object();
            for (const auto& path : out.written)
                artifacts[path.filename().string()] = {
                    {"path", path.string()}, {"fingerprint", binio::file_fingerprint(path)}};
            json manifest{{"schema_version", kSchemaVersion},
                          {"config_hash", cfg.config_hash()},
                          {"config", cfg.values()},
                          {"artifacts", artifacts}};
            auto path = cfg.artifact_path("manifest", "manifest.json");
            out.written.push_back(path);
            write_json_file(path, manifest);
        });
    } catch (...) {
        rollback(out);
        throw;
    }
    return out;
}

CommandOutcome cmd_sweep(const RunConfig& cfg) {
    CommandOutcome out;
    try {
        run_stage("sweep", [&] {
            const auto factors = cfg.factors();
            if (factors.empty()) throw std::runtime_error("at least one boost factor is required");

            // Parameters forwarded to each per-factor pipeline; outputs are
            // re-rooted under <out>/sweep/F<factor>.
            static const std::vector<std::string> forwarded = {
                "corpus", "vocab",      "marker",       "tensor", "train_tensor", "train_refs",
                "refs",   "mode",       "band",         "schedule", "p",          "convention",
                "same_class_only", "use_matrix", "use_linear", "hyp_source", "lr", "epochs", "seed"};

            std::vector<std::uint64_t> to_run = factors;
            to_run.push_back(1);  // baseline
            std::sort(to_run.begin(), to_run.end());
            to_run.erase(std::unique(to_run.begin(), to_run.end()), to_run.end());

            std::map<std::uint64_t, json> results;  // factor -> row (sans relative improvement)
            for (std::uint64_t factor : to_run) {
                RunConfig sub;
                for (const auto& key : forwarded)
                    if (cfg.has(key)) sub.set(key, cfg.get(key));
                sub.set("boost_factor", std::to_string(factor));
                sub.set("out", (cfg.out_dir() / "sweep" / ("F" + std::to_string(factor))).string());
                json row{{"factor", factor}, {"config_hash", sub.config_hash()}};
                try {
                    auto run = cmd_pipeline(sub);
                    for (auto& p : run.written) out.written.push_back(std::move(p));
                    row["wer"] = run.report["wer"];
                    row["bands"] = run.report["bands"];
                } catch (const StageError& e) {
                    std::cerr << "pdbias sweep: factor " << factor << " failed: " << e.what() << "\n";
                    row["error"] = e.what();
                }
                results.emplace(factor, std::move(row));
            }

            auto band_rwer = [](const json& row, const std::string& label) -> json {
                if (!row.contains("bands")) return nullptr;
                for (const auto& b : row["bands"])
                    if (b["band"] == label) return b["rwer"];
                return nullptr;
            };
            const json& baseline = results.at(1);

            json rows = json::array();
            for (std::uint64_t factor : factors) {
                json row = results.at(factor);
                if (row.contains("bands")) {
                    json rel = json::object();
                    for (const auto& b : row["bands"]) {
                        const std::string label = b["band"];
                        json base = band_rwer(baseline, label);
                        json cur = b["rwer"];
                        if (!base.is_null() && !cur.is_null() && base.get<double>() > 0.0) {
                            rel[label] =
                                100.0 * (base.get<double>() - cur.get<double>()) / base.get<double>();
                        } else if (!base.is_null() && !cur.is_null()) {
                            // Baseline already at zero: report the plain difference sign.
                            rel[label] = cur.get<double>() == 0.0 ? json(0.0) : json(nullptr);
                        } else {
                            rel[label] = nullptr;
                        }
                    }
                    row["relative_improvement_pct"] = rel;
                }
                rows.push_back(std::move(row));
            }

            out.report = json{{"schema_version", kSchemaVersion},
                              {"config_hash", cfg.config_hash()},
                              {"baseline_factor", 1},
                              {"factors", rows}};
            ensure_out_dir(cfg);
            auto path = cfg.artifact_path("sweep_report", "sweep.json");
            out.written.push_back(path);
            write_json_file(path, out.report);
        });
    } catch (...) {
        rollback(out);
        throw;
    }
    return out;
}

// ---------------------------------------------------------------------------
// RunConfig.
// ---------------------------------------------------------------------------

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return from_string(buf.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(n) + ": expected key=value");
        cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw std::runtime_error("unknown config key '" + key + "'");
    if (value.find('\n') != std::string::npos)
        throw std::runtime_error("config value for '" + key + "' must be a single line");
    values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config key '" + key + "' is required");
    return it->second;
}

std::string RunConfig::get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw std::runtime_error("config key '" + key + "' must be true or false, got '" + it->second +
                             "'");
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' must be a number, got '" + it->second +
                                 "'");
    }
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc{} || ptr != it->second.data() + it->second.size())
        throw std::runtime_error("config key '" + key + "' must be a non-negative integer, got '" +
                                 it->second + "'");
    return v;
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string RunConfig::config_hash() const { return binio::hex64(binio::fnv1a(canonical())); }

std::filesystem::path RunConfig::out_dir() const {
    if (has("out")) return get("out");
    if (const char* env = std::getenv("PDBIAS_OUT"); env && *env) return env;
    return ".";
}

std::filesystem::path RunConfig::artifact_path(const std::string& key,
                                               const std::string& default_name) const {
    if (has(key)) return get(key);
    return out_dir() / default_name;
}

FrequencyBand RunConfig::band() const { return FrequencyBand::parse(get("band")); }

CountingMode RunConfig::counting_mode() const {
    return counting_mode_from_string(get_or("mode", "full-stream"));
}

ReplacementSchedule RunConfig::schedule() const {
    const std::string kind = get_or("schedule", "auto");
    const ProbConvention convention = convention_from_string(get_or("convention", "keep"));
    if (kind == "fixed") {
        if (!has("p")) throw std::runtime_error("schedule 'fixed' requires config key 'p'");
        auto s = ReplacementSchedule::fixed(get_double("p", 0.0));
        s.convention = convention;
        return s;
    }
    if (kind == "auto") return ReplacementSchedule::automatic(convention);
    throw std::runtime_error("schedule must be 'fixed' or 'auto', got '" + kind + "'");
}

TransformOptions RunConfig::transform_options() const {
    TransformOptions o;
    o.same_class_only = get_bool("same_class_only", true);
    return o;
}

std::string RunConfig::marker() const { return get_or("marker", kDefaultMarker); }

std::vector<std::uint64_t> RunConfig::factors() const {
    std::vector<std::uint64_t> out;
    std::istringstream is(get_or("factors", ""));
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc{} || ptr != item.data() + item.size() || v == 0)
            throw std::runtime_error("factors must be positive integers, got '" + item + "'");
        out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// argv front end.
// ---------------------------------------------------------------------------

namespace {

std::string flag_name(const std::string& key) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    return flag;
}

struct ParsedInvocation {
    std::string command;
    RunConfig config;
};

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{
        "pdbias - post-decoder biasing for contextual speech recognition.\n"
        "Builds sub-word replacement matrices from transcription statistics,\n"
        "applies them to decoder posterior tensors and scores WER/RWER.\n"
        "Default output root: $PDBIAS_OUT (else the current directory)."};
    app.require_subcommand(1);

    struct SubState {
        CLI::App* sub = nullptr;
        std::string config_path;
        std::map<std::string, std::string> overrides;
    };

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"stats", "word-frequency histogram and rare-band statistics of a corpus"},
        {"extract-list", "extract a frequency-band biasing list from a corpus"},
        {"build-matrix", "build the replacement-probability matrix (with boosting)"},
        {"bias", "apply matrix and/or linear layer to a posterior tensor"},
        {"train-linear", "train the post-decoder linear layer on posteriors"},
        {"score", "WER and per-band RWER of hypotheses against references"},
        {"sweep", "run the pipeline over several boost factors and compare"},
        {"pipeline", "extract, build, train, bias and score in one run"},
    };

    std::vector<std::shared_ptr<SubState>> states;
    for (const auto& [name, desc] : commands) {
        auto state = std::make_shared<SubState>();
        state->sub = app.add_subcommand(name, desc);
        state->sub->add_option("--config", state->config_path, "flat key=value config file");
        for (const auto& key : known_keys())
            state->sub->add_option(flag_name(key), state->overrides[key],
                                   "override config key '" + key + "'");
        states.push_back(state);
    }

    ParsedInvocation invocation;
    try {
        app.parse(argc, argv);
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (!states[i]->sub->parsed()) continue;
            invocation.command = commands[i].first;
            if (!states[i]->config_path.empty())
                invocation.config = RunConfig::from_file(states[i]->config_path);
            for (const auto& key : known_keys())
                if (states[i]->sub->count(flag_name(key)) > 0)
                    invocation.config.set(key, states[i]->overrides[key]);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "pdbias: error: " << e.what() << "\n";
        return 1;
    }

    try {
        CommandOutcome outcome;
        if (invocation.command == "stats") outcome = cmd_stats(invocation.config);
        else if (invocation.command == "extract-list") outcome = cmd_extract_list(invocation.config);
        else if (invocation.command == "build-matrix") outcome = cmd_build_matrix(invocation.config);
        else if (invocation.command == "bias") outcome = cmd_bias(invocation.config);
        else if (invocation.command == "train-linear") outcome = cmd_train_linear(invocation.config);
        else if (invocation.command == "score") outcome = cmd_score(invocation.config);
        else if (invocation.command == "sweep") outcome = cmd_sweep(invocation.config);
        else if (invocation.command == "pipeline") outcome = cmd_pipeline(invocation.config);
        else {
            std::cerr << "pdbias: error: no command selected\n";
            return 1;
        }
        if (!outcome.report.is_null()) std::cout << outcome.report.dump(2) << "\n";
        return 0;
    } catch (const StageError& e) {
        std::cerr << "pdbias: error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "pdbias " << invocation.command << ": error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace pdbias::cli
