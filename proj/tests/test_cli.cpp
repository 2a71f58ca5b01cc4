#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "pdbias/binio.hpp"
#include "pdbias/cli.hpp"
#include "pdbias/eval.hpp"
#include "pdbias/postdecoder.hpp"
#include "support.hpp"

using json = nlohmann::json;
using namespace pdbias;
using pdbias::cli::RunConfig;
using testsupport::TempDir;
using testsupport::write_file;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

json slurp_json(const std::filesystem::path& path) { return json::parse(slurp(path)); }

// Runs the installed binary with stdout/stderr captured to files.
struct BinResult {
    int exit_code;
    std::string out;
    std::string err;
};

BinResult run_bin(const TempDir& tmp, const std::string& args) {
    const auto out_path = tmp.path / "stdout.txt";
    const auto err_path = tmp.path / "stderr.txt";
    const std::string cmd = std::string(PDBIAS_BIN) + " " + args + " >" + out_path.string() +
                            " 2>" + err_path.string();
    const int status = std::system(cmd.c_str());
    BinResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

RunConfig flip_config(const testsupport::FlipFixture& fx, const std::filesystem::path& out) {
    RunConfig cfg;
    cfg.set("corpus", fx.corpus.string());
    cfg.set("tensor", fx.tensor.string());
    cfg.set("refs", fx.refs.string());
    cfg.set("band", "(0,1]");
    cfg.set("boost_factor", "100");
    cfg.set("schedule", "fixed");
    cfg.set("p", "0.7");
    cfg.set("out", out.string());
    return cfg;
}

json band_entry(const json& report, const std::string& label) {
    for (const auto& b : report.at("bands"))
        if (b.at("band") == label) return b;
    FAIL("band not found: " << label);
    return {};
}

std::vector<std::string> hyp_words(const std::filesystem::path& hyps_file) {
    auto text = slurp(hyps_file);
    auto tab = text.find('\t');
    REQUIRE(tab != std::string::npos);
    std::vector<std::string> words;
    std::istringstream is(text.substr(tab + 1));
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

std::map<std::string, std::string> fingerprint_all(const std::vector<std::filesystem::path>& files) {
    std::map<std::string, std::string> out;
    for (const auto& f : files) out[f.filename().string()] = binio::file_fingerprint(f);
    return out;
}

}  // namespace

TEST_CASE("pipeline biases the ambiguous utterance toward the boosted rare word") {
    TempDir tmp("pipeline");
    auto fx = testsupport::write_flip_fixture(tmp.path);

    // Baseline arm: no matrix, no linear layer.
    auto base_cfg = flip_config(fx, tmp.path / "base");
    base_cfg.set("use_matrix", "false");
    auto base = cli::cmd_pipeline(base_cfg);
    CHECK(hyp_words(tmp.path / "base" / "hyps.txt") ==
          std::vector<std::string>{"take", "warrant"});
    auto base_band = band_entry(base.report, "(0,1]");
    CHECK(base_band.at("rwer").get<double>() == 100.0);

    // Biased arm: matrix with the rare word boosted 100x.
    auto biased_cfg = flip_config(fx, tmp.path / "biased");
    auto biased = cli::cmd_pipeline(biased_cfg);
    CHECK(hyp_words(tmp.path / "biased" / "hyps.txt") ==
          std::vector<std::string>{"take", "warfarin"});
    auto biased_band = band_entry(biased.report, "(0,1]");
    CHECK(biased_band.at("rwer").get<double>() == 0.0);
    CHECK(biased.report.at("wer").get<double>() == 0.0);

    // Non-rare recognition unchanged: the (5,10] band ("take") stays clean.
    CHECK(band_entry(base.report, "(5,10]").at("rwer").get<double>() == 0.0);
    CHECK(band_entry(biased.report, "(5,10]").at("rwer").get<double>() == 0.0);

    // Artifacts exist and the manifest fingerprints them.
    auto manifest = slurp_json(tmp.path / "biased" / "manifest.json");
    CHECK(manifest.at("config_hash") == biased_cfg.config_hash());
    for (const auto& [name, meta] : manifest.at("artifacts").items()) {
        (void)name;
        CHECK(binio::file_fingerprint(meta.at("path").get<std::string>()) ==
              meta.at("fingerprint").get<std::string>());
    }
}

TEST_CASE("fixed p=0 leaves the hypotheses at the unbiased decode") {
    TempDir tmp("pzero");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("p", "0");
    cli::cmd_pipeline(cfg);
    CHECK(hyp_words(tmp.path / "out" / "hyps.txt") == std::vector<std::string>{"take", "warrant"});
    // And the matrix itself is the identity.
    auto matrix = TransformMatrix::load(tmp.path / "out" / "matrix.pdbm");
    CHECK(matrix.data == TransformMatrix::identity(matrix.dim).data);
}

TEST_CASE("pipeline reruns are byte-identical") {
    TempDir tmp("determinism");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("use_linear", "true");
    cfg.set("train_tensor", fx.train_tensor.string());
    cfg.set("train_refs", fx.train_refs.string());
    cfg.set("seed", "7");

    auto first = cli::cmd_pipeline(cfg);
    auto before = fingerprint_all(first.written);
    auto second = cli::cmd_pipeline(cfg);
    auto after = fingerprint_all(second.written);
    CHECK(before == after);
    CHECK(!before.empty());
}

TEST_CASE("manual stage composition reproduces the pipeline byte for byte") {
    TempDir tmp("compose");
    auto fx = testsupport::write_flip_fixture(tmp.path);

    auto pipeline_cfg = flip_config(fx, tmp.path / "pipe");
    pipeline_cfg.set("use_linear", "true");
    pipeline_cfg.set("train_tensor", fx.train_tensor.string());
    pipeline_cfg.set("train_refs", fx.train_refs.string());
    auto piped = cli::cmd_pipeline(pipeline_cfg);

    auto manual_cfg = pipeline_cfg;
    manual_cfg.set("out", (tmp.path / "manual").string());
    cli::cmd_extract_list(manual_cfg);
    cli::cmd_build_matrix(manual_cfg);
    cli::cmd_train_linear(manual_cfg);
    cli::cmd_bias(manual_cfg);
    cli::cmd_score(manual_cfg);

    // The stamped hash differs (out= differs), so compare stage payloads:
    // every artifact must be identical except for that stamp.
    for (const char* name : {"list.tsv", "layer.pdbl", "hyps.txt"}) {
        CHECK(slurp(tmp.path / "pipe" / name) == slurp(tmp.path / "manual" / name));
    }
    (void)piped;
}

TEST_CASE("manual composition with the exact pipeline config is bit-identical") {
    TempDir tmp("compose2");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("use_linear", "true");
    cfg.set("train_tensor", fx.train_tensor.string());
    cfg.set("train_refs", fx.train_refs.string());

    auto piped = cli::cmd_pipeline(cfg);
    auto pipeline_prints = fingerprint_all(piped.written);

    // Re-run the stages individually over the same config (overwriting in
    // place), then compare every artifact fingerprint.
    cli::cmd_extract_list(cfg);
    cli::cmd_build_matrix(cfg);
    cli::cmd_train_linear(cfg);
    cli::cmd_bias(cfg);
    cli::cmd_score(cfg);
    auto manual_prints = fingerprint_all(piped.written);  // manifest untouched by stages
    manual_prints.erase("manifest.json");
    pipeline_prints.erase("manifest.json");
    CHECK(manual_prints == pipeline_prints);
}

TEST_CASE("standalone training reduces the loss and records the trajectory") {
    TempDir tmp("train");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    RunConfig cfg;
    cfg.set("corpus", fx.corpus.string());
    cfg.set("train_tensor", fx.train_tensor.string());
    cfg.set("train_refs", fx.train_refs.string());
    cfg.set("use_matrix", "false");
    cfg.set("lr", "0.05");
    cfg.set("epochs", "40");
    cfg.set("out", (tmp.path / "out").string());
    auto outcome = cli::cmd_train_linear(cfg);
    CHECK(outcome.report.at("trained") == true);
    const auto& losses = outcome.report.at("loss_trajectory");
    REQUIRE(losses.size() == 41);
    CHECK(losses.back().get<double>() < losses.front().get<double>());
    CHECK(outcome.report.at("final_loss") == losses.back());
    CHECK(std::filesystem::exists(tmp.path / "out" / "layer.pdbl"));
    CHECK(std::filesystem::exists(tmp.path / "out" / "train.json"));

    // Trained layer still classifies the consistent training steps correctly.
    auto layer = LinearLayer::load(tmp.path / "out" / "layer.pdbl");
    auto tensor = PosteriorTensor::load(fx.train_tensor);
    auto refined = linear_forward(tensor, layer);
    auto loaded = load_corpus(fx.corpus);
    auto hyps = decode_greedy(refined, loaded.vocab);
    CHECK(hyps[0] == std::vector<std::string>{"take", "warrant"});
    CHECK(hyps[1] == std::vector<std::string>{"warfarin"});
}

TEST_CASE("an untrained linear-only arm preserves the greedy decode") {
    TempDir tmp("linonly");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("use_matrix", "false");
    cfg.set("use_linear", "true");  // no train data: identity initialization
    cli::cmd_pipeline(cfg);
    CHECK(hyp_words(tmp.path / "out" / "hyps.txt") == std::vector<std::string>{"take", "warrant"});
    auto layer = LinearLayer::load(tmp.path / "out" / "layer.pdbl");
    CHECK(layer.is_identity());
}

TEST_CASE("stage failures roll back partial outputs and name the stage") {
    TempDir tmp("rollback");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("tensor", (tmp.path / "missing.pdbt").string());  // bias stage must fail
    try {
        cli::cmd_pipeline(cfg);
        FAIL("expected pipeline failure");
    } catch (const cli::StageError& e) {
        CHECK(e.stage() == "bias");
    }
    CHECK(!std::filesystem::exists(tmp.path / "out" / "list.tsv"));
    CHECK(!std::filesystem::exists(tmp.path / "out" / "matrix.pdbm"));
    CHECK(!std::filesystem::exists(tmp.path / "out" / "report.json"));
}

TEST_CASE("sweep reports per-band improvement against the unit-factor baseline") {
    TempDir tmp("sweep");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("factors", "1,100");
    auto outcome = cli::cmd_sweep(cfg);
    const auto& rows = outcome.report.at("factors");
    REQUIRE(rows.size() == 2);

    auto rwer_of = [&](const json& row, const std::string& label) {
        for (const auto& b : row.at("bands"))
            if (b.at("band") == label) return b.at("rwer").get<double>();
        FAIL("missing band");
        return -1.0;
    };
    CHECK(rows[0].at("factor") == 1);
    CHECK(rows[1].at("factor") == 100);
    const double base = rwer_of(rows[0], "(0,1]");
    const double boosted = rwer_of(rows[1], "(0,1]");
    CHECK(boosted <= base);
    CHECK(base == 100.0);
    CHECK(boosted == 0.0);
    CHECK(rows[1].at("relative_improvement_pct").at("(0,1]").get<double>() == 100.0);
    // The baseline row improves on itself by exactly zero.
    CHECK(rows[0].at("relative_improvement_pct").at("(0,1]").get<double>() == 0.0);
    CHECK(std::filesystem::exists(tmp.path / "out" / "sweep.json"));
}

TEST_CASE("duplicate sweep factors produce identical rows") {
    TempDir tmp("sweepdup");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("factors", "100,100");
    auto outcome = cli::cmd_sweep(cfg);
    const auto& rows = outcome.report.at("factors");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == rows[1]);
}

TEST_CASE("binary: stats emits the band report on stdout") {
    TempDir tmp("binstats");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto r = run_bin(tmp, "stats --corpus " + fx.corpus.string() + " --out " +
                              (tmp.path / "out").string());
    REQUIRE(r.exit_code == 0);
    auto report = json::parse(r.out);
    CHECK(report.at("utterances") == 7);
    CHECK(band_entry(report, "(0,1]").at("unique") == 1);
    CHECK(band_entry(report, "(1,5]").at("unique") == 2);  // warrant, warden
    CHECK(band_entry(report, "(5,10]").at("occurrences") == 6);  // take
    CHECK(slurp_json(tmp.path / "out" / "stats.json") == report);
}

TEST_CASE("binary: config file plus flag override, flags win") {
    TempDir tmp("bincfg");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    write_file(tmp.path / "run.cfg", "corpus=" + fx.corpus.string() + "\nband=(1,5]\nout=" +
                                         (tmp.path / "out").string() + "\n");
    auto r = run_bin(tmp, "extract-list --config " + (tmp.path / "run.cfg").string() +
                              " --band \"(0,1]\"");
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(tmp.path / "out" / "list.tsv") == "warfarin\t1\n");
}

TEST_CASE("binary: corpus errors carry the line number and fail the command") {
    TempDir tmp("binbad");
    write_file(tmp.path / "bad.txt", "u1\tmissing tab separator is fine actually\nbroken-line\n");
    auto r = run_bin(tmp, "stats --corpus " + (tmp.path / "bad.txt").string() + " --out " +
                              (tmp.path / "out").string());
    CHECK(r.exit_code != 0);
    CHECK(r.err.find(":2") != std::string::npos);
    CHECK(r.err.find("stats") != std::string::npos);
}

TEST_CASE("binary: unsegmentable rare words are reported on stderr") {
    TempDir tmp("binwarn");
    // Corpus uses suffix pieces that greedy segmentation cannot reproduce.
    write_file(tmp.path / "c.txt",
               std::string("u1\t") + testsupport::P("a") + " bxc\n" + "u2\t" + testsupport::P("ab") +
                   "\n");
    auto r = run_bin(tmp, "extract-list --corpus " + (tmp.path / "c.txt").string() + " --band 0,1 " +
                              "--out " + (tmp.path / "out").string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.err.find("unsegmentable") != std::string::npos);
    CHECK(r.err.find("abxc") != std::string::npos);
}

TEST_CASE("binary: missing subcommand or unknown flag fails with nonzero exit") {
    TempDir tmp("binusage");
    CHECK(run_bin(tmp, "").exit_code != 0);
    CHECK(run_bin(tmp, "frobnicate").exit_code != 0);
    CHECK(run_bin(tmp, "stats --no-such-flag x").exit_code != 0);
}

TEST_CASE("binary: PDBIAS_OUT provides the default output root") {
    TempDir tmp("binenv");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    const auto out = tmp.path / "via_env";
    const std::string cmd = "PDBIAS_OUT=" + out.string() + " " + PDBIAS_BIN + " extract-list" +
                            " --corpus " + fx.corpus.string() + " --band \"(0,1]\" >/dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(std::filesystem::exists(out / "list.tsv"));
}

TEST_CASE("pipeline runs with the auto schedule and intra-word counting") {
    TempDir tmp("autointra");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("schedule", "auto");
    cfg.set("convention", "replace");
    cfg.set("mode", "intra-word");
    auto outcome = cli::cmd_pipeline(cfg);
    CHECK(outcome.report.at("wer").is_number());

    auto matrix = TransformMatrix::load(tmp.path / "out" / "matrix.pdbm");
    CHECK(matrix.provenance.schedule == "auto(replace)");
    CHECK(matrix.provenance.convention == "replace");
    CHECK(matrix.provenance.counting_mode == "intra-word");
    CHECK(matrix.provenance.boost_factor == 100);
    for (std::uint32_t i = 0; i < matrix.dim; ++i) {
        double sum = 0.0;
        for (std::uint32_t j = 0; j < matrix.dim; ++j) sum += matrix.at(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }

    // All counts sit at or below 100, so the literal schedule gives every
    // connected row a replacement probability of exactly 0.09.
    auto report = slurp_json(tmp.path / "out" / "report.json");
    CHECK(report.at("config_hash") == cfg.config_hash());
    auto loaded = load_corpus(fx.corpus);
    const TokenId rant = *loaded.vocab.id_of("rant");
    CHECK(matrix.at(rant, rant) == 1.0 - 0.09);
}

TEST_CASE("stats covers the degenerate corpora") {
    TempDir tmp("statsedge");
    write_file(tmp.path / "empty.txt", "");
    RunConfig cfg;
    cfg.set("corpus", (tmp.path / "empty.txt").string());
    cfg.set("out", (tmp.path / "out").string());
    auto empty = cli::cmd_stats(cfg);
    for (const auto& b : empty.report.at("bands")) CHECK(b.at("unique") == 0);
    CHECK(empty.report.at("total_words") == 0);

    // One word repeated fifteen times lands only in (10,20].
    std::string corpus;
    for (int i = 0; i < 15; ++i)
        corpus += "u" + std::to_string(i) + "\t" + testsupport::P("word") + "\n";
    write_file(tmp.path / "one.txt", corpus);
    cfg.set("corpus", (tmp.path / "one.txt").string());
    auto single = cli::cmd_stats(cfg);
    CHECK(band_entry(single.report, "(10,20]").at("unique") == 1);
    CHECK(band_entry(single.report, "(10,20]").at("occurrences") == 15);
    CHECK(band_entry(single.report, "(5,10]").at("unique") == 0);
    CHECK(band_entry(single.report, "(1,5]").at("unique") == 0);
    CHECK(band_entry(single.report, "(0,1]").at("unique") == 0);
    CHECK(single.report.at("histogram").at("15") == 1);
}

TEST_CASE("an explicit vocabulary file constrains corpus loading") {
    TempDir tmp("vocabfile");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    Vocabulary v({testsupport::P("take"), testsupport::P("war"), "rant", "den", "farin"});
    v.save(tmp.path / "vocab.txt");
    RunConfig cfg;
    cfg.set("corpus", fx.corpus.string());
    cfg.set("vocab", (tmp.path / "vocab.txt").string());
    cfg.set("band", "(0,1]");
    cfg.set("out", (tmp.path / "out").string());
    auto outcome = cli::cmd_extract_list(cfg);
    CHECK(outcome.report.at("words") == 1);

    // A corpus token missing from the vocabulary is an error naming it.
    write_file(tmp.path / "strange.txt", "u1\t" + testsupport::P("war") + " unknowntoken\n");
    cfg.set("corpus", (tmp.path / "strange.txt").string());
    try {
        cli::cmd_extract_list(cfg);
        FAIL("expected unknown-token error");
    } catch (const cli::StageError& e) {
        CHECK(std::string(e.what()).find("unknowntoken") != std::string::npos);
    }
}

TEST_CASE("sweep records per-factor failures and keeps going") {
    TempDir tmp("sweepfail");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    auto cfg = flip_config(fx, tmp.path / "out");
    cfg.set("tensor", (tmp.path / "gone.pdbt").string());
    cfg.set("factors", "1,100");
    auto outcome = cli::cmd_sweep(cfg);
    const auto& rows = outcome.report.at("factors");
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        REQUIRE(row.contains("error"));
        CHECK(row.at("error").get<std::string>().find("bias") != std::string::npos);
    }
    CHECK(std::filesystem::exists(tmp.path / "out" / "sweep.json"));
}

TEST_CASE("decode_greedy rejects a vocabulary of the wrong size") {
    auto loaded = testsupport::make_corpus({{testsupport::P("a"), "b"}});
    auto t = testsupport::make_tensor({{{0.5, 0.3, 0.2}}}, {"x"}, 3);
    CHECK_THROWS(decode_greedy(t, loaded.vocab));
}

TEST_CASE("score accepts externally produced hypothesis files") {
    TempDir tmp("scorefile");
    auto fx = testsupport::write_flip_fixture(tmp.path);
    write_file(tmp.path / "external_hyps.txt", "e1\ttake warfarin\n");
    RunConfig cfg;
    cfg.set("corpus", fx.corpus.string());
    cfg.set("refs", fx.refs.string());
    cfg.set("hyp_source", "file");
    cfg.set("hyps", (tmp.path / "external_hyps.txt").string());
    cfg.set("out", (tmp.path / "out").string());
    auto outcome = cli::cmd_score(cfg);
    CHECK(outcome.report.at("wer").get<double>() == 0.0);
    CHECK(band_entry(outcome.report, "(0,1]").at("rwer").get<double>() == 0.0);

    // A reference without a hypothesis is an error.
    write_file(tmp.path / "extra_refs.txt", "e1\ttake warfarin\ne2\tmore words\n");
    cfg.set("refs", (tmp.path / "extra_refs.txt").string());
    CHECK_THROWS(cli::cmd_score(cfg));
}
