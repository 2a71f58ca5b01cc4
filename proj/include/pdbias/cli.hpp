#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pdbias/biasing.hpp"
#include "pdbias/transform.hpp"

// Command-line front end: flat key=value run configuration, the eight
// subcommands, and the staged pipeline with rollback of partial outputs.

namespace pdbias::cli {

// Flat key=value configuration. `#` starts a comment line, the first `=`
// splits key from value, surrounding whitespace is trimmed. Flag
// overrides land in the same map, so a config round-trips losslessly
// through canonical().
class RunConfig {
public:
    RunConfig() = default;

    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get(const std::string& key) const;  // throws when absent
    std::string get_or(const std::string& key, const std::string& fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    // Sorted `key=value` lines; parsing them reproduces this config.
    std::string canonical() const;
    // FNV-1a of canonical(), as 16 hex digits; stamped into artifacts.
    std::string config_hash() const;

    // Key "out", else $PDBIAS_OUT, else ".".
    std::filesystem::path out_dir() const;
    // Explicit path from `key`, else out_dir()/default_name.
    std::filesystem::path artifact_path(const std::string& key, const std::string& default_name) const;

    FrequencyBand band() const;
    CountingMode counting_mode() const;
    ReplacementSchedule schedule() const;
    TransformOptions transform_options() const;
    std::string marker() const;
    std::vector<std::uint64_t> factors() const;

private:
    std::map<std::string, std::string> values_;
};

// Errors thrown by stages, tagged with the stage name for diagnostics.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message)
        : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// Every command returns the files it (re)wrote, so callers can fingerprint
// them or roll them back on failure.
struct CommandOutcome {
    std::vector<std::filesystem::path> written;
    nlohmann::json report;  // command-specific; may be null
};

CommandOutcome cmd_stats(const RunConfig& config);
CommandOutcome cmd_extract_list(const RunConfig& config);
CommandOutcome cmd_build_matrix(const RunConfig& config);
CommandOutcome cmd_train_linear(const RunConfig& config);
CommandOutcome cmd_bias(const RunConfig& config);
CommandOutcome cmd_score(const RunConfig& config);
CommandOutcome cmd_pipeline(const RunConfig& config);
CommandOutcome cmd_sweep(const RunConfig& config);

// Full argv entry point used by the pdbias binary. Returns the process
// exit code; diagnostics go to stderr tagged with the failing stage.
int run(int argc, const char* const* argv);

}  // namespace pdbias::cli
