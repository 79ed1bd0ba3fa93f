#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maialab/common.hpp"

namespace maialab::cli {

// ---------------------------------------------------------------------------
// Minimal TOML reader: [section] headers, key = value with string, integer,
// float, boolean, and flat-array values. Keys flatten to "section.key".
// ---------------------------------------------------------------------------

struct TomlValue {
    enum class Kind { string, integer, real, boolean, array } kind = Kind::string;
    std::string string_value;
    std::int64_t int_value = 0;
    double real_value = 0.0;
    bool bool_value = false;
    std::vector<std::string> array_value;
};

std::map<std::string, TomlValue> parse_toml(const std::string& text);

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

struct RunConfig {
    // client registry keys per role
    std::string generator = "scene";
    std::string editor = "scene";
    std::string describer = "scene";
    std::string summarizer = "scene";

    std::string backbone = "scripted";
    std::string playbook = "describe-default";

    std::uint64_t seed = 0;
    int round_budget = 15;
    bool exemplars_enabled = true;
    bool generation_enabled = true;

    size_t corpus_size = 1000;
    std::string dataset_path;  // external dataset bundle (adapter input)
    std::string out_dir = "runs/out";
    std::string cache_dir;
    int concurrency = 4;

    /// Parses the TOML subset; unknown keys are ConfigErrors.
    static RunConfig from_toml(const std::string& text);
    static RunConfig from_toml_file(const std::filesystem::path& path);

    /// Environment overrides with the MAIALAB_ prefix (MAIALAB_SEED=7, ...).
    void apply_env_overrides();

    /// Resolved config as canonical JSON (sorted keys) for the manifest.
    std::string to_json() const;

    /// Stable under key reordering in the source TOML.
    std::uint64_t config_hash() const;

    void validate() const;
};

// ---------------------------------------------------------------------------
// RunManifest
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::string resolved_config_json;
    std::string clients_json;  // registry determinism declarations
    std::vector<std::string> artifacts;  // paths relative to the run directory
    std::map<std::string, std::uint64_t> tool_calls;  // client role -> dispatches
    std::string started_at;
    std::string finished_at;

    std::string to_json() const;
    /// Writes manifest.json into the directory; every artifact listed must
    /// already exist there.
    void write(const std::filesystem::path& run_dir) const;
};

std::string iso_timestamp_now();

}  // namespace maialab::cli
