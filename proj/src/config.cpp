#include "maialab/config.hpp"

#include <cstdlib>
#include <ctime>

#include <nlohmann/json.hpp>

#include "maialab/common.hpp"
#include "maialab/io.hpp"

namespace maialab::cli {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset
// ---------------------------------------------------------------------------

namespace {

TomlValue parse_scalar(const std::string& raw, int line_no) {
    TomlValue value;
    const std::string t = trim(raw);
    if (t.empty()) fail("ConfigError", "empty value at line " + std::to_string(line_no));
    if (t.front() == '"' || t.front() == '\'') {
        if (t.size() < 2 || t.back() != t.front())
            fail("ConfigError", "unterminated string at line " + std::to_string(line_no));
        value.kind = TomlValue::Kind::string;
        value.string_value = t.substr(1, t.size() - 2);
        return value;
    }
    if (t == "true" || t == "false") {
        value.kind = TomlValue::Kind::boolean;
        value.bool_value = t == "true";
        return value;
    }
    const bool looks_real = t.find('.') != std::string::npos || t.find('e') != std::string::npos ||
                            t.find('E') != std::string::npos;
    try {
        size_t used = 0;
        if (looks_real) {
            value.kind = TomlValue::Kind::real;
            value.real_value = std::stod(t, &used);
        } else {
            value.kind = TomlValue::Kind::integer;
            value.int_value = std::stoll(t, &used);
        }
        if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
        fail("ConfigError", "unparseable value '" + t + "' at line " + std::to_string(line_no));
    }
    return value;
}

}  // namespace

std::map<std::string, TomlValue> parse_toml(const std::string& text) {
    std::map<std::string, TomlValue> table;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                fail("ConfigError", "malformed section header at line " + std::to_string(line_no));
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            fail("ConfigError", "expected key = value at line " + std::to_string(line_no));
        std::string key = trim(t.substr(0, eq));
        if (key.empty()) fail("ConfigError", "empty key at line " + std::to_string(line_no));
        if (!section.empty()) key = section + "." + key;
        const std::string raw = trim(t.substr(eq + 1));
        if (!raw.empty() && raw.front() == '[') {
            if (raw.back() != ']')
                fail("ConfigError", "unterminated array at line " + std::to_string(line_no));
            TomlValue value;
            value.kind = TomlValue::Kind::array;
            std::string inner = raw.substr(1, raw.size() - 2);
            std::istringstream items(inner);
            std::string item;
            while (std::getline(items, item, ',')) {
                const TomlValue scalar = parse_scalar(item, line_no);
                value.array_value.push_back(scalar.kind == TomlValue::Kind::string
                                                ? scalar.string_value
                                                : trim(item));
            }
            table[key] = std::move(value);
            continue;
        }
        table[key] = parse_scalar(raw, line_no);
    }
    return table;
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

namespace {

std::string toml_string(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::string)
        fail("ConfigError", "key '" + key + "' must be a string");
    return v.string_value;
}

std::int64_t toml_int(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::integer)
        fail("ConfigError", "key '" + key + "' must be an integer");
    return v.int_value;
}

bool toml_bool(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::boolean)
        fail("ConfigError", "key '" + key + "' must be a boolean");
    return v.bool_value;
}

}  // namespace

RunConfig RunConfig::from_toml(const std::string& text) {
    RunConfig config;
    for (const auto& [key, value] : parse_toml(text)) {
        if (key == "clients.generator") config.generator = toml_string(value, key);
        else if (key == "clients.editor") config.editor = toml_string(value, key);
        else if (key == "clients.describer") config.describer = toml_string(value, key);
        else if (key == "clients.summarizer") config.summarizer = toml_string(value, key);
        else if (key == "backbone") config.backbone = toml_string(value, key);
        else if (key == "playbook") config.playbook = toml_string(value, key);
        else if (key == "seed") config.seed = static_cast<std::uint64_t>(toml_int(value, key));
        else if (key == "round_budget") config.round_budget = static_cast<int>(toml_int(value, key));
        else if (key == "ablation.exemplars_enabled")
            config.exemplars_enabled = toml_bool(value, key);
        else if (key == "ablation.generation_enabled")
            config.generation_enabled = toml_bool(value, key);
        else if (key == "corpus_size")
            config.corpus_size = static_cast<size_t>(toml_int(value, key));
        else if (key == "dataset_path") config.dataset_path = toml_string(value, key);
        else if (key == "out_dir") config.out_dir = toml_string(value, key);
        else if (key == "cache_dir") config.cache_dir = toml_string(value, key);
        else if (key == "concurrency") config.concurrency = static_cast<int>(toml_int(value, key));
        else
            fail("ConfigError", "unknown config key '" + key + "'");
    }
    config.validate();
    return config;
}

RunConfig RunConfig::from_toml_file(const std::filesystem::path& path) {
    const auto text = io::read_file(path);
    if (!text) fail("ConfigError", "cannot read config file " + path.string());
    return from_toml(*text);
}

void RunConfig::apply_env_overrides() {
    auto env = [](const char* name) -> std::optional<std::string> {
        const char* value = std::getenv(name);
        if (!value) return std::nullopt;
        return std::string(value);
    };
    if (auto v = env("MAIALAB_SEED")) seed = std::stoull(*v);
    if (auto v = env("MAIALAB_BACKBONE")) backbone = *v;
    if (auto v = env("MAIALAB_PLAYBOOK")) playbook = *v;
    if (auto v = env("MAIALAB_BUDGET")) round_budget = std::stoi(*v);
    if (auto v = env("MAIALAB_OUT_DIR")) out_dir = *v;
    if (auto v = env("MAIALAB_CACHE_DIR")) cache_dir = *v;
    if (auto v = env("MAIALAB_CORPUS_SIZE")) corpus_size = std::stoull(*v);
    if (auto v = env("MAIALAB_CONCURRENCY")) concurrency = std::stoi(*v);
    if (auto v = env("MAIALAB_GENERATOR")) generator = *v;
    validate();
}

void RunConfig::validate() const {
    if (round_budget < 1 || round_budget > 50)
        fail("ConfigError", "round_budget must lie in [1, 50]");
    if (concurrency < 1) fail("ConfigError", "concurrency must be at least 1");
    if (!exemplars_enabled && !generation_enabled)
        fail("ConfigError", "at least one of exemplars/generation must stay enabled");
    if (corpus_size < 15) fail("ConfigError", "corpus_size must be at least 15");
}

std::string RunConfig::to_json() const {
    json j;
    j["clients"] = {{"generator", generator},
                    {"editor", editor},
                    {"describer", describer},
                    {"summarizer", summarizer}};
    j["backbone"] = backbone;
    j["playbook"] = playbook;
    j["seed"] = seed;
    j["round_budget"] = round_budget;
    j["ablation"] = {{"exemplars_enabled", exemplars_enabled},
                     {"generation_enabled", generation_enabled}};
    j["corpus_size"] = corpus_size;
    j["dataset_path"] = dataset_path;
    j["out_dir"] = out_dir;
    j["cache_dir"] = cache_dir;
    j["concurrency"] = concurrency;
    return j.dump(2);
}

std::uint64_t RunConfig::config_hash() const {
    // canonical serialization sorts keys, so source ordering cannot matter;
    // output and cache locations do not change what a run computes
    json j = json::parse(to_json());
    j.erase("out_dir");
    j.erase("cache_dir");
    return hash_of(j.dump());
}

// ---------------------------------------------------------------------------
// RunManifest
// ---------------------------------------------------------------------------

std::string iso_timestamp_now() {
    std::time_t now = std::time(nullptr);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buffer;
}

std::string RunManifest::to_json() const {
    json j;
    j["run_id"] = run_id;
    j["config_hash"] = config_hash;
    j["resolved_config"] = json::parse(resolved_config_json.empty() ? "{}" : resolved_config_json);
    j["clients"] = json::parse(clients_json.empty() ? "{}" : clients_json);
    j["artifacts"] = artifacts;
    j["tool_calls"] = tool_calls;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j.dump(2);
}

void RunManifest::write(const std::filesystem::path& run_dir) const {
    for (const auto& artifact : artifacts)
        if (!std::filesystem::exists(run_dir / artifact))
            fail("IoError", "manifest lists missing artifact " + artifact);
    io::atomic_write_file(run_dir / "manifest.json", to_json());
}

}  // namespace maialab::cli
