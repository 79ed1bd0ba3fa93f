#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "maialab/neurons.hpp"

namespace maialab::tools {

using neurons::ImageHandle;
using neurons::System;

// ---------------------------------------------------------------------------
// Client interfaces (wire-agnostic). Hosted backends implement these; the
// desk-scale defaults run on the scene substrate and are fully deterministic.
// ---------------------------------------------------------------------------

class GeneratorClient {
public:
    virtual ~GeneratorClient() = default;
    virtual std::vector<ImageHandle> generate(const std::vector<std::string>& prompts,
                                              std::uint64_t seed) = 0;
};

class EditorClient {
public:
    virtual ~EditorClient() = default;
    virtual ImageHandle edit(const ImageHandle& image, const std::string& instruction) = 0;
};

/// Describers must be history-free: one call per image, no transcript state.
class DescriberClient {
public:
    virtual ~DescriberClient() = default;
    virtual std::string describe(const ImageHandle& image) = 0;
};

class SummarizerClient {
public:
    virtual ~SummarizerClient() = default;
    virtual std::string summarize(const std::vector<ImageHandle>& images) = 0;
};

struct ClientSet {
    std::shared_ptr<GeneratorClient> generator;
    std::shared_ptr<EditorClient> editor;
    std::shared_ptr<DescriberClient> describer;
    std::shared_ptr<SummarizerClient> summarizer;
    std::string generator_key, editor_key, describer_key, summarizer_key;
};

/// Keyed client factories per role, each declaring determinism for the run
/// manifest.
class ClientRegistry {
public:
    template <typename Client>
    struct Entry {
        bool deterministic = true;
        std::function<std::shared_ptr<Client>()> factory;
    };

    void register_generator(const std::string& key, bool deterministic,
                            std::function<std::shared_ptr<GeneratorClient>()> factory);
    void register_editor(const std::string& key, bool deterministic,
                         std::function<std::shared_ptr<EditorClient>()> factory);
    void register_describer(const std::string& key, bool deterministic,
                            std::function<std::shared_ptr<DescriberClient>()> factory);
    void register_summarizer(const std::string& key, bool deterministic,
                             std::function<std::shared_ptr<SummarizerClient>()> factory);

    ClientSet make_clients(const std::string& generator_key, const std::string& editor_key,
                           const std::string& describer_key,
                           const std::string& summarizer_key) const;

    bool has_generator(const std::string& key) const { return generators_.count(key) > 0; }

    /// {"generator": {"scene": {"deterministic": true}}, ...} as a JSON string.
    std::string manifest_json() const;

    /// Scene-substrate defaults under the key "scene", a placement-variant
    /// generator under "scene-v2", and hosted interface stubs under "hosted".
    static ClientRegistry with_defaults(const scene::ConceptVocabulary* vocab = nullptr);

private:
    std::map<std::string, Entry<GeneratorClient>> generators_;
    std::map<std::string, Entry<EditorClient>> editors_;
    std::map<std::string, Entry<DescriberClient>> describers_;
    std::map<std::string, Entry<SummarizerClient>> summarizers_;
    std::map<std::string, bool> determinism_;  // "role/key" -> deterministic
};

// ---------------------------------------------------------------------------
// Experiment log.
// ---------------------------------------------------------------------------

struct LogRecord {
    std::string title;
    double reported_activation = 0.0;
    std::string image_ref;  // stable image id; PNG path once persisted by a run
    ImageHandle image;      // in-memory handle (not serialized)
};

struct LogEntry {
    int round_index = 0;       // strictly increasing per entry
    int session_round = 0;     // agent round that produced the entry
    std::string program_source;
    std::vector<LogRecord> records;
    std::string notes;
};

// ---------------------------------------------------------------------------
// ToolContext: one per session, single-writer.
// ---------------------------------------------------------------------------

extern const std::set<std::string> kAllTools;

struct ToolContext {
    ClientSet clients;
    std::set<std::string> enabled_tools = kAllTools;
    std::optional<double> activation_threshold;  // set by dataset_exemplars
    std::string run_id;
    std::uint64_t seed = 0;
    size_t batch_cap = 16;

    // exemplar source for the bound dataset
    std::shared_ptr<const std::vector<ImageHandle>> dataset;
    size_t exemplar_k = 15;
    std::string exemplar_cache_dir;

    // session state stamped by the agent runtime
    int current_round = 0;
    std::string current_program;

    std::vector<LogEntry> log;
    std::filesystem::path log_path;  // when nonempty, entries append as JSONL

    std::map<std::string, std::uint64_t> client_dispatches;  // role -> count

    bool tool_enabled(const std::string& name) const { return enabled_tools.count(name) > 0; }
};

// ---------------------------------------------------------------------------
// The tools the agent programs against.
// ---------------------------------------------------------------------------

struct ExemplarReply {
    std::vector<double> activations;  // reported values, descending
    std::vector<ImageHandle> images;  // masked evidence images
};

/// Returns the top-k exemplars for the bound dataset and pins
/// ctx.activation_threshold to the set's floor. Idempotent.
ExemplarReply dataset_exemplars(ToolContext& ctx, const System& system);

std::vector<ImageHandle> text2image(ToolContext& ctx, const std::vector<std::string>& prompts);

struct EditReply {
    std::vector<ImageHandle> all_images;   // [orig1, edited1, orig2, edited2, ...]
    std::vector<std::string> all_titles;   // prompt / instruction, interleaved the same way
};

/// Lints instructions before dispatch: removal phrasing is rejected without
/// touching any client.
EditReply edit_images(ToolContext& ctx, const std::vector<std::string>& prompts,
                      const std::vector<std::string>& edits);

std::string describe_images(ToolContext& ctx, const std::vector<ImageHandle>& images,
                            const std::vector<std::string>& titles);

std::string summarize_images(ToolContext& ctx, const std::vector<ImageHandle>& images);

void log_experiment(ToolContext& ctx, const std::vector<double>& activations,
                    const std::vector<ImageHandle>& images, const std::vector<std::string>& titles,
                    const std::string& notes);

/// Reloads persisted entries (records carry refs, not pixels).
std::vector<LogEntry> load_log(const std::filesystem::path& path);

/// Deterministic reference corpus over the vocabulary: a hash-driven mix of
/// single-concept scenes, random pairs, and roster pairs (so disjunctive and
/// conditional behaviors have co-occurring exemplars, as real-world corpora
/// do).
std::vector<ImageHandle> make_synthetic_corpus(const scene::ConceptVocabulary& vocab, size_t count,
                                               std::uint64_t seed);

}  // namespace maialab::tools
