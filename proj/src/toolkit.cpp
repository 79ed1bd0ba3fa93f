#include "maialab/toolkit.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "maialab/io.hpp"

namespace maialab::tools {

using nlohmann::json;

const std::set<std::string> kAllTools = {"dataset_exemplars", "text2image",     "edit_images",
                                         "describe_images",   "summarize_images", "log_experiment"};

// ---------------------------------------------------------------------------
// Scene-substrate default clients
// ---------------------------------------------------------------------------

namespace {

const scene::ConceptVocabulary& vocab_or_default(const scene::ConceptVocabulary* vocab) {
    return vocab ? *vocab : scene::default_vocabulary();
}

class SceneGenerator final : public GeneratorClient {
public:
    SceneGenerator(const scene::ConceptVocabulary* vocab, std::uint64_t salt)
        : vocab_(vocab), salt_(salt) {}

    std::vector<ImageHandle> generate(const std::vector<std::string>& prompts,
                                      std::uint64_t seed) override {
        std::vector<ImageHandle> out;
        out.reserve(prompts.size());
        for (const auto& prompt : prompts)
            out.push_back(neurons::handle_from_scene(
                scene::generate_scene(vocab_or_default(vocab_), prompt, seed ^ salt_)));
        return out;
    }

private:
    const scene::ConceptVocabulary* vocab_;
    std::uint64_t salt_;
};

class SceneEditor final : public EditorClient {
public:
    explicit SceneEditor(const scene::ConceptVocabulary* vocab) : vocab_(vocab) {}

    ImageHandle edit(const ImageHandle& image, const std::string& instruction) override {
        if (!image.has_scene()) fail("EditFailed", "editor needs scene-backed images");
        return neurons::handle_from_scene(
            scene::edit_scene(vocab_or_default(vocab_), *image.scene_data, instruction));
    }

private:
    const scene::ConceptVocabulary* vocab_;
};

class SceneDescriber final : public DescriberClient {
public:
    std::string describe(const ImageHandle& image) override {
        if (!image.has_scene()) return "unstructured image content";
        return scene::caption_regions(*image.scene_data, image.evidence_mask.get());
    }
};

class SceneSummarizer final : public SummarizerClient {
public:
    std::string summarize(const std::vector<ImageHandle>& images) override {
        std::vector<scene::SceneImage> scenes;
        std::vector<const scene::Mask*> masks;
        for (const auto& image : images) {
            if (!image.has_scene()) fail("BackendError", "summarizer needs scene-backed images");
            scenes.push_back(*image.scene_data);
            masks.push_back(image.evidence_mask.get());
        }
        return scene::summarize_common(scenes, masks);
    }
};

[[noreturn]] void hosted_unconfigured(const std::string& role) {
    fail("ClientUnavailable", "hosted " + role + " client is an interface stub; configure a real "
                              "backend or use the deterministic 'scene' client");
}

class HostedGeneratorStub final : public GeneratorClient {
    std::vector<ImageHandle> generate(const std::vector<std::string>&, std::uint64_t) override {
        hosted_unconfigured("generator");
    }
};
class HostedEditorStub final : public EditorClient {
    ImageHandle edit(const ImageHandle&, const std::string&) override {
        hosted_unconfigured("editor");
    }
};
class HostedDescriberStub final : public DescriberClient {
    std::string describe(const ImageHandle&) override { hosted_unconfigured("describer"); }
};
class HostedSummarizerStub final : public SummarizerClient {
    std::string summarize(const std::vector<ImageHandle>&) override {
        hosted_unconfigured("summarizer");
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// ClientRegistry
// ---------------------------------------------------------------------------

void ClientRegistry::register_generator(const std::string& key, bool deterministic,
                                        std::function<std::shared_ptr<GeneratorClient>()> factory) {
    generators_[key] = {deterministic, std::move(factory)};
    determinism_["generator/" + key] = deterministic;
}

void ClientRegistry::register_editor(const std::string& key, bool deterministic,
                                     std::function<std::shared_ptr<EditorClient>()> factory) {
    editors_[key] = {deterministic, std::move(factory)};
    determinism_["editor/" + key] = deterministic;
}

void ClientRegistry::register_describer(const std::string& key, bool deterministic,
                                        std::function<std::shared_ptr<DescriberClient>()> factory) {
    describers_[key] = {deterministic, std::move(factory)};
    determinism_["describer/" + key] = deterministic;
}

void ClientRegistry::register_summarizer(
    const std::string& key, bool deterministic,
    std::function<std::shared_ptr<SummarizerClient>()> factory) {
    summarizers_[key] = {deterministic, std::move(factory)};
    determinism_["summarizer/" + key] = deterministic;
}

namespace {
template <typename Map>
const auto& lookup(const Map& map, const std::string& key, const char* role) {
    auto it = map.find(key);
    if (it == map.end())
        fail("UnknownClient", std::string(role) + " client '" + key + "' is not registered");
    return it->second;
}
}  // namespace

ClientSet ClientRegistry::make_clients(const std::string& generator_key,
                                       const std::string& editor_key,
                                       const std::string& describer_key,
                                       const std::string& summarizer_key) const {
    ClientSet set;
    set.generator = lookup(generators_, generator_key, "generator").factory();
    set.editor = lookup(editors_, editor_key, "editor").factory();
    set.describer = lookup(describers_, describer_key, "describer").factory();
    set.summarizer = lookup(summarizers_, summarizer_key, "summarizer").factory();
    set.generator_key = generator_key;
    set.editor_key = editor_key;
    set.describer_key = describer_key;
    set.summarizer_key = summarizer_key;
    return set;
}

std::string ClientRegistry::manifest_json() const {
    json j = json::object();
    for (const auto& [role_key, deterministic] : determinism_) {
        const size_t slash = role_key.find('/');
        j[role_key.substr(0, slash)][role_key.substr(slash + 1)] = {
            {"deterministic", deterministic}};
    }
    return j.dump(2);
}

ClientRegistry ClientRegistry::with_defaults(const scene::ConceptVocabulary* vocab) {
    ClientRegistry registry;
    registry.register_generator("scene", true,
                                [vocab] { return std::make_shared<SceneGenerator>(vocab, 0); });
    // placement-variant generator for tool-swap ablations
    registry.register_generator("scene-v2", true, [vocab] {
        return std::make_shared<SceneGenerator>(vocab, 0x5CEAE5A17ULL);
    });
    registry.register_editor("scene", true, [vocab] { return std::make_shared<SceneEditor>(vocab); });
    registry.register_describer("scene", true, [] { return std::make_shared<SceneDescriber>(); });
    registry.register_summarizer("scene", true, [] { return std::make_shared<SceneSummarizer>(); });
    registry.register_generator("hosted", false, [] { return std::make_shared<HostedGeneratorStub>(); });
    registry.register_editor("hosted", false, [] { return std::make_shared<HostedEditorStub>(); });
    registry.register_describer("hosted", false, [] { return std::make_shared<HostedDescriberStub>(); });
    registry.register_summarizer("hosted", false,
                                 [] { return std::make_shared<HostedSummarizerStub>(); });
    return registry;
}

// ---------------------------------------------------------------------------
// Tool operations
// ---------------------------------------------------------------------------

namespace {

void require_enabled(const ToolContext& ctx, const std::string& tool) {
    if (!ctx.tool_enabled(tool)) fail("ToolDisabled", tool + " is disabled in this session");
}

void count_dispatch(ToolContext& ctx, const std::string& role, std::uint64_t n = 1) {
    ctx.client_dispatches[role] += n;
}

json log_entry_to_json(const LogEntry& entry) {
    json j;
    j["round_index"] = entry.round_index;
    j["session_round"] = entry.session_round;
    j["program_source"] = entry.program_source;
    j["records"] = json::array();
    for (const auto& record : entry.records)
        j["records"].push_back({{"title", record.title},
                                {"reported_activation", record.reported_activation},
                                {"image_ref", record.image_ref}});
    j["notes"] = entry.notes;
    return j;
}

}  // namespace

ExemplarReply dataset_exemplars(ToolContext& ctx, const System& system) {
    require_enabled(ctx, "dataset_exemplars");
    if (!ctx.dataset) fail("NoDatasetBound", "no exemplar dataset is bound to this context");
    count_dispatch(ctx, "exemplars");
    const neurons::ExemplarSet set =
        neurons::build_exemplar_index(system, *ctx.dataset, ctx.exemplar_k, ctx.exemplar_cache_dir);
    ExemplarReply reply;
    for (const auto& record : set.records) {
        reply.activations.push_back(record.image.reported_activation.value_or(record.activation));
        reply.images.push_back(record.image);
    }
    ctx.activation_threshold = set.activation_floor;
    return reply;
}

std::vector<ImageHandle> text2image(ToolContext& ctx, const std::vector<std::string>& prompts) {
    require_enabled(ctx, "text2image");
    if (prompts.empty()) fail("InsufficientInput", "text2image needs at least one prompt");
    if (prompts.size() > ctx.batch_cap)
        fail("BatchTooLarge", "text2image got " + std::to_string(prompts.size()) +
                                  " prompts; the batch cap is " + std::to_string(ctx.batch_cap));
    count_dispatch(ctx, "generator");
    try {
        std::vector<ImageHandle> images = ctx.clients.generator->generate(prompts, ctx.seed);
        for (size_t i = 0; i < images.size() && i < prompts.size(); ++i)
            images[i].title = prompts[i];
        return images;
    } catch (const Error& e) {
        if (e.code() == "InvalidPrompt")
            fail("GenerationFailed", std::string("generator rejected a prompt: ") + e.what());
        throw;
    }
}

EditReply edit_images(ToolContext& ctx, const std::vector<std::string>& prompts,
                      const std::vector<std::string>& edits) {
    require_enabled(ctx, "edit_images");
    if (prompts.size() != edits.size())
        fail("ArityError", "edit_images needs aligned prompt and edit lists");
    if (prompts.empty()) fail("InsufficientInput", "edit_images needs at least one pair");
    if (prompts.size() > ctx.batch_cap) fail("BatchTooLarge", "edit batch exceeds the cap");

    // lint all instructions before any client dispatch
    for (const auto& edit : edits) {
        const auto tokens = word_tokens(edit);
        if (!tokens.empty() &&
            (tokens[0] == "remove" || tokens[0] == "delete" || tokens[0] == "erase"))
            fail("NegativeEditRejected", "instruction '" + edit +
                                             "' uses removal phrasing; phrase edits as "
                                             "\"replace ... with ...\"");
    }

    EditReply reply;
    for (size_t i = 0; i < prompts.size(); ++i) {
        count_dispatch(ctx, "generator");
        std::vector<ImageHandle> original;
        try {
            original = ctx.clients.generator->generate({prompts[i]}, ctx.seed);
        } catch (const Error& e) {
            fail("GenerationFailed", "prompt '" + prompts[i] + "': " + e.what());
        }
        if (original.size() != 1) fail("GenerationFailed", "generator returned a bad batch");
        original[0].title = prompts[i];

        count_dispatch(ctx, "editor");
        ImageHandle edited;
        try {
            edited = ctx.clients.editor->edit(original[0], edits[i]);
        } catch (const Error& e) {
            if (e.code() == "NegativeEditRejected") throw;
            fail("EditFailed", "item " + std::to_string(i) + " ('" + edits[i] + "'): " + e.what());
        }
        edited.title = edits[i];

        reply.all_images.push_back(std::move(original[0]));
        reply.all_images.push_back(std::move(edited));
        reply.all_titles.push_back(prompts[i]);
        reply.all_titles.push_back(edits[i]);
    }
    return reply;
}

std::string describe_images(ToolContext& ctx, const std::vector<ImageHandle>& images,
                            const std::vector<std::string>& titles) {
    require_enabled(ctx, "describe_images");
    if (images.size() != titles.size())
        fail("ArityError", "describe_images needs aligned image and title lists");
    if (images.empty()) fail("InsufficientInput", "describe_images needs at least one image");
    std::string out;
    for (size_t i = 0; i < images.size(); ++i) {
        // fresh dispatch per image; the describer never sees transcript state
        count_dispatch(ctx, "describer");
        const std::string description = ctx.clients.describer->describe(images[i]);
        if (!out.empty()) out += "\n";
        out += titles[i] + ": " + description;
    }
    return out;
}

std::string summarize_images(ToolContext& ctx, const std::vector<ImageHandle>& images) {
    require_enabled(ctx, "summarize_images");
    if (images.size() < 2) fail("InsufficientInput", "summarize_images needs at least 2 images");
    count_dispatch(ctx, "summarizer");
    return ctx.clients.summarizer->summarize(images);
}

void log_experiment(ToolContext& ctx, const std::vector<double>& activations,
                    const std::vector<ImageHandle>& images, const std::vector<std::string>& titles,
                    const std::string& notes) {
    require_enabled(ctx, "log_experiment");
    if (activations.size() != images.size() || images.size() != titles.size())
        fail("ArityError", "log_experiment needs aligned activations, images, and titles");

    LogEntry entry;
    entry.round_index = ctx.log.empty() ? 1 : ctx.log.back().round_index + 1;
    entry.session_round = ctx.current_round;
    entry.program_source = ctx.current_program;
    for (size_t i = 0; i < images.size(); ++i) {
        LogRecord record;
        record.title = titles[i];
        record.reported_activation = activations[i];
        record.image_ref = images[i].id();
        record.image = images[i];
        entry.records.push_back(std::move(record));
    }
    entry.notes = notes;

    if (!ctx.log_path.empty()) {
        if (ctx.log_path.has_parent_path()) io::ensure_dirs(ctx.log_path.parent_path());
        std::ofstream out(ctx.log_path, std::ios::app);
        if (!out) fail("IoError", "cannot append to " + ctx.log_path.string());
        out << log_entry_to_json(entry).dump() << "\n";
    }
    ctx.log.push_back(std::move(entry));
}

std::vector<ImageHandle> make_synthetic_corpus(const scene::ConceptVocabulary& vocab, size_t count,
                                               std::uint64_t seed) {
    std::vector<std::string> singles(vocab.canonical_tokens().begin(),
                                     vocab.canonical_tokens().end());
    std::vector<std::pair<std::string, std::string>> roster_pairs;
    for (const auto& entry : neurons::default_roster()) {
        if (entry.spec.concept_b.empty()) continue;
        if (vocab.contains(entry.spec.concept_a) && vocab.contains(entry.spec.concept_b))
            roster_pairs.emplace_back(entry.spec.concept_a, entry.spec.concept_b);
    }

    std::vector<ImageHandle> corpus;
    corpus.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const std::uint64_t h = hash_mix(splitmix64(seed), splitmix64(i));
        const std::uint64_t mode = h % 10;
        std::string prompt;
        if (mode < 4 || roster_pairs.empty()) {
            prompt = "a photo of a " + singles[splitmix64(h + 1) % singles.size()];
        } else if (mode < 6) {
            const auto& a = singles[splitmix64(h + 2) % singles.size()];
            const auto& b = singles[splitmix64(h + 3) % singles.size()];
            prompt = "a photo of a " + a + " and a " + b;
        } else {
            const auto& [a, b] = roster_pairs[splitmix64(h + 4) % roster_pairs.size()];
            prompt = "a photo of a " + a + " and a " + b;
            if (splitmix64(h + 5) % 10 < 3)
                prompt += " and a " + singles[splitmix64(h + 6) % singles.size()];
        }
        corpus.push_back(neurons::handle_from_scene(
            scene::generate_scene(vocab, prompt, hash_mix(seed, i))));
    }
    return corpus;
}

std::vector<LogEntry> load_log(const std::filesystem::path& path) {
    std::vector<LogEntry> entries;
    std::ifstream in(path);
    if (!in) fail("IoError", "cannot read " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const json j = json::parse(line);
        LogEntry entry;
        entry.round_index = j.at("round_index").get<int>();
        entry.session_round = j.value("session_round", 0);
        entry.program_source = j.value("program_source", "");
        for (const auto& r : j.at("records")) {
            LogRecord record;
            record.title = r.at("title").get<std::string>();
            record.reported_activation = r.at("reported_activation").get<double>();
            record.image_ref = r.at("image_ref").get<std::string>();
            entry.records.push_back(std::move(record));
        }
        entry.notes = j.value("notes", "");
        entries.push_back(std::move(entry));
    }
    return entries;
}

}  // namespace maialab::tools
