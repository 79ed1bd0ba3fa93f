#include "maialab/neurons.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "maialab/io.hpp"

namespace maialab::neurons {

using nlohmann::json;

// ---------------------------------------------------------------------------
// NeuronAddress
// ---------------------------------------------------------------------------

std::string NeuronAddress::to_string() const {
    return model_name + ":" + layer_id + ":" + std::to_string(unit_index);
}

NeuronAddress NeuronAddress::parse(const std::string& text) {
    const size_t first = text.find(':');
    const size_t second = first == std::string::npos ? std::string::npos : text.find(':', first + 1);
    if (first == std::string::npos || second == std::string::npos ||
        text.find(':', second + 1) != std::string::npos)
        fail("AddressError", "expected model:layer:unit, got '" + text + "'");
    NeuronAddress addr;
    addr.model_name = text.substr(0, first);
    addr.layer_id = text.substr(first + 1, second - first - 1);
    const std::string unit = text.substr(second + 1);
    if (addr.model_name.empty() || addr.layer_id.empty() || unit.empty() ||
        unit.find_first_not_of("0123456789") != std::string::npos)
        fail("AddressError", "expected model:layer:unit, got '" + text + "'");
    addr.unit_index = std::stoull(unit);
    return addr;
}

std::string kind_name(NeuronKind kind) {
    switch (kind) {
        case NeuronKind::monosemantic: return "monosemantic";
        case NeuronKind::polysemantic: return "polysemantic";
        case NeuronKind::conditional: return "conditional";
    }
    return "monosemantic";
}

NeuronKind kind_from_name(const std::string& name) {
    if (name == "monosemantic") return NeuronKind::monosemantic;
    if (name == "polysemantic") return NeuronKind::polysemantic;
    if (name == "conditional") return NeuronKind::conditional;
    fail("SchemaError", "unknown neuron kind '" + name + "'");
}

void SyntheticNeuronSpec::validate() const {
    if (concept_a.empty()) fail("SchemaError", "neuron spec needs concept_a");
    const bool needs_b = kind != NeuronKind::monosemantic;
    if (needs_b == concept_b.empty())
        fail("SchemaError", "concept_b must be present exactly when kind is not monosemantic");
    if (!(box_threshold > 0.0 && box_threshold < 1.0 && text_threshold > 0.0 && text_threshold < 1.0))
        fail("SchemaError", "thresholds must lie in (0,1)");
}

std::vector<std::string> SyntheticNeuronSpec::concepts() const {
    std::vector<std::string> out{concept_a};
    if (!concept_b.empty()) out.push_back(concept_b);
    return out;
}

// ---------------------------------------------------------------------------
// ImageHandle
// ---------------------------------------------------------------------------

std::string ImageHandle::id() const {
    if (scene_data) return scene_data->image_id;
    if (pixel_data) return hex64(content_hash());
    return "empty";
}

std::uint64_t ImageHandle::content_hash() const {
    if (scene_data) return hash_of(scene::scene_to_json(*scene_data));
    if (pixel_data) {
        std::uint64_t h = kFnvOffset;
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(pixel_data->rgb.data()),
                                     pixel_data->rgb.size()),
                    h);
        return splitmix64(hash_mix(h, hash_mix(static_cast<std::uint64_t>(pixel_data->width),
                                               static_cast<std::uint64_t>(pixel_data->height))));
    }
    return 0;
}

std::uint64_t ImageHandle::visual_hash() const {
    std::uint64_t h = content_hash();
    if (evidence_mask) {
        std::uint64_t m = fnv1a64(std::string_view(
            reinterpret_cast<const char*>(evidence_mask->data.data()), evidence_mask->data.size()));
        h = hash_mix(h, splitmix64(m));
    }
    return h;
}

scene::Pixels ImageHandle::to_pixels() const {
    if (scene_data) {
        if (evidence_mask) return scene::render_masked(*scene_data, *evidence_mask);
        return scene::render(*scene_data);
    }
    if (pixel_data) return *pixel_data;
    fail("BackendError", "empty image handle");
}

ImageHandle handle_from_scene(scene::SceneImage s) {
    ImageHandle h;
    h.scene_data = std::make_shared<const scene::SceneImage>(std::move(s));
    return h;
}

ImageHandle handle_from_pixels(scene::Pixels p) {
    ImageHandle h;
    h.pixel_data = std::make_shared<const scene::Pixels>(std::move(p));
    return h;
}

// ---------------------------------------------------------------------------
// Detection & synthetic semantics
// ---------------------------------------------------------------------------

namespace {

/// Box threshold realized as a minimum-area floor: 0.3 -> 0.3% of image area.
double min_area_floor(const SyntheticNeuronSpec& spec) { return spec.box_threshold * 0.01; }

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

std::optional<Detection> detect_concept(const scene::SceneImage& scene, const std::string& concept_token,
                                        const SyntheticNeuronSpec& spec,
                                        const scene::ConceptVocabulary& vocab) {
    auto canonical = vocab.normalize(concept_token);
    if (!canonical) fail("UnknownConcept", "'" + concept_token + "' is not in the vocabulary");
    Detection detection;
    for (const auto& region : scene.regions) {
        if (region.unknown || region.label != *canonical) continue;
        if (region.confidence < spec.text_threshold) continue;
        if (region.box.area() < min_area_floor(spec)) continue;
        detection.confidence = std::max(detection.confidence, region.confidence);
        detection.boxes.push_back(region.box);
    }
    if (detection.boxes.empty()) return std::nullopt;
    return detection;
}

scene::Mask detection_mask(const Detection& detection, int width, int height, int dilation_px) {
    return scene::rasterize_boxes(detection.boxes, width, height, dilation_px);
}

namespace {

struct RawActivation {
    double activation = 0.0;
    std::vector<scene::Box> boxes;
};

RawActivation raw_synthetic_activation(const SyntheticNeuronSpec& spec,
                                       const scene::SceneImage& scene,
                                       const scene::ConceptVocabulary& vocab) {
    spec.validate();
    RawActivation out;
    switch (spec.kind) {
        case NeuronKind::monosemantic: {
            if (auto a = detect_concept(scene, spec.concept_a, spec, vocab)) {
                out.activation = a->confidence;
                out.boxes = a->boxes;
            }
            break;
        }
        case NeuronKind::polysemantic: {
            auto a = detect_concept(scene, spec.concept_a, spec, vocab);
            auto b = detect_concept(scene, spec.concept_b, spec, vocab);
            if (a && b) {
                out.activation = (a->confidence + b->confidence) / 2.0;
                out.boxes = a->boxes;
                out.boxes.insert(out.boxes.end(), b->boxes.begin(), b->boxes.end());
            } else if (a) {
                out.activation = a->confidence;
                out.boxes = a->boxes;
            } else if (b) {
                out.activation = b->confidence;
                out.boxes = b->boxes;
            }
            break;
        }
        case NeuronKind::conditional: {
            auto a = detect_concept(scene, spec.concept_a, spec, vocab);
            auto b = detect_concept(scene, spec.concept_b, spec, vocab);
            if (a && b) {
                out.activation = a->confidence;
                out.boxes = a->boxes;  // evidence is concept A only
            }
            break;
        }
    }
    return out;
}

}  // namespace

ActivationResult synthetic_activation(const SyntheticNeuronSpec& spec,
                                      const scene::SceneImage& scene,
                                      const scene::ConceptVocabulary& vocab) {
    const RawActivation raw = raw_synthetic_activation(spec, scene, vocab);
    ActivationResult result;
    result.activation = raw.activation;
    result.reported_activation = round2(raw.activation);

    ImageHandle evidence;
    evidence.scene_data = std::make_shared<const scene::SceneImage>(scene);
    auto mask = std::make_shared<scene::Mask>(
        scene::rasterize_boxes(raw.boxes, scene.width, scene.height, spec.dilation_radius));
    result.mask_coverage = mask->coverage();
    evidence.evidence_mask = std::move(mask);
    evidence.reported_activation = result.reported_activation;
    result.masked_image = std::move(evidence);
    return result;
}

SyntheticNeuronSystem::SyntheticNeuronSystem(NeuronAddress address, SyntheticNeuronSpec spec,
                                             const scene::ConceptVocabulary* vocab)
    : address_(std::move(address)), spec_(std::move(spec)), vocab_(vocab) {
    spec_.validate();
}

ActivationResult SyntheticNeuronSystem::activate(const ImageHandle& image) const {
    if (!image.has_scene())
        fail("BackendError", "synthetic neuron " + address_.to_string() +
                                 " needs scene input; image '" + image.id() + "' has none");
    const auto& vocab = vocab_ ? *vocab_ : scene::default_vocabulary();
    ActivationResult result = synthetic_activation(spec_, *image.scene_data, vocab);
    result.masked_image.title = image.title;
    return result;
}

double SyntheticNeuronSystem::activation_only(const ImageHandle& image) const {
    if (!image.has_scene())
        fail("BackendError", "synthetic neuron " + address_.to_string() +
                                 " needs scene input; image '" + image.id() + "' has none");
    const auto& vocab = vocab_ ? *vocab_ : scene::default_vocabulary();
    return raw_synthetic_activation(spec_, *image.scene_data, vocab).activation;
}

std::vector<ActivationResult> probe(const System& system, const std::vector<ImageHandle>& images) {
    if (images.empty()) fail("InsufficientInput", "probe needs at least one image");
    std::vector<ActivationResult> results;
    results.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        try {
            results.push_back(system.activate(images[i]));
        } catch (const Error& e) {
            fail("BackendError", "image " + std::to_string(i) + " ('" + images[i].id() +
                                     "') failed: " + e.what());
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// Grids & percentile masks
// ---------------------------------------------------------------------------

double Grid::max_value() const {
    double best = values.empty() ? 0.0 : values[0];
    for (double v : values) best = std::max(best, v);
    return best;
}

scene::Mask percentile_mask(const Grid& grid, double q) {
    if (grid.values.empty()) fail("InsufficientInput", "percentile_mask needs a nonempty grid");
    if (!(q > 0.0 && q < 1.0)) fail("InsufficientInput", "q must lie in (0,1)");
    std::vector<double> sorted = grid.values;
    std::sort(sorted.begin(), sorted.end());
    size_t idx = static_cast<size_t>(std::floor(q * static_cast<double>(sorted.size())));
    if (idx >= sorted.size()) idx = sorted.size() - 1;
    const double threshold = sorted[idx];
    scene::Mask mask(grid.cols, grid.rows, 0);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) mask.set(c, r, grid.at(r, c) >= threshold);
    return mask;
}

scene::Mask upscale_mask(const scene::Mask& mask, int width, int height) {
    scene::Mask out(width, height, 0);
    for (int y = 0; y < height; ++y) {
        const int sy = static_cast<int>(static_cast<long>(y) * mask.height / height);
        for (int x = 0; x < width; ++x) {
            const int sx = static_cast<int>(static_cast<long>(x) * mask.width / width);
            out.set(x, y, mask.at(sx, sy));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exemplars
// ---------------------------------------------------------------------------

std::uint64_t dataset_content_hash(const std::vector<ImageHandle>& dataset) {
    std::uint64_t h = splitmix64(dataset.size());
    for (const auto& image : dataset) h = hash_mix(h, image.content_hash());
    return h;
}

namespace {

namespace fs = std::filesystem;

fs::path exemplar_manifest_path(const std::string& cache_dir, const NeuronAddress& address,
                                std::uint64_t dataset_hash) {
    std::string name = address.to_string();
    for (char& c : name)
        if (c == ':') c = '_';
    return fs::path(cache_dir) / (name + "-" + hex64(dataset_hash));
}

json exemplar_to_json(const ExemplarSet& set) {
    json j;
    j["neuron"] = set.neuron.to_string();
    j["dataset_hash"] = hex64(set.dataset_hash);
    j["activation_floor"] = set.activation_floor;
    j["records"] = json::array();
    for (const auto& record : set.records) {
        json r;
        r["activation"] = record.activation;
        r["reported_activation"] = record.image.reported_activation.value_or(0.0);
        r["scene"] = json::parse(scene::scene_to_json(*record.image.scene_data));
        if (record.image.evidence_mask) {
            // store the mask as run-length spans per row to keep manifests small
            const auto& mask = *record.image.evidence_mask;
            json spans = json::array();
            for (int y = 0; y < mask.height; ++y) {
                json row = json::array();
                int x = 0;
                while (x < mask.width) {
                    if (!mask.at(x, y)) {
                        ++x;
                        continue;
                    }
                    int start = x;
                    while (x < mask.width && mask.at(x, y)) ++x;
                    row.push_back({start, x});
                }
                spans.push_back(std::move(row));
            }
            r["mask"] = {{"width", mask.width}, {"height", mask.height}, {"spans", std::move(spans)}};
        }
        j["records"].push_back(std::move(r));
    }
    return j;
}

ExemplarSet exemplar_from_json(const json& j) {
    ExemplarSet set;
    set.neuron = NeuronAddress::parse(j.at("neuron").get<std::string>());
    set.dataset_hash = std::stoull(j.at("dataset_hash").get<std::string>(), nullptr, 16);
    set.activation_floor = j.at("activation_floor").get<double>();
    for (const auto& r : j.at("records")) {
        ExemplarRecord record;
        record.activation = r.at("activation").get<double>();
        record.image = handle_from_scene(scene::scene_from_json(r.at("scene").dump()));
        record.image.reported_activation = r.at("reported_activation").get<double>();
        if (r.contains("mask")) {
            const auto& m = r.at("mask");
            auto mask = std::make_shared<scene::Mask>(m.at("width").get<int>(),
                                                      m.at("height").get<int>(), 0);
            const auto& spans = m.at("spans");
            for (int y = 0; y < mask->height; ++y)
                for (const auto& span : spans.at(static_cast<size_t>(y)))
                    for (int x = span.at(0).get<int>(); x < span.at(1).get<int>(); ++x)
                        mask->set(x, y, true);
            record.image.evidence_mask = std::move(mask);
        }
        set.records.push_back(std::move(record));
    }
    return set;
}

}  // namespace

ExemplarSet build_exemplar_index(const System& system, const std::vector<ImageHandle>& dataset,
                                 size_t k, const std::string& cache_dir) {
    if (dataset.size() < k)
        fail("DatasetTooSmall", "dataset holds " + std::to_string(dataset.size()) +
                                    " images but k=" + std::to_string(k));
    const std::uint64_t dataset_hash = dataset_content_hash(dataset);
    const NeuronAddress address = system.address();

    fs::path manifest_dir;
    if (!cache_dir.empty()) {
        manifest_dir = exemplar_manifest_path(cache_dir, address, dataset_hash);
        if (auto text = io::read_file(manifest_dir / "manifest.json")) {
            try {
                ExemplarSet cached = exemplar_from_json(json::parse(*text));
                if (cached.neuron == address && cached.dataset_hash == dataset_hash &&
                    cached.records.size() == k)
                    return cached;
            } catch (...) {
                // corrupt cache entry: fall through and recompute
            }
        }
    }

    struct Scored {
        double activation;
        std::string id;
        size_t index;
    };
    std::vector<Scored> scored;
    scored.reserve(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i)
        scored.push_back({system.activation_only(dataset[i]), dataset[i].id(), i});
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.activation != b.activation) return a.activation > b.activation;
        return a.id < b.id;
    });

    ExemplarSet set;
    set.neuron = address;
    set.dataset_hash = dataset_hash;
    for (size_t i = 0; i < k; ++i) {
        const ImageHandle& image = dataset[scored[i].index];
        ActivationResult full = system.activate(image);
        ExemplarRecord record;
        record.activation = full.activation;
        record.image = full.masked_image;
        record.image.title = "exemplar " + std::to_string(i);
        set.records.push_back(std::move(record));
    }
    set.activation_floor = set.records.empty() ? 0.0 : set.records.back().activation;

    if (!cache_dir.empty()) {
        io::ensure_dirs(manifest_dir);
        io::atomic_write_file(manifest_dir / "manifest.json", exemplar_to_json(set).dump(2));
        for (size_t i = 0; i < set.records.size(); ++i) {
            const auto png = scene::encode_png(set.records[i].image.to_pixels());
            io::atomic_write_file(manifest_dir / ("exemplar_" + std::to_string(i) + ".png"), png);
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Roster
// ---------------------------------------------------------------------------

namespace {

std::vector<RosterEntry> build_default_roster() {
    static const std::vector<std::string> mono = {
        "arch", "bird", "blue", "boat", "brick", "bridge", "bug", "building", "button",
        "car window", "circle", "dog", "eyes", "feathers", "flame", "frog", "grass", "hair",
        "hands", "handle", "hat", "jeans", "jigsaw", "legs", "light", "neck", "orange",
        "paws", "pencil", "pizza", "roof", "shirt", "shoes", "sky", "snake", "spiral",
        "stripes", "sunglasses", "tail", "text", "tires", "tractor", "vehicle", "wing", "yarn"};
    static const std::vector<std::pair<std::string, std::string>> poly = {
        {"animal", "door"},     {"animal", "ship"},      {"baby", "dog"},
        {"bird", "dog"},        {"blue", "yellow"},      {"bookshelf", "building"},
        {"cup", "road"},        {"dog", "car"},          {"dog", "horse"},
        {"dog", "instrument"},  {"fire", "fur"},         {"firework", "whisker"},
        {"hand", "ear"},        {"necklace", "flower"},  {"people", "building"},
        {"people", "wood"},     {"red", "purple"},       {"shoe", "boat"},
        {"sink", "pool"},       {"skirt", "water"},      {"stairs", "fruit"},
        {"temple", "playground"}, {"truck", "train"},    {"window", "wheel"}};
    static const std::vector<std::pair<std::string, std::string>> conditional = {
        {"ball", "hand"},       {"beach", "people"},  {"bird", "tree"},   {"bridge", "sky"},
        {"building", "sky"},    {"cup", "handle"},    {"dog", "leash"},   {"fence", "animal"},
        {"fish", "water"},      {"grass", "dog"},     {"horse", "grass"}, {"instrument", "hand"},
        {"skyline", "water"},   {"sky", "bird"},      {"snow", "road"},   {"suit", "tie"},
        {"tent", "mountain"},   {"water", "blue"},    {"wheel", "racecar"}};

    std::vector<RosterEntry> roster;
    std::uint64_t index = 0;
    for (const auto& mono_concept : mono) {
        RosterEntry entry;
        entry.index = index++;
        entry.name = "mono/" + mono_concept;
        entry.spec.kind = NeuronKind::monosemantic;
        entry.spec.concept_a = mono_concept;
        roster.push_back(std::move(entry));
    }
    for (const auto& [a, b] : poly) {
        RosterEntry entry;
        entry.index = index++;
        entry.name = "poly/" + a + "+" + b;
        entry.spec.kind = NeuronKind::polysemantic;
        entry.spec.concept_a = a;
        entry.spec.concept_b = b;
        roster.push_back(std::move(entry));
    }
    for (const auto& [a, b] : conditional) {
        RosterEntry entry;
        entry.index = index++;
        entry.name = "cond/" + a + "|" + b;
        entry.spec.kind = NeuronKind::conditional;
        entry.spec.concept_a = a;
        entry.spec.concept_b = b;
        roster.push_back(std::move(entry));
    }
    return roster;
}

}  // namespace

const std::vector<RosterEntry>& default_roster() {
    static const std::vector<RosterEntry> roster = build_default_roster();
    return roster;
}

std::string roster_to_json(const std::vector<RosterEntry>& roster) {
    json j = json::array();
    for (const auto& entry : roster) {
        json e;
        e["index"] = entry.index;
        e["name"] = entry.name;
        e["kind"] = kind_name(entry.spec.kind);
        e["concept_a"] = entry.spec.concept_a;
        if (!entry.spec.concept_b.empty()) e["concept_b"] = entry.spec.concept_b;
        e["box_threshold"] = entry.spec.box_threshold;
        e["text_threshold"] = entry.spec.text_threshold;
        e["dilation_radius"] = entry.spec.dilation_radius;
        j.push_back(std::move(e));
    }
    return j.dump(2);
}

std::vector<RosterEntry> roster_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    std::vector<RosterEntry> roster;
    for (const auto& e : j) {
        RosterEntry entry;
        entry.index = e.at("index").get<std::uint64_t>();
        entry.name = e.at("name").get<std::string>();
        entry.spec.kind = kind_from_name(e.at("kind").get<std::string>());
        entry.spec.concept_a = e.at("concept_a").get<std::string>();
        entry.spec.concept_b = e.value("concept_b", std::string{});
        entry.spec.box_threshold = e.value("box_threshold", 0.3);
        entry.spec.text_threshold = e.value("text_threshold", 0.25);
        entry.spec.dilation_radius = e.value("dilation_radius", 3);
        entry.spec.validate();
        roster.push_back(std::move(entry));
    }
    return roster;
}

const RosterEntry& roster_lookup(const std::vector<RosterEntry>& roster, const std::string& key) {
    const std::string wanted = to_lower(trim(key));
    for (const auto& entry : roster) {
        if (entry.name == wanted) return entry;
        if (std::to_string(entry.index) == wanted) return entry;
        if (entry.spec.kind == NeuronKind::monosemantic && entry.spec.concept_a == wanted)
            return entry;
    }
    fail("AddressError", "no roster entry matches '" + key + "'");
}

SystemHandle make_synthetic_system(const RosterEntry& entry, const scene::ConceptVocabulary* vocab) {
    return std::make_shared<SyntheticNeuronSystem>(entry.address(), entry.spec, vocab);
}

}  // namespace maialab::neurons
