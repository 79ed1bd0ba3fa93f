#include "maialab/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <nlohmann/json.hpp>

namespace maialab::scene {

using nlohmann::json;

std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::generated: return "generated";
        case Provenance::edited: return "edited";
        case Provenance::dataset: return "dataset";
    }
    return "generated";
}

Provenance provenance_from_name(const std::string& name) {
    if (name == "generated") return Provenance::generated;
    if (name == "edited") return Provenance::edited;
    if (name == "dataset") return Provenance::dataset;
    fail("SchemaError", "unknown provenance '" + name + "'");
}

// ---------------------------------------------------------------------------
// ConceptVocabulary
// ---------------------------------------------------------------------------

ConceptVocabulary::ConceptVocabulary(std::vector<std::string> canonical,
                                     std::map<std::string, std::string> synonyms) {
    for (auto& token : canonical) canonical_.insert(to_lower(token));
    for (auto& [from, to] : synonyms) {
        const std::string key = to_lower(from);
        const std::string value = to_lower(to);
        if (!canonical_.count(value))
            fail("SchemaError", "synonym target '" + value + "' is not canonical");
        if (canonical_.count(key)) continue;  // canonical tokens map to themselves
        synonyms_[key] = value;
    }
}

std::optional<std::string> ConceptVocabulary::normalize(const std::string& token) const {
    const std::string t = to_lower(trim(token));
    if (canonical_.count(t)) return t;
    auto it = synonyms_.find(t);
    if (it != synonyms_.end()) return it->second;
    return std::nullopt;
}

bool ConceptVocabulary::contains(const std::string& canonical_token) const {
    return canonical_.count(to_lower(canonical_token)) > 0;
}

std::vector<std::string> ConceptVocabulary::match_prompt(const std::string& prompt) const {
    const std::vector<std::string> tokens = word_tokens(prompt);
    std::vector<std::string> matched;
    std::set<std::string> seen;
    auto push = [&](const std::string& canonical) {
        if (seen.insert(canonical).second) matched.push_back(canonical);
    };
    // Bigrams first so "car window" wins over its component words appearing later.
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        if (auto c = normalize(tokens[i] + " " + tokens[i + 1])) push(*c);
    }
    for (const auto& token : tokens) {
        if (auto c = normalize(token)) push(*c);
    }
    return matched;
}

std::set<std::string> ConceptVocabulary::concepts_in_text(const std::string& text) const {
    std::set<std::string> out;
    for (const auto& c : match_prompt(text)) out.insert(c);
    return out;
}

std::string ConceptVocabulary::to_json() const {
    json j;
    j["canonical"] = json::array();
    for (const auto& c : canonical_) j["canonical"].push_back(c);
    j["synonyms"] = json::object();
    for (const auto& [from, to] : synonyms_) j["synonyms"][from] = to;
    return j.dump(2);
}

ConceptVocabulary ConceptVocabulary::from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    std::vector<std::string> canonical = j.at("canonical").get<std::vector<std::string>>();
    std::map<std::string, std::string> synonyms;
    if (j.contains("synonyms"))
        synonyms = j.at("synonyms").get<std::map<std::string, std::string>>();
    return ConceptVocabulary(std::move(canonical), std::move(synonyms));
}

namespace {

const std::vector<std::string>& table_concepts() {
    // Union of every concept named by the standard synthetic-neuron roster
    // (single concepts plus both members of each pair).
    static const std::vector<std::string> concepts = {
        // single-concept column
        "arch", "bird", "blue", "boat", "brick", "bridge", "bug", "building", "button",
        "car window", "circle", "dog", "eyes", "feathers", "flame", "frog", "grass", "hair",
        "hands", "handle", "hat", "jeans", "jigsaw", "legs", "light", "neck", "orange",
        "paws", "pencil", "pizza", "roof", "shirt", "shoes", "sky", "snake", "spiral",
        "stripes", "sunglasses", "tail", "text", "tires", "tractor", "vehicle", "wing", "yarn",
        // pair members not already above
        "animal", "door", "ship", "baby", "yellow", "bookshelf", "cup", "road", "car",
        "horse", "instrument", "fire", "fur", "firework", "whisker", "hand", "ear",
        "necklace", "flower", "people", "wood", "red", "purple", "shoe", "sink", "pool",
        "skirt", "water", "stairs", "fruit", "temple", "playground", "truck", "train",
        "window", "wheel",
        "ball", "beach", "tree", "leash", "fence", "fish", "skyline", "snow", "suit",
        "tie", "tent", "mountain", "racecar",
    };
    return concepts;
}

ConceptVocabulary build_default_vocabulary() {
    const auto& canonical = table_concepts();
    std::set<std::string> canon_set(canonical.begin(), canonical.end());
    std::map<std::string, std::string> synonyms;
    auto add = [&](const std::string& from, const std::string& to) {
        if (!canon_set.count(from)) synonyms[from] = to;
    };
    for (const auto& token : canonical) {
        if (token.find(' ') != std::string::npos) continue;
        if (token.back() == 's') {
            // canonical plural: map the singular form back to it
            add(token.substr(0, token.size() - 1), token);
        } else {
            add(token + "s", token);
            const char last = token.back();
            if (last == 'h' || last == 'x') add(token + "es", token);
        }
    }
    add("car windows", "car window");
    add("striped", "stripes");
    add("puppy", "dog");
    add("puppies", "dog");
    return ConceptVocabulary(canonical, synonyms);
}

}  // namespace

const ConceptVocabulary& default_vocabulary() {
    static const ConceptVocabulary vocab = build_default_vocabulary();
    return vocab;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

/// Confidence and box for one concept, derived only from (image_id, label).
ConceptRegion place_region(const std::string& image_id, const std::string& label) {
    const std::uint64_t h = hash_of(image_id, label);
    ConceptRegion region;
    region.label = label;
    region.confidence = 0.9 + (unit_real(h) * 0.1 - 0.05);
    const double w = 0.18 + 0.17 * unit_real(splitmix64(h + 1));
    const double bh = 0.18 + 0.17 * unit_real(splitmix64(h + 2));
    region.box.x0 = unit_real(splitmix64(h + 3)) * (1.0 - w);
    region.box.y0 = unit_real(splitmix64(h + 4)) * (1.0 - bh);
    region.box.x1 = region.box.x0 + w;
    region.box.y1 = region.box.y0 + bh;
    return region;
}

}  // namespace

SceneImage generate_scene(const ConceptVocabulary& vocab, const std::string& prompt,
                          std::uint64_t seed, const SceneOptions& options) {
    if (trim(prompt).empty()) fail("InvalidPrompt", "empty prompt");
    if (prompt.size() > options.prompt_length_cap)
        fail("InvalidPrompt", "prompt exceeds length cap of " +
                                  std::to_string(options.prompt_length_cap) + " chars");

    SceneImage scene;
    scene.image_id = hex64(hash_of(prompt, seed));
    scene.width = options.width;
    scene.height = options.height;
    scene.provenance = Provenance::generated;
    scene.source_prompt = prompt;

    std::vector<std::string> matched = vocab.match_prompt(prompt);
    if (matched.size() > options.max_regions) matched.resize(options.max_regions);
    for (const auto& label : matched) scene.regions.push_back(place_region(scene.image_id, label));
    return scene;
}

// ---------------------------------------------------------------------------
// Editing
// ---------------------------------------------------------------------------

namespace {

bool is_article(const std::string& t) { return t == "a" || t == "an" || t == "the"; }

std::string join_tokens(const std::vector<std::string>& tokens, size_t begin, size_t end) {
    std::string out;
    for (size_t i = begin; i < end; ++i) {
        if (is_article(tokens[i])) continue;
        if (!out.empty()) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

}  // namespace

SceneImage edit_scene(const ConceptVocabulary& vocab, const SceneImage& scene,
                      const std::string& instruction) {
    const std::vector<std::string> tokens = word_tokens(instruction);
    if (tokens.empty()) fail("EditGrammarError", "empty instruction");
    if (tokens[0] == "remove" || tokens[0] == "delete" || tokens[0] == "erase")
        fail("NegativeEditRejected",
             "removal phrasing is not supported; use \"replace ... with ...\" instead");

    SceneImage edited = scene;
    edited.image_id = hex64(hash_of(scene.image_id, instruction));
    edited.provenance = Provenance::edited;

    auto find_region = [&](const std::string& phrase) -> ConceptRegion* {
        auto canonical = vocab.normalize(phrase);
        const std::string wanted = canonical ? *canonical : to_lower(phrase);
        for (auto& region : edited.regions)
            if (region.label == wanted) return &region;
        return nullptr;
    };

    if (tokens[0] == "replace") {
        auto with_it = std::find(tokens.begin() + 1, tokens.end(), "with");
        if (with_it == tokens.end() || with_it == tokens.begin() + 1 || with_it + 1 == tokens.end())
            fail("EditGrammarError", "expected \"replace X with Y\": " + instruction);
        const size_t with_pos = static_cast<size_t>(with_it - tokens.begin());
        const std::string target = join_tokens(tokens, 1, with_pos);
        const std::string replacement = join_tokens(tokens, with_pos + 1, tokens.size());
        if (target.empty() || replacement.empty())
            fail("EditGrammarError", "expected \"replace X with Y\": " + instruction);
        ConceptRegion* region = find_region(target);
        if (!region) fail("EditTargetMissing", "no region labeled '" + target + "' in scene");
        auto canonical = vocab.normalize(replacement);
        region->label = canonical ? *canonical : to_lower(replacement);
        region->unknown = !canonical.has_value();
        return edited;
    }

    // "change the color of X to C"
    if (tokens[0] == "change" && tokens.size() >= 5) {
        auto of_it = std::find(tokens.begin(), tokens.end(), "of");
        auto to_it = std::find(tokens.begin(), tokens.end(), "to");
        const bool shape_ok = of_it != tokens.end() && to_it != tokens.end() && of_it < to_it &&
                              std::find(tokens.begin(), of_it, "color") != of_it;
        if (shape_ok) {
            const size_t of_pos = static_cast<size_t>(of_it - tokens.begin());
            const size_t to_pos = static_cast<size_t>(to_it - tokens.begin());
            const std::string target = join_tokens(tokens, of_pos + 1, to_pos);
            const std::string color = join_tokens(tokens, to_pos + 1, tokens.size());
            if (target.empty() || color.empty())
                fail("EditGrammarError", "expected \"change the color of X to C\": " + instruction);
            ConceptRegion* region = find_region(target);
            if (!region) fail("EditTargetMissing", "no region labeled '" + target + "' in scene");
            region->attributes["color"] = color;
            return edited;
        }
        fail("EditGrammarError", "expected \"change the color of X to C\": " + instruction);
    }

    if (tokens[0] == "add") {
        const std::string added = join_tokens(tokens, 1, tokens.size());
        if (added.empty()) fail("EditGrammarError", "expected \"add Y\": " + instruction);
        if (edited.regions.size() >= 8)
            fail("RegionLimit", "scene already holds the maximum of 8 regions");
        auto canonical = vocab.normalize(added);
        ConceptRegion region = place_region(edited.image_id, canonical ? *canonical : to_lower(added));
        region.unknown = !canonical.has_value();
        edited.regions.push_back(region);
        return edited;
    }

    fail("EditGrammarError", "unrecognized edit instruction: " + instruction);
}

// ---------------------------------------------------------------------------
// Masks & rendering
// ---------------------------------------------------------------------------

size_t Mask::count() const {
    size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
}

double Mask::coverage() const {
    return data.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data.size());
}

namespace {

struct PixelRect {
    int x0, y0, x1, y1;  // half-open
};

PixelRect to_pixels(const Box& box, int width, int height, int expand) {
    auto px = [](double v, int extent) {
        return static_cast<int>(std::lround(v * static_cast<double>(extent)));
    };
    PixelRect r{px(box.x0, width) - expand, px(box.y0, height) - expand,
                px(box.x1, width) + expand, px(box.y1, height) + expand};
    r.x0 = std::max(0, r.x0);
    r.y0 = std::max(0, r.y0);
    r.x1 = std::min(width, r.x1);
    r.y1 = std::min(height, r.y1);
    return r;
}

}  // namespace

Mask rasterize_boxes(const std::vector<Box>& boxes, int width, int height, int dilation_px) {
    Mask mask(width, height, 0);
    for (const auto& box : boxes) {
        const PixelRect r = to_pixels(box, width, height, dilation_px);
        for (int y = r.y0; y < r.y1; ++y) {
            auto* row = mask.data.data() + static_cast<size_t>(y) * width;
            std::fill(row + r.x0, row + r.x1, std::uint8_t{1});
        }
    }
    return mask;
}

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

Rgb label_color(const std::string& label) {
    const std::uint64_t h = hash_of(label);
    // keep colors mid-bright so the red outline stays visible
    return Rgb{static_cast<std::uint8_t>(60 + (h & 0x7F)),
               static_cast<std::uint8_t>(60 + ((h >> 8) & 0x7F)),
               static_cast<std::uint8_t>(60 + ((h >> 16) & 0x7F))};
}

Rgb named_color(const std::string& name) {
    static const std::map<std::string, Rgb> table = {
        {"red", {200, 40, 40}},     {"green", {40, 170, 60}},  {"blue", {50, 80, 210}},
        {"yellow", {220, 210, 50}}, {"purple", {150, 60, 180}}, {"orange", {230, 140, 30}},
        {"white", {235, 235, 235}}, {"black", {15, 15, 15}},    {"brown", {130, 85, 40}},
        {"pink", {230, 130, 170}},  {"gray", {128, 128, 128}},  {"grey", {128, 128, 128}},
    };
    auto it = table.find(name);
    if (it != table.end()) return it->second;
    return label_color("color:" + name);
}

}  // namespace

Pixels render(const SceneImage& scene) {
    Pixels out(scene.width, scene.height);
    for (size_t i = 0; i < out.rgb.size(); i += 3) {
        out.rgb[i] = 24;
        out.rgb[i + 1] = 26;
        out.rgb[i + 2] = 32;
    }
    for (const auto& region : scene.regions) {
        Rgb color = label_color(region.label);
        auto color_attr = region.attributes.find("color");
        if (color_attr != region.attributes.end()) color = named_color(color_attr->second);
        const PixelRect r = to_pixels(region.box, scene.width, scene.height, 0);
        for (int y = r.y0; y < r.y1; ++y) {
            auto* row = out.rgb.data() + (static_cast<size_t>(y) * scene.width + r.x0) * 3;
            for (int x = r.x0; x < r.x1; ++x) {
                *row++ = color.r;
                *row++ = color.g;
                *row++ = color.b;
            }
        }
    }
    return out;
}

Pixels render_masked(const SceneImage& scene, const Mask& mask) {
    if (mask.width != scene.width || mask.height != scene.height)
        fail("MaskShapeError", "mask resolution does not match scene");
    Pixels out = render(scene);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            auto* px = out.rgb.data() + (static_cast<size_t>(y) * mask.width + x) * 3;
            if (!mask.at(x, y)) {
                px[0] = static_cast<std::uint8_t>(px[0] * 35 / 100);
                px[1] = static_cast<std::uint8_t>(px[1] * 35 / 100);
                px[2] = static_cast<std::uint8_t>(px[2] * 35 / 100);
            }
        }
    }
    // red outline along the evidence boundary
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            const bool boundary = x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1 ||
                                  !mask.at(x - 1, y) || !mask.at(x + 1, y) || !mask.at(x, y - 1) ||
                                  !mask.at(x, y + 1);
            if (boundary) {
                auto* px = out.rgb.data() + (static_cast<size_t>(y) * mask.width + x) * 3;
                px[0] = 220;
                px[1] = 30;
                px[2] = 30;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Captioning
// ---------------------------------------------------------------------------

namespace {

/// Fraction of the region's pixel box that the mask leaves unmasked.
double unmasked_fraction(const Box& box, const Mask& mask) {
    const PixelRect r = to_pixels(box, mask.width, mask.height, 0);
    const long total = static_cast<long>(r.x1 - r.x0) * (r.y1 - r.y0);
    if (total <= 0) return 0.0;
    long open = 0;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) open += mask.at(x, y);
    return static_cast<double>(open) / static_cast<double>(total);
}

}  // namespace

std::set<std::string> caption_label_set(const SceneImage& scene, const Mask* mask) {
    if (mask && (mask->width != scene.width || mask->height != scene.height))
        fail("MaskShapeError", "mask resolution does not match scene");
    std::set<std::string> labels;
    for (const auto& region : scene.regions) {
        if (region.unknown) continue;
        if (!mask || unmasked_fraction(region.box, *mask) >= 0.5) labels.insert(region.label);
    }
    return labels;
}

std::string caption_regions(const SceneImage& scene, const Mask* mask) {
    const std::set<std::string> labels = caption_label_set(scene, mask);
    if (labels.empty()) return "no recognizable concepts";
    std::string out;
    for (const auto& label : labels) {
        if (!out.empty()) out += ", ";
        out += label;
    }
    return out;
}

std::string summarize_common(const std::vector<SceneImage>& scenes,
                             const std::vector<const Mask*>& masks) {
    if (scenes.size() < 2) fail("InsufficientInput", "summarize_common needs at least 2 scenes");
    if (!masks.empty() && masks.size() != scenes.size())
        fail("ArityError", "masks must align with scenes");
    std::set<std::string> common =
        caption_label_set(scenes[0], masks.empty() ? nullptr : masks[0]);
    for (size_t i = 1; i < scenes.size() && !common.empty(); ++i) {
        const std::set<std::string> labels =
            caption_label_set(scenes[i], masks.empty() ? nullptr : masks[i]);
        std::set<std::string> kept;
        std::set_intersection(common.begin(), common.end(), labels.begin(), labels.end(),
                              std::inserter(kept, kept.begin()));
        common.swap(kept);
    }
    if (common.empty()) return "no shared concept";
    std::string out;
    for (const auto& label : common) {
        if (!out.empty()) out += ", ";
        out += label;
    }
    return out;
}

std::string mask_to_json(const Mask& mask) {
    json j;
    j["width"] = mask.width;
    j["height"] = mask.height;
    json spans = json::array();
    for (int y = 0; y < mask.height; ++y) {
        json row = json::array();
        int x = 0;
        while (x < mask.width) {
            if (!mask.at(x, y)) {
                ++x;
                continue;
            }
            const int start = x;
            while (x < mask.width && mask.at(x, y)) ++x;
            row.push_back({start, x});
        }
        spans.push_back(std::move(row));
    }
    j["spans"] = std::move(spans);
    return j.dump();
}

Mask mask_from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    Mask mask(j.at("width").get<int>(), j.at("height").get<int>(), 0);
    const auto& spans = j.at("spans");
    for (int y = 0; y < mask.height; ++y)
        for (const auto& span : spans.at(static_cast<size_t>(y)))
            for (int x = span.at(0).get<int>(); x < span.at(1).get<int>(); ++x)
                mask.set(x, y, true);
    return mask;
}

// ---------------------------------------------------------------------------
// Sidecar JSON
// ---------------------------------------------------------------------------

std::string scene_to_json(const SceneImage& scene) {
    json j;
    j["image_id"] = scene.image_id;
    j["resolution"] = {scene.width, scene.height};
    j["regions"] = json::array();
    for (const auto& region : scene.regions) {
        json r;
        r["label"] = region.label;
        r["box"] = {region.box.x0, region.box.y0, region.box.x1, region.box.y1};
        r["confidence"] = region.confidence;
        r["attributes"] = region.attributes;
        if (region.unknown) r["unknown"] = true;
        j["regions"].push_back(std::move(r));
    }
    j["provenance"] = provenance_name(scene.provenance);
    j["source_prompt"] = scene.source_prompt;
    return j.dump();
}

SceneImage scene_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    SceneImage scene;
    scene.image_id = j.at("image_id").get<std::string>();
    scene.width = j.at("resolution").at(0).get<int>();
    scene.height = j.at("resolution").at(1).get<int>();
    for (const auto& r : j.at("regions")) {
        ConceptRegion region;
        region.label = r.at("label").get<std::string>();
        region.box.x0 = r.at("box").at(0).get<double>();
        region.box.y0 = r.at("box").at(1).get<double>();
        region.box.x1 = r.at("box").at(2).get<double>();
        region.box.y1 = r.at("box").at(3).get<double>();
        region.confidence = r.at("confidence").get<double>();
        if (r.contains("attributes"))
            region.attributes = r.at("attributes").get<std::map<std::string, std::string>>();
        region.unknown = r.value("unknown", false);
        scene.regions.push_back(std::move(region));
    }
    scene.provenance = provenance_from_name(j.at("provenance").get<std::string>());
    scene.source_prompt = j.at("source_prompt").get<std::string>();
    return scene;
}

}  // namespace maialab::scene
