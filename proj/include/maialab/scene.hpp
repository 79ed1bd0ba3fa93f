#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "maialab/common.hpp"

namespace maialab::scene {

/// Axis-aligned rectangle in the unit square, 0 <= x0 < x1 <= 1 (same for y).
struct Box {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double area() const { return (x1 - x0) * (y1 - y0); }
    bool valid() const { return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0; }
    bool operator==(const Box&) const = default;
};

struct ConceptRegion {
    std::string label;   // canonical vocabulary token, or flagged unknown
    Box box;
    double confidence = 0.0;  // in [0,1]
    std::map<std::string, std::string> attributes;
    bool unknown = false;  // label failed vocabulary normalization; detectors ignore it

    bool operator==(const ConceptRegion&) const = default;
};

enum class Provenance { generated, edited, dataset };

std::string provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

struct SceneImage {
    std::string image_id;
    int width = 224;
    int height = 224;
    std::vector<ConceptRegion> regions;
    Provenance provenance = Provenance::generated;
    std::string source_prompt;

    bool operator==(const SceneImage&) const = default;
};

/// Canonical concept tokens plus a synonym map (idempotent after one application).
class ConceptVocabulary {
public:
    ConceptVocabulary() = default;
    ConceptVocabulary(std::vector<std::string> canonical,
                      std::map<std::string, std::string> synonyms);

    /// Maps a token to its canonical form; returns nullopt when unknown.
    std::optional<std::string> normalize(const std::string& token) const;
    bool contains(const std::string& canonical_token) const;

    const std::set<std::string>& canonical_tokens() const { return canonical_; }
    const std::map<std::string, std::string>& synonyms() const { return synonyms_; }

    /// Canonical concepts whose form appears as a token or bigram in the prompt,
    /// in order of first appearance, deduplicated.
    std::vector<std::string> match_prompt(const std::string& prompt) const;

    /// Canonical concepts found anywhere in free text (synonyms included).
    std::set<std::string> concepts_in_text(const std::string& text) const;

    std::string to_json() const;
    static ConceptVocabulary from_json(const std::string& json_text);

private:
    std::set<std::string> canonical_;
    std::map<std::string, std::string> synonyms_;
};

/// The concept roster used by the synthetic-neuron world: every concept named
/// by the standard synthetic-neuron table, with plural-form synonyms.
const ConceptVocabulary& default_vocabulary();

struct SceneOptions {
    int width = 224;
    int height = 224;
    size_t max_regions = 8;
    size_t prompt_length_cap = 512;
};

/// Deterministic text-to-scene: every vocabulary concept mentioned in the
/// prompt becomes one region with confidence 0.9 plus hash-derived jitter in
/// [-0.05, +0.05]. Throws InvalidPrompt on empty or over-cap prompts.
SceneImage generate_scene(const ConceptVocabulary& vocab, const std::string& prompt,
                          std::uint64_t seed, const SceneOptions& options = {});

/// Closed-grammar editing: "replace X with Y" | "change the color of X to C" |
/// "add Y". Removal phrasing is rejected with NegativeEditRejected. The input
/// scene is never modified.
SceneImage edit_scene(const ConceptVocabulary& vocab, const SceneImage& scene,
                      const std::string& instruction);

// ---------------------------------------------------------------------------
// Raster side: masks and pixel buffers.
// ---------------------------------------------------------------------------

struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // row-major, nonzero = unmasked / evidence

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

    bool at(int x, int y) const { return data[static_cast<size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) { data[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }
    size_t count() const;
    double coverage() const;
    bool operator==(const Mask&) const = default;
};

/// Rasterizes the union of boxes after expanding each by `dilation_px`
/// (Chebyshev dilation; exact for rectangle unions).
Mask rasterize_boxes(const std::vector<Box>& boxes, int width, int height, int dilation_px);

/// Compact run-length JSON for masks ({width, height, spans}).
std::string mask_to_json(const Mask& mask);
Mask mask_from_json(const std::string& json_text);

struct Pixels {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    Pixels() = default;
    Pixels(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}
    bool operator==(const Pixels&) const = default;
};

/// Pure function of (resolution, regions): image_id and provenance do not
/// affect pixels.
Pixels render(const SceneImage& scene);

/// Evidence view: pixels outside the mask darkened by a semi-opaque overlay,
/// mask boundary outlined in red.
Pixels render_masked(const SceneImage& scene, const Mask& mask);

std::string encode_png(const Pixels& pixels);

// ---------------------------------------------------------------------------
// Deterministic captioning.
// ---------------------------------------------------------------------------

/// Labels of regions whose box overlaps the unmasked area by >= 50% of the box
/// area (all regions when mask is null), sorted lexicographically and joined
/// with ", ". Empty result reads "no recognizable concepts".
std::string caption_regions(const SceneImage& scene, const Mask* mask = nullptr);

/// The label set behind caption_regions, before formatting.
std::set<std::string> caption_label_set(const SceneImage& scene, const Mask* mask = nullptr);

/// Intersection of per-scene caption label sets; "no shared concept" when empty.
/// masks may be empty (no masking) or aligned with scenes (null entries allowed).
std::string summarize_common(const std::vector<SceneImage>& scenes,
                             const std::vector<const Mask*>& masks = {});

// ---------------------------------------------------------------------------
// Sidecar JSON: {image_id, resolution:[w,h], regions:[...], provenance,
// source_prompt}.
// ---------------------------------------------------------------------------

std::string scene_to_json(const SceneImage& scene);
SceneImage scene_from_json(const std::string& json_text);

}  // namespace maialab::scene
