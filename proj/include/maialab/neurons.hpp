#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maialab/scene.hpp"

namespace maialab::neurons {

/// Addressable unit inside an instrumented model. Serializes bijectively to
/// "model:layer:unit".
struct NeuronAddress {
    std::string model_name;
    std::string layer_id;
    std::uint64_t unit_index = 0;

    std::string to_string() const;
    static NeuronAddress parse(const std::string& text);
    bool operator==(const NeuronAddress&) const = default;
    bool operator<(const NeuronAddress& other) const {
        return to_string() < other.to_string();
    }
};

enum class NeuronKind { monosemantic, polysemantic, conditional };

std::string kind_name(NeuronKind kind);
NeuronKind kind_from_name(const std::string& name);

/// Ground-truth definition of a synthetic neuron. concept_b is the second
/// disjunct for polysemantic neurons and the gating condition for conditional
/// ones (present iff kind != monosemantic).
struct SyntheticNeuronSpec {
    NeuronKind kind = NeuronKind::monosemantic;
    std::string concept_a;
    std::string concept_b;            // empty for monosemantic
    double box_threshold = 0.3;       // realized as a minimum-area floor (0.3% of image)
    double text_threshold = 0.25;
    int dilation_radius = 3;          // px at the scene resolution

    void validate() const;
    std::vector<std::string> concepts() const;
    bool operator==(const SyntheticNeuronSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Images as the systems see them: symbolic scene, raw pixels, or both, plus
// optional evidence mask and the reported activation used for captions.
// ---------------------------------------------------------------------------

struct ImageHandle {
    std::shared_ptr<const scene::SceneImage> scene_data;
    std::shared_ptr<const scene::Pixels> pixel_data;
    std::shared_ptr<const scene::Mask> evidence_mask;
    std::optional<double> reported_activation;
    std::string title;

    bool has_scene() const { return scene_data != nullptr; }
    bool has_pixels() const { return pixel_data != nullptr; }

    /// Stable content identifier: the scene id when symbolic, else a pixel hash.
    std::string id() const;
    /// Content hash for caching: sidecar bytes when a scene is present, else
    /// pixel bytes. Masks and captions do not participate.
    std::uint64_t content_hash() const;
    /// Identity of the rendered view: content plus the evidence mask. Two
    /// handles with equal visual hashes rasterize to identical pixels.
    std::uint64_t visual_hash() const;
    /// Renders to pixels, applying the evidence mask when present.
    scene::Pixels to_pixels() const;
};

ImageHandle handle_from_scene(scene::SceneImage scene);
ImageHandle handle_from_pixels(scene::Pixels pixels);

struct ActivationResult {
    double activation = 0.0;           // model units; synthetic: detector confidence
    double reported_activation = 0.0;  // display rounding (2 dp synthetic, integer real)
    ImageHandle masked_image;
    double mask_coverage = 0.0;

    bool fired() const { return mask_coverage > 0.0; }
};

// ---------------------------------------------------------------------------
// The System abstraction.
// ---------------------------------------------------------------------------

class System {
public:
    virtual ~System() = default;
    virtual NeuronAddress address() const = 0;
    /// Full activation with evidence mask and display rounding.
    virtual ActivationResult activate(const ImageHandle& image) const = 0;
    /// Scalar-only fast path for exemplar scans; must agree with activate().
    virtual double activation_only(const ImageHandle& image) const {
        return activate(image).activation;
    }
};

using SystemHandle = std::shared_ptr<const System>;

/// One result per input, order-preserving. Throws InsufficientInput on an
/// empty list; backend failures surface as BackendError naming the image.
std::vector<ActivationResult> probe(const System& system, const std::vector<ImageHandle>& images);

// ---------------------------------------------------------------------------
// Concept detection over scenes (the synthetic detector).
// ---------------------------------------------------------------------------

struct Detection {
    double confidence = 0.0;
    std::vector<scene::Box> boxes;  // qualifying regions, pre-dilation
};

/// A region qualifies when its normalized label equals the concept, its
/// confidence clears text_threshold, and its area clears the minimum-box
/// floor derived from box_threshold. Returns the max qualifying confidence
/// and all qualifying boxes; nullopt when nothing qualifies.
std::optional<Detection> detect_concept(const scene::SceneImage& scene, const std::string& concept_token,
                                        const SyntheticNeuronSpec& spec,
                                        const scene::ConceptVocabulary& vocab);

scene::Mask detection_mask(const Detection& detection, int width, int height, int dilation_px);

/// Compositional synthetic-neuron semantics: monosemantic passes concept A
/// through; polysemantic averages the two confidences and merges masks when
/// both fire, else passes the firing one; conditional returns A's result only
/// when B is also detected.
ActivationResult synthetic_activation(const SyntheticNeuronSpec& spec,
                                      const scene::SceneImage& scene,
                                      const scene::ConceptVocabulary& vocab);

class SyntheticNeuronSystem final : public System {
public:
    SyntheticNeuronSystem(NeuronAddress address, SyntheticNeuronSpec spec,
                          const scene::ConceptVocabulary* vocab = nullptr);

    NeuronAddress address() const override { return address_; }
    const SyntheticNeuronSpec& spec() const { return spec_; }
    ActivationResult activate(const ImageHandle& image) const override;
    double activation_only(const ImageHandle& image) const override;

private:
    NeuronAddress address_;
    SyntheticNeuronSpec spec_;
    const scene::ConceptVocabulary* vocab_;
};

// ---------------------------------------------------------------------------
// Activation grids and percentile masking (real-model evidence).
// ---------------------------------------------------------------------------

struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;  // row-major

    double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
    double max_value() const;
};

/// Mask true exactly where the value reaches the q-quantile of this grid's own
/// values (order statistic at floor(q*N), clamped). A constant grid masks
/// all-true.
scene::Mask percentile_mask(const Grid& grid, double q = 0.95);

/// Nearest-neighbor upscale of a grid-sized mask to image resolution.
scene::Mask upscale_mask(const scene::Mask& mask, int width, int height);

// ---------------------------------------------------------------------------
// Dataset exemplars.
// ---------------------------------------------------------------------------

struct ExemplarRecord {
    ImageHandle image;  // masked evidence image, reported activation attached
    double activation = 0.0;
};

struct ExemplarSet {
    NeuronAddress neuron;
    std::vector<ExemplarRecord> records;  // descending activation, ties by ascending id
    double activation_floor = 0.0;
    std::uint64_t dataset_hash = 0;
};

std::uint64_t dataset_content_hash(const std::vector<ImageHandle>& dataset);

/// Exact top-k by activation (ties broken by ascending image id). When
/// cache_dir is nonempty, results are persisted under it keyed by
/// (neuron address, dataset content hash) and reloaded on a match.
ExemplarSet build_exemplar_index(const System& system, const std::vector<ImageHandle>& dataset,
                                 size_t k = 15, const std::string& cache_dir = "");

// ---------------------------------------------------------------------------
// The standard synthetic-neuron roster.
// ---------------------------------------------------------------------------

struct RosterEntry {
    std::uint64_t index = 0;
    std::string name;  // "mono/stripes", "poly/truck+train", "cond/ball|hand"
    SyntheticNeuronSpec spec;

    NeuronAddress address() const { return {"synthetic", "table_a2", index}; }
};

/// Built-in roster covering the full synthetic-neuron table: every single
/// concept, disjunction pair, and conditional pair.
const std::vector<RosterEntry>& default_roster();

std::string roster_to_json(const std::vector<RosterEntry>& roster);
std::vector<RosterEntry> roster_from_json(const std::string& json_text);

/// Lookup by index, by entry name, or by bare concept (resolves to the
/// single-concept entry). Throws AddressError when nothing matches.
const RosterEntry& roster_lookup(const std::vector<RosterEntry>& roster, const std::string& key);

SystemHandle make_synthetic_system(const RosterEntry& entry,
                                   const scene::ConceptVocabulary* vocab = nullptr);

}  // namespace maialab::neurons
