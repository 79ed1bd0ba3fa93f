#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "maialab/agent.hpp"

namespace maialab::audit {

// ---------------------------------------------------------------------------
// Feature matrices
// ---------------------------------------------------------------------------

struct FeatureMatrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> values;  // row-major
    bool standardized = false;
    std::vector<neurons::NeuronAddress> columns;  // per-column unit addresses

    double at(size_t r, size_t c) const { return values[r * cols + c]; }
    double& at(size_t r, size_t c) { return values[r * cols + c]; }
};

/// Column statistics fitted on one split and reused on others (test data is
/// always transformed with fitting-split statistics).
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;          // stddev; 1.0 for constant columns
    std::vector<bool> constant_column;  // mapped to zeros, with a warning flag

    FeatureMatrix apply(const FeatureMatrix& X) const;
};

/// Column-wise (x - mean) / stddev on the fitting split. Constant columns map
/// to zeros. Throws InsufficientData on fewer than 2 rows.
std::pair<FeatureMatrix, Standardizer> standardize(const FeatureMatrix& X);

FeatureMatrix select_columns(const FeatureMatrix& X, const std::vector<size_t>& column_indices);

// ---------------------------------------------------------------------------
// L1-regularized multinomial logistic regression (proximal gradient).
// ---------------------------------------------------------------------------

struct L1Path {
    double lambda = 0.0;
    size_t n_classes = 0;
    size_t n_features = 0;
    std::vector<double> weights;  // class-major: weights[c * n_features + j]
    std::vector<double> bias;     // per class, unpenalized
    std::vector<size_t> nonzero_neurons;  // sorted columns with any-class |w| > 1e-8
    double objective_value = 0.0;
    size_t iterations = 0;
    std::vector<double> objective_trace;  // nonincreasing up to tolerance

    double weight(size_t c, size_t j) const { return weights[c * n_features + j]; }
};

struct FitOptions {
    double tolerance = 1e-9;        // relative objective change
    size_t max_iterations = 10000;
    double kkt_tolerance = 1e-7;    // keep iterating until stationarity this tight
    const L1Path* warm_start = nullptr;
};

/// Minimizes mean multinomial cross-entropy + lambda * sum|W| (bias
/// unpenalized) by proximal gradient descent with backtracking line search.
/// The objective trace is nonincreasing. Throws NumericalError on non-finite
/// input.
L1Path l1_multinomial_fit(const FeatureMatrix& X, const std::vector<int>& y, double lambda,
                          const FitOptions& options = {});

/// Smooth-part gradient at the path's solution, class-major like weights.
/// Exposed so stationarity (KKT) checks can run against the public surface.
std::vector<double> smooth_gradient(const FeatureMatrix& X, const std::vector<int>& y,
                                    const L1Path& path);

struct SparsityResult {
    double lambda = 0.0;
    L1Path path;
    bool exact = false;           // |nonzero_neurons| == target
    size_t steps = 0;             // bisection steps used
    size_t bracket_low_count = 0;   // counts at the final bracket ends
    size_t bracket_high_count = 0;
};

/// Bisects log-lambda until exactly `target` columns carry nonzero weight,
/// or returns the nearest achievable count when the path jumps over the
/// target. Throws SparsityUnreachable when no bracket exists within the step
/// budget.
SparsityResult lambda_for_sparsity(const FeatureMatrix& X, const std::vector<int>& y,
                                   size_t target, size_t max_steps = 60);

std::vector<int> predict(const L1Path& path, const FeatureMatrix& X);
double accuracy(const L1Path& path, const FeatureMatrix& X, const std::vector<int>& y);

/// Unregularized multinomial fit on the subset columns of the validation
/// features, scored on the shifted test split. Throws EmptySubset.
double retrain_and_evaluate(const FeatureMatrix& X_val, const std::vector<int>& y_val,
                            const std::vector<size_t>& subset, const FeatureMatrix& X_test,
                            const std::vector<int>& y_test);

// ---------------------------------------------------------------------------
// Planted dataset (distribution-shift benchmark analog).
// ---------------------------------------------------------------------------

enum class FeatureRole { selective, spurious, noise };

struct FeatureTag {
    FeatureRole role = FeatureRole::noise;
    size_t target = 0;  // class index for selective, env index for spurious
};

struct PlantedDatasetSpec {
    size_t n_classes = 4;
    size_t n_envs = 4;
    size_t n_features = 64;
    size_t selective_per_class = 3;
    size_t spurious_per_env = 3;
    std::vector<size_t> train_pairing;  // class -> env; default identity
    std::vector<size_t> test_pairing;   // derangement of train_pairing; default shift-by-one
    double train_env_consistency = 0.95;  // P(env == paired env) on train/val rows
    double noise_level = 0.25;
    // class features are weaker than environment features, so in-distribution
    // fits lean on the environment signal and break under the shift
    double selective_amplitude = 0.5;
    size_t train_rows = 800;
    size_t val_rows = 400;
    size_t test_rows = 400;
    std::vector<std::string> class_names;  // defaults supplied
    std::vector<std::string> env_names;

    void validate() const;  // test pairing must differ from train for every class
    PlantedDatasetSpec resolved() const;
};

struct PlantedDataset {
    PlantedDatasetSpec spec;
    FeatureMatrix train_x, val_x, test_x;
    std::vector<int> train_y, val_y, test_y;
    std::vector<size_t> train_env, val_env, test_env;
    std::vector<FeatureTag> tags;  // ground-truth feature roles, for oracles
};

/// Selective features read the class indicator, spurious features read the
/// environment indicator, the rest is noise; environments track classes per
/// the train pairing and follow the deranged pairing on the fully shifted
/// test split. Pure in (spec, seed).
PlantedDataset generate_planted_dataset(const PlantedDatasetSpec& spec, std::uint64_t seed);

/// Vocabulary for probing planted units: class names, env names, and a few
/// distractors.
scene::ConceptVocabulary planted_vocabulary(const PlantedDatasetSpec& spec);

/// The planted model's final-layer unit as a probe-able system: selective
/// units fire on their class concept, spurious units on their environment
/// concept, noise units never fire.
neurons::SystemHandle planted_neuron_system(const PlantedDataset& dataset, size_t feature_index);

void save_dataset_bundle(const PlantedDataset& dataset, const std::filesystem::path& dir);

/// Adapter contract for external datasets: a directory with features.csv,
/// labels.csv, tags.json, and pairings.json in the bundle schema loads into
/// the same pipeline the planted generator feeds.
PlantedDataset load_dataset_bundle(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Agent-driven spurious filtering and the end-to-end pipeline.
// ---------------------------------------------------------------------------

struct FilterOutcome {
    std::vector<size_t> selective_subset;        // feature indices judged SELECTIVE
    std::map<size_t, std::string> exclusions;    // feature index -> reason
};

struct FilterOptions {
    int round_budget = 15;
    size_t corpus_size = 240;
    std::filesystem::path run_dir;  // per-neuron transcripts when set
};

/// One spurious-classification session per candidate unit; only SELECTIVE
/// verdicts survive. Unparsed or aborted sessions default to exclusion.
FilterOutcome filter_neurons_with_agent(const PlantedDataset& dataset,
                                        const std::vector<size_t>& candidates,
                                        const FilterOptions& options = {});

struct SpuriousRow {
    std::string subset;
    std::string method;
    size_t units = 0;
    bool balanced = false;
    double accuracy = 0.0;
};

struct SpuriousPipelineResult {
    std::vector<SpuriousRow> rows;
    std::vector<size_t> l1_top50;
    std::vector<size_t> agent_subset;
    SparsityResult sparsity50;
};

/// The full protocol: unregularized readout on everything, l1-selected top
/// 50, random-22 baseline, l1-top-22 nested inside the top 50, and the
/// agent-filtered subset, all scored on the shifted test split.
SpuriousPipelineResult run_spurious_pipeline(const PlantedDatasetSpec& spec, std::uint64_t seed,
                                             const FilterOptions& filter_options = {});

/// Same protocol over an already materialized dataset (planted or loaded
/// through the bundle adapter). `seed` only drives the random-subset draws.
SpuriousPipelineResult run_spurious_pipeline(const PlantedDataset& data, std::uint64_t seed,
                                             const FilterOptions& filter_options = {});

std::string spurious_rows_csv(const std::vector<SpuriousRow>& rows);

// ---------------------------------------------------------------------------
// Bias identification.
// ---------------------------------------------------------------------------

struct BiasSetup {
    std::string class_label;
    std::string context;  // empty for an unbiased class
    double biased_probability = 0.92;
    double base_probability = 0.45;
    double absent_probability = 0.03;
};

/// Class-probability unit: boosted when the context concept co-occurs with
/// the class (uniform when no context is set).
neurons::SystemHandle biased_logit_system(const BiasSetup& setup,
                                          const scene::ConceptVocabulary* vocab);

struct BiasProbeOptions {
    int round_budget = 15;
    std::filesystem::path run_dir;
    std::string artifact_stem = "bias";
};

/// Runs a bias-identification session against the instrumented logit and
/// returns the parsed report.
agent::FinalReport bias_probe_session(const std::string& class_label,
                                      neurons::SystemHandle logit,
                                      const scene::ConceptVocabulary& vocab,
                                      const BiasProbeOptions& options = {});

}  // namespace maialab::audit
