#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "maialab/agent.hpp"

namespace maialab::eval {

// ---------------------------------------------------------------------------
// Predictive evaluation: score a description by whether images generated from
// it activate the unit more than unrelated images.
// ---------------------------------------------------------------------------

struct ExemplarPromptSet {
    std::string description;
    std::vector<std::string> positive_prompts;  // exactly 7
    std::vector<std::string> neutral_prompts;   // exactly 7
};

/// Writes positive/neutral exemplar prompts for a description. Hosted models
/// implement this; the deterministic default embeds the description's
/// canonical concepts into fixed sentence frames and draws neutrals from
/// vocabulary concepts disjoint from the description.
class PrompterClient {
public:
    virtual ~PrompterClient() = default;
    virtual ExemplarPromptSet write_prompts(const std::string& description) = 0;
};

std::unique_ptr<PrompterClient> deterministic_prompter(
    const scene::ConceptVocabulary* vocab = nullptr);

/// Validates the 7+7 contract; a client returning wrong counts is retried
/// once, then the call fails with PromptCountError.
ExemplarPromptSet generate_eval_prompts(const std::string& description, PrompterClient& prompter);

/// Picks the 7 prompts a label most and least entails from a pool. The
/// deterministic default scores concept overlap between label and prompt
/// (ties broken lexicographically). Outputs are disjoint 7-sets.
class PairerClient {
public:
    virtual ~PairerClient() = default;
    virtual std::pair<std::vector<std::string>, std::vector<std::string>> pair(
        const std::string& label, const std::vector<std::string>& pool) = 0;
};

std::unique_ptr<PairerClient> deterministic_pairer(const scene::ConceptVocabulary* vocab = nullptr);

std::pair<std::vector<std::string>, std::vector<std::string>> pair_by_entailment(
    const std::string& label, const std::vector<std::string>& pool, PairerClient& pairer);

struct ScoreResult {
    double mean_positive = 0.0;
    double mean_neutral = 0.0;
    size_t positive_scored = 0;
    size_t neutral_scored = 0;
    size_t failed_generations = 0;  // excluded from the means
};

/// Generates every prompt, probes the unit, and averages per side.
ScoreResult score_description(const neurons::System& system, const ExemplarPromptSet& prompts,
                              tools::GeneratorClient& generator, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ground-truth agreement for synthetic neurons.
// ---------------------------------------------------------------------------

/// Concept recall of the report's labels against the spec's ground-truth
/// concepts, after synonym canonicalization. Unparsed reports score 0.
double ground_truth_agreement(const neurons::SyntheticNeuronSpec& spec,
                              const agent::FinalReport& report,
                              const scene::ConceptVocabulary* vocab = nullptr);

// ---------------------------------------------------------------------------
// Report shapes.
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string model;
    std::string layer;
    std::string method;
    size_t unit_count = 0;
    double mean_positive = 0.0;
    double mean_neutral = 0.0;
    size_t failed_generations = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    bool partial = false;
    std::vector<std::string> missing;  // inputs that could not be scored
};

/// Merges per-unit scores into per-(model, layer, method) rows. Order
/// independent: means accumulate as sum+count.
class EvalReportBuilder {
public:
    void add(const std::string& model, const std::string& layer, const std::string& method,
             const ScoreResult& score);
    void add_missing(const std::string& what);
    EvalReport build() const;

private:
    struct Cell {
        double pos_sum = 0.0, neu_sum = 0.0;
        size_t pos_n = 0, neu_n = 0, units = 0, failed = 0;
    };
    std::map<std::string, Cell> cells_;
    std::vector<std::string> missing_;
};

std::string eval_report_csv(const EvalReport& report);
std::string eval_report_json(const EvalReport& report);

// ---------------------------------------------------------------------------
// Tool ablations.
// ---------------------------------------------------------------------------

struct AblationRun {
    std::string name;  // e.g. "full", "exemplars-only", "generation-only", "generator-v2"
    agent::AblationConfig config;
};

struct AblationOutcome {
    std::string name;
    std::string generator_variant;
    size_t units = 0;
    double mean_agreement = 0.0;
    double mean_positive = 0.0;
    double mean_neutral = 0.0;
    std::map<std::string, std::uint64_t> client_dispatches;  // summed over sessions
    size_t parse_failures = 0;
};

struct AblationContext {
    const tools::ClientRegistry* registry = nullptr;
    const scene::ConceptVocabulary* vocab = nullptr;
    std::shared_ptr<const std::vector<neurons::ImageHandle>> dataset;
    std::uint64_t seed = 0;
    int round_budget = 15;
};

/// Runs a scripted describe session per (neuron, config), scores each report
/// through the predictive pipeline, and aggregates per-config means plus
/// dispatch counters. Per-session failures are recorded, not fatal.
std::vector<AblationOutcome> run_ablation(const std::vector<neurons::RosterEntry>& neuron_set,
                                          const std::vector<AblationRun>& configs,
                                          const AblationContext& context);

}  // namespace maialab::eval
