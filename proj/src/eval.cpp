#include "maialab/eval.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

namespace maialab::eval {

using nlohmann::json;

namespace {

const scene::ConceptVocabulary& vocab_or_default(const scene::ConceptVocabulary* vocab) {
    return vocab ? *vocab : scene::default_vocabulary();
}

std::set<std::string> tokens_of_concepts(const std::set<std::string>& concepts) {
    std::set<std::string> tokens;
    for (const auto& c : concepts)
        for (const auto& t : word_tokens(c)) tokens.insert(t);
    return tokens;
}

class DeterministicPrompter final : public PrompterClient {
public:
    explicit DeterministicPrompter(const scene::ConceptVocabulary* vocab) : vocab_(vocab) {}

    ExemplarPromptSet write_prompts(const std::string& description) override {
        const auto& vocab = vocab_or_default(vocab_);
        if (trim(description).empty())
            fail("InsufficientInput", "cannot write prompts for an empty description");
        ExemplarPromptSet set;
        set.description = description;

        const std::set<std::string> concepts = vocab.concepts_in_text(description);
        std::string subject;
        if (concepts.empty()) {
            subject = trim(description);  // off-vocabulary description: embed it verbatim
        } else {
            for (const auto& c : concepts) {
                if (!subject.empty()) subject += " and a ";
                subject += c;
            }
        }
        const std::vector<std::string> frames = {
            "a photo of a ",       "a close view of a ",  "a bright picture of a ",
            "an image showing a ", "a wide shot of a ",   "a detailed photo of a ",
            "a plain photo of a "};
        for (const auto& frame : frames) set.positive_prompts.push_back(frame + subject);

        // neutral candidates: vocabulary concepts sharing no word with the
        // description's concepts (so their prompts cannot co-activate it)
        const std::set<std::string> blocked = tokens_of_concepts(concepts);
        std::vector<std::pair<std::uint64_t, std::string>> ranked;
        for (const auto& c : vocab.canonical_tokens()) {
            bool clash = concepts.count(c) > 0;
            for (const auto& t : word_tokens(c)) clash |= blocked.count(t) > 0;
            if (!clash) ranked.emplace_back(hash_of(description, c), c);
        }
        std::sort(ranked.begin(), ranked.end());
        if (ranked.size() < 7)
            fail("InsufficientInput", "vocabulary too small for 7 disjoint neutral prompts");
        for (size_t i = 0; i < 7; ++i)
            set.neutral_prompts.push_back("a photo of a " + ranked[i].second);
        return set;
    }

private:
    const scene::ConceptVocabulary* vocab_;
};

class DeterministicPairer final : public PairerClient {
public:
    explicit DeterministicPairer(const scene::ConceptVocabulary* vocab) : vocab_(vocab) {}

    std::pair<std::vector<std::string>, std::vector<std::string>> pair(
        const std::string& label, const std::vector<std::string>& pool) override {
        const auto& vocab = vocab_or_default(vocab_);
        const std::set<std::string> label_concepts = vocab.concepts_in_text(label);
        std::vector<std::pair<std::pair<long, std::string>, std::string>> scored;
        for (const auto& prompt : pool) {
            const std::set<std::string> prompt_concepts = vocab.concepts_in_text(prompt);
            long overlap = 0;
            for (const auto& c : prompt_concepts) overlap += label_concepts.count(c);
            scored.push_back({{-overlap, prompt}, prompt});
        }
        std::sort(scored.begin(), scored.end());
        std::vector<std::string> most, least;
        for (size_t i = 0; i < 7; ++i) most.push_back(scored[i].second);
        for (size_t i = 0; i < 7; ++i) least.push_back(scored[scored.size() - 7 + i].second);
        return {most, least};
    }

private:
    const scene::ConceptVocabulary* vocab_;
};

}  // namespace

std::unique_ptr<PrompterClient> deterministic_prompter(const scene::ConceptVocabulary* vocab) {
    return std::make_unique<DeterministicPrompter>(vocab);
}

std::unique_ptr<PairerClient> deterministic_pairer(const scene::ConceptVocabulary* vocab) {
    return std::make_unique<DeterministicPairer>(vocab);
}

ExemplarPromptSet generate_eval_prompts(const std::string& description, PrompterClient& prompter) {
    if (trim(description).empty())
        fail("InsufficientInput", "cannot evaluate an empty description");
    for (int attempt = 0; attempt < 2; ++attempt) {
        const ExemplarPromptSet set = prompter.write_prompts(description);
        if (set.positive_prompts.size() == 7 && set.neutral_prompts.size() == 7) return set;
    }
    fail("PromptCountError", "prompter did not return 7+7 prompts for '" + description + "'");
}

std::pair<std::vector<std::string>, std::vector<std::string>> pair_by_entailment(
    const std::string& label, const std::vector<std::string>& pool, PairerClient& pairer) {
    if (pool.size() < 14)
        fail("InsufficientInput",
             "entailment pairing needs a pool of at least 14 prompts, got " +
                 std::to_string(pool.size()));
    auto [most, least] = pairer.pair(label, pool);
    if (most.size() != 7 || least.size() != 7)
        fail("PairingError", "pairer did not return two 7-sets");
    // disjointness is positional: duplicate pool entries may appear on both
    // sides only up to their multiplicity in the pool
    std::map<std::string, long> budget;
    for (const auto& p : pool) ++budget[p];
    for (const auto& p : most) --budget[p];
    for (const auto& p : least) --budget[p];
    for (const auto& [prompt, remaining] : budget)
        if (remaining < 0)
            fail("PairingError", "most/least sets overlap on '" + prompt + "'");
    return {most, least};
}

ScoreResult score_description(const neurons::System& system, const ExemplarPromptSet& prompts,
                              tools::GeneratorClient& generator, std::uint64_t seed) {
    if (prompts.positive_prompts.empty() || prompts.neutral_prompts.empty())
        fail("InsufficientInput", "prompt set is empty");
    ScoreResult result;
    auto score_side = [&](const std::vector<std::string>& side, double& mean, size_t& scored) {
        double sum = 0.0;
        for (const auto& prompt : side) {
            std::vector<neurons::ImageHandle> images;
            try {
                images = generator.generate({prompt}, seed);
            } catch (const Error&) {
                ++result.failed_generations;
                continue;
            }
            if (images.size() != 1) {
                ++result.failed_generations;
                continue;
            }
            sum += system.activation_only(images[0]);
            ++scored;
        }
        mean = scored ? sum / static_cast<double>(scored) : 0.0;
    };
    score_side(prompts.positive_prompts, result.mean_positive, result.positive_scored);
    score_side(prompts.neutral_prompts, result.mean_neutral, result.neutral_scored);
    return result;
}

double ground_truth_agreement(const neurons::SyntheticNeuronSpec& spec,
                              const agent::FinalReport& report,
                              const scene::ConceptVocabulary* vocab) {
    if (!report.parse_ok) return 0.0;
    std::string text;
    for (const auto& label : report.labels) text += label + "\n";
    const std::set<std::string> found = vocab_or_default(vocab).concepts_in_text(text);
    const std::vector<std::string> truth = spec.concepts();
    size_t matched = 0;
    for (const auto& c : truth) matched += found.count(c);
    return truth.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Report building
// ---------------------------------------------------------------------------

void EvalReportBuilder::add(const std::string& model, const std::string& layer,
                            const std::string& method, const ScoreResult& score) {
    Cell& cell = cells_[model + "\t" + layer + "\t" + method];
    cell.pos_sum += score.mean_positive;
    cell.neu_sum += score.mean_neutral;
    cell.pos_n += 1;
    cell.neu_n += 1;
    cell.units += 1;
    cell.failed += score.failed_generations;
}

void EvalReportBuilder::add_missing(const std::string& what) { missing_.push_back(what); }

EvalReport EvalReportBuilder::build() const {
    EvalReport report;
    for (const auto& [key, cell] : cells_) {
        std::istringstream parts(key);
        EvalRow row;
        std::getline(parts, row.model, '\t');
        std::getline(parts, row.layer, '\t');
        std::getline(parts, row.method, '\t');
        row.unit_count = cell.units;
        row.mean_positive = cell.pos_n ? cell.pos_sum / static_cast<double>(cell.pos_n) : 0.0;
        row.mean_neutral = cell.neu_n ? cell.neu_sum / static_cast<double>(cell.neu_n) : 0.0;
        row.failed_generations = cell.failed;
        report.rows.push_back(std::move(row));
    }
    report.missing = missing_;
    report.partial = !missing_.empty();
    return report;
}

namespace {

std::string csv_number(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

std::string eval_report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "model,layer,method,units,mean_positive,mean_neutral,failed_generations\n";
    for (const auto& row : report.rows)
        out << row.model << "," << row.layer << "," << row.method << "," << row.unit_count << ","
            << csv_number(row.mean_positive) << "," << csv_number(row.mean_neutral) << ","
            << row.failed_generations << "\n";
    return out.str();
}

std::string eval_report_json(const EvalReport& report) {
    json j;
    j["partial"] = report.partial;
    j["missing"] = report.missing;
    j["rows"] = json::array();
    for (const auto& row : report.rows)
        j["rows"].push_back({{"model", row.model},
                             {"layer", row.layer},
                             {"method", row.method},
                             {"units", row.unit_count},
                             {"mean_positive", row.mean_positive},
                             {"mean_neutral", row.mean_neutral},
                             {"failed_generations", row.failed_generations}});
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

std::vector<AblationOutcome> run_ablation(const std::vector<neurons::RosterEntry>& neuron_set,
                                          const std::vector<AblationRun>& configs,
                                          const AblationContext& context) {
    if (!context.registry) fail("ConfigError", "ablation context needs a client registry");
    const auto& vocab = vocab_or_default(context.vocab);
    auto prompter = deterministic_prompter(context.vocab);

    std::vector<AblationOutcome> outcomes;
    for (const auto& run : configs) {
        run.config.validate();
        AblationOutcome outcome;
        outcome.name = run.name;
        outcome.generator_variant = run.config.generator_variant;
        double agreement_sum = 0.0, pos_sum = 0.0, neu_sum = 0.0;
        size_t scored = 0;

        for (const auto& entry : neuron_set) {
            tools::ToolContext ctx;
            ctx.clients = context.registry->make_clients(run.config.generator_variant, "scene",
                                                         "scene", "scene");
            ctx.seed = context.seed;
            ctx.dataset = context.dataset;

            auto backbone = agent::scripted_backbone(agent::Playbook::describe_default, &vocab);
            agent::TaskPrompt task;
            task.kind = agent::TaskKind::neuron_description;
            agent::SessionOptions options;
            options.round_budget = context.round_budget;

            agent::SessionResult result;
            try {
                result = agent::run_session(*backbone, neurons::make_synthetic_system(entry, &vocab),
                                            ctx, task, run.config, options);
            } catch (const Error&) {
                ++outcome.parse_failures;
                continue;
            }
            for (const auto& [role, n] : ctx.client_dispatches)
                outcome.client_dispatches[role] += n;
            ++outcome.units;
            if (!result.report.parse_ok) {
                ++outcome.parse_failures;
                continue;
            }
            agreement_sum += ground_truth_agreement(entry.spec, result.report, &vocab);

            // predictive scoring of the produced label
            std::string label_text;
            for (const auto& label : result.report.labels) label_text += label + " ";
            try {
                const ExemplarPromptSet prompts = generate_eval_prompts(label_text, *prompter);
                auto generator_clients = context.registry->make_clients(
                    run.config.generator_variant, "scene", "scene", "scene");
                const ScoreResult score =
                    score_description(*neurons::make_synthetic_system(entry, &vocab), prompts,
                                      *generator_clients.generator, context.seed);
                pos_sum += score.mean_positive;
                neu_sum += score.mean_neutral;
                ++scored;
            } catch (const Error&) {
                // off-vocabulary label with no neutral candidates: skip scoring
            }
        }
        if (outcome.units > 0)
            outcome.mean_agreement = agreement_sum / static_cast<double>(outcome.units);
        if (scored > 0) {
            outcome.mean_positive = pos_sum / static_cast<double>(scored);
            outcome.mean_neutral = neu_sum / static_cast<double>(scored);
        }
        outcomes.push_back(std::move(outcome));
    }
    return outcomes;
}

}  // namespace maialab::eval
