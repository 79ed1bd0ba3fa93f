// Acceptance suite: one hard gate per shipped guarantee, each printed as a
// single [PASS]/[FAIL] line. Every tolerance is pinned here, in code.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <vector>

#include "maialab/agent.hpp"
#include "maialab/audit.hpp"
#include "maialab/commands.hpp"
#include "maialab/eval.hpp"
#include "maialab/io.hpp"

using namespace maialab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

#define REQUIRE(cond, msg)                                                       \
    do {                                                                         \
        if (!(cond)) {                                                           \
            std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << " " << msg  \
                      << "\n";                                                   \
            ++g_failures;                                                        \
            return false;                                                        \
        }                                                                        \
    } while (0)

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int index, const char* name, bool ok, double elapsed) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << "criterion " << index << ": " << name << " ("
              << elapsed << "s)\n";
    if (!ok) ++g_failures;
}

// ---------------------------------------------------------------------------
// 1. Oracle equivalence by exhaustive enumeration.
// ---------------------------------------------------------------------------

struct OracleOutcome {
    double activation = 0.0;
    std::vector<scene::Box> boxes;
};

bool oracle_qualifies(const scene::ConceptRegion& r, const std::string& token,
                      const neurons::SyntheticNeuronSpec& spec) {
    return !r.unknown && r.label == token && r.confidence >= spec.text_threshold &&
           r.box.area() >= spec.box_threshold * 0.01;
}

/// Independent rule evaluator: enumerate every region subset and keep the
/// best qualifying witnesses per role.
OracleOutcome oracle_eval(const neurons::SyntheticNeuronSpec& spec,
                          const scene::SceneImage& s) {
    const size_t n = s.regions.size();
    double best_a = -1.0, best_b = -1.0;
    for (size_t bits = 1; bits < (1u << n); ++bits)
        for (size_t i = 0; i < n; ++i) {
            if (!(bits & (1u << i))) continue;
            const auto& r = s.regions[i];
            if (oracle_qualifies(r, spec.concept_a, spec)) best_a = std::max(best_a, r.confidence);
            if (!spec.concept_b.empty() && oracle_qualifies(r, spec.concept_b, spec))
                best_b = std::max(best_b, r.confidence);
        }
    OracleOutcome out;
    auto collect = [&](const std::string& token) {
        for (const auto& r : s.regions)
            if (oracle_qualifies(r, token, spec)) out.boxes.push_back(r.box);
    };
    switch (spec.kind) {
        case neurons::NeuronKind::monosemantic:
            if (best_a >= 0.0) {
                out.activation = best_a;
                collect(spec.concept_a);
            }
            break;
        case neurons::NeuronKind::polysemantic:
            if (best_a >= 0.0 && best_b >= 0.0) {
                out.activation = (best_a + best_b) / 2.0;
                collect(spec.concept_a);
                collect(spec.concept_b);
            } else if (best_a >= 0.0) {
                out.activation = best_a;
                collect(spec.concept_a);
            } else if (best_b >= 0.0) {
                out.activation = best_b;
                collect(spec.concept_b);
            }
            break;
        case neurons::NeuronKind::conditional:
            if (best_a >= 0.0 && best_b >= 0.0) {
                out.activation = best_a;
                collect(spec.concept_a);
            }
            break;
    }
    return out;
}

bool criterion_oracle_equivalence() {
    const std::vector<std::string> concepts = {"stripes", "dog", "leash", "train", "instrument",
                                               "sky",     "grass", "water", "tail", "wheel"};
    const scene::ConceptVocabulary vocab(concepts, {});

    // region grid: confidences straddling the text threshold plus a clear hit,
    // and box areas on both sides of the minimum-area floor
    const std::vector<double> confidences = {0.2, 0.24, 0.26, 0.9};
    const std::vector<scene::Box> boxes = {{0.1, 0.1, 0.5, 0.5},        // well above the floor
                                           {0.2, 0.2, 0.245, 0.245}};   // below 0.3% area
    struct RegionType {
        std::string label;
        double confidence;
        scene::Box box;
    };
    std::vector<RegionType> types;
    for (const auto& label : concepts)
        for (double confidence : confidences)
            for (const auto& box : boxes) types.push_back({label, confidence, box});

    std::vector<neurons::SyntheticNeuronSpec> specs;
    for (const auto& a : concepts) {
        neurons::SyntheticNeuronSpec mono;
        mono.kind = neurons::NeuronKind::monosemantic;
        mono.concept_a = a;
        specs.push_back(mono);
    }
    for (size_t i = 0; i < concepts.size(); ++i)
        for (size_t j = i + 1; j < concepts.size(); ++j) {
            neurons::SyntheticNeuronSpec poly;
            poly.kind = neurons::NeuronKind::polysemantic;
            poly.concept_a = concepts[i];
            poly.concept_b = concepts[j];
            specs.push_back(poly);
        }
    for (size_t i = 0; i < concepts.size(); ++i)
        for (size_t j = 0; j < concepts.size(); ++j) {
            if (i == j) continue;
            neurons::SyntheticNeuronSpec cond;
            cond.kind = neurons::NeuronKind::conditional;
            cond.concept_a = concepts[i];
            cond.concept_b = concepts[j];
            specs.push_back(cond);
        }

    // all scenes with <= 3 regions over the grid (multisets of region types)
    std::vector<std::vector<size_t>> scenes;
    const size_t T = types.size();
    for (size_t a = 0; a < T; ++a) {
        scenes.push_back({a});
        for (size_t b = a; b < T; ++b) {
            scenes.push_back({a, b});
            for (size_t c = b; c < T; ++c) scenes.push_back({a, b, c});
        }
    }

    size_t full_checks = 0, fast_checks = 0, combo = 0;
    for (const auto& scene_types : scenes) {
        scene::SceneImage s;
        s.image_id = "oracle";
        for (size_t t : scene_types) {
            scene::ConceptRegion region;
            region.label = types[t].label;
            region.confidence = types[t].confidence;
            region.box = types[t].box;
            s.regions.push_back(region);
        }
        for (const auto& spec : specs) {
            ++combo;
            const OracleOutcome expected = oracle_eval(spec, s);
            const neurons::SyntheticNeuronSystem system({"synthetic", "oracle", 0}, spec, &vocab);
            const double fast = system.activation_only(neurons::handle_from_scene(s));
            REQUIRE(fast == expected.activation,
                    "activation mismatch: spec " << neurons::kind_name(spec.kind) << " "
                                                 << spec.concept_a << "/" << spec.concept_b);
            ++fast_checks;
            // full evidence comparison on a systematic subsample
            if (combo % 499 == 0) {
                const auto result = neurons::synthetic_activation(spec, s, vocab);
                REQUIRE(result.activation == expected.activation, "full-path activation mismatch");
                const scene::Mask expected_mask = scene::rasterize_boxes(
                    expected.boxes, s.width, s.height, spec.dilation_radius);
                REQUIRE(*result.masked_image.evidence_mask == expected_mask,
                        "evidence mask mismatch");
                REQUIRE((result.mask_coverage == 0.0) == (result.activation == 0.0),
                        "coverage/activation coupling violated");
                ++full_checks;
            }
        }
    }
    REQUIRE(fast_checks > 10'000'000, "enumeration unexpectedly small: " << fast_checks);
    REQUIRE(full_checks > 20'000, "full-path subsample unexpectedly small: " << full_checks);
    return true;
}

// ---------------------------------------------------------------------------
// 2. Threshold behavior.
// ---------------------------------------------------------------------------

bool criterion_threshold_straddle() {
    const scene::ConceptVocabulary vocab({"stripes"}, {});
    neurons::SyntheticNeuronSpec spec;
    spec.kind = neurons::NeuronKind::monosemantic;
    spec.concept_a = "stripes";

    auto scene_with = [&](double confidence) {
        scene::SceneImage s;
        s.image_id = "straddle";
        scene::ConceptRegion r;
        r.label = "stripes";
        r.confidence = confidence;
        r.box = {0.1, 0.1, 0.5, 0.5};
        s.regions.push_back(r);
        return s;
    };

    REQUIRE(!neurons::detect_concept(scene_with(0.24), "stripes", spec, vocab).has_value(),
            "0.24 must not clear the 0.25 text threshold");
    REQUIRE(neurons::detect_concept(scene_with(0.25), "stripes", spec, vocab).has_value(),
            "0.25 must clear the threshold (>=)");
    REQUIRE(neurons::detect_concept(scene_with(0.26), "stripes", spec, vocab).has_value(),
            "0.26 must clear the 0.25 text threshold");
    REQUIRE(neurons::synthetic_activation(spec, scene_with(0.24), vocab).activation == 0.0,
            "0.24 must yield a zero result");
    REQUIRE(neurons::synthetic_activation(spec, scene_with(0.26), vocab).activation == 0.26,
            "0.26 must pass its confidence through");
    return true;
}

// ---------------------------------------------------------------------------
// 3. Exemplar exactness + percentile mask.
// ---------------------------------------------------------------------------

bool criterion_exemplar_exactness() {
    const auto& vocab = scene::default_vocabulary();
    const auto corpus = tools::make_synthetic_corpus(vocab, 1000, 42);
    const auto& roster = neurons::default_roster();

    // 10 neurons spread across the three kinds
    std::vector<std::string> keys = {"mono/stripes",  "mono/sky",        "mono/dog",
                                     "mono/grass",    "poly/truck+train", "poly/dog+horse",
                                     "poly/fire+fur", "cond/dog|leash",   "cond/fish|water",
                                     "cond/suit|tie"};
    for (const auto& key : keys) {
        const auto& entry = neurons::roster_lookup(roster, key);
        const auto system = neurons::make_synthetic_system(entry, &vocab);
        const neurons::ExemplarSet set = neurons::build_exemplar_index(*system, corpus, 15);
        REQUIRE(set.records.size() == 15, key << ": wrong exemplar count");

        struct Scored {
            double activation;
            std::string id;
        };
        std::vector<Scored> all;
        for (const auto& image : corpus)
            all.push_back({system->activation_only(image), image.id()});
        std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
            if (a.activation != b.activation) return a.activation > b.activation;
            return a.id < b.id;
        });
        for (size_t i = 0; i < 15; ++i) {
            REQUIRE(set.records[i].activation == all[i].activation,
                    key << ": exemplar " << i << " diverges from the exhaustive sort");
            REQUIRE(set.records[i].image.id() == all[i].id,
                    key << ": exemplar " << i << " picked the wrong image");
        }
        REQUIRE(set.activation_floor == all[14].activation, key << ": wrong floor");
    }

    // percentile mask: 100 distinct values, q = 0.95 -> exactly 5 cells
    neurons::Grid grid;
    grid.rows = 10;
    grid.cols = 10;
    for (int i = 1; i <= 100; ++i) grid.values.push_back(static_cast<double>(i));
    REQUIRE(neurons::percentile_mask(grid, 0.95).count() == 5,
            "q=0.95 on 100 distinct values must leave exactly 5 cells");
    return true;
}

// ---------------------------------------------------------------------------
// 4. End-to-end scripted sessions.
// ---------------------------------------------------------------------------

bool criterion_scripted_sessions() {
    const auto& vocab = scene::default_vocabulary();
    const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
    auto corpus = std::make_shared<const std::vector<neurons::ImageHandle>>(
        tools::make_synthetic_corpus(vocab, 1000, 42));

    int mono_total = 0, poly_total = 0, cond_total = 0;
    int mono_exact = 0, poly_exact = 0, cond_exact = 0;
    for (const auto& entry : neurons::default_roster()) {
        int* total = nullptr;
        int* exact = nullptr;
        switch (entry.spec.kind) {
            case neurons::NeuronKind::monosemantic:
                if (mono_total >= 20) continue;
                total = &mono_total;
                exact = &mono_exact;
                break;
            case neurons::NeuronKind::polysemantic:
                if (poly_total >= 10) continue;
                total = &poly_total;
                exact = &poly_exact;
                break;
            case neurons::NeuronKind::conditional:
                if (cond_total >= 10) continue;
                total = &cond_total;
                exact = &cond_exact;
                break;
        }
        ++*total;

        tools::ToolContext ctx;
        ctx.clients = registry.make_clients("scene", "scene", "scene", "scene");
        ctx.seed = 0;
        ctx.dataset = corpus;
        agent::TaskPrompt task;
        task.kind = agent::TaskKind::neuron_description;
        auto backbone = agent::scripted_backbone(agent::Playbook::describe_default, &vocab);
        const agent::SessionResult result = agent::run_session(
            *backbone, neurons::make_synthetic_system(entry, &vocab), ctx, task);
        REQUIRE(result.report.rounds_used <= 15, entry.name << ": budget exceeded");
        if (eval::ground_truth_agreement(entry.spec, result.report, &vocab) == 1.0) ++*exact;
    }
    REQUIRE(mono_total == 20 && poly_total == 10 && cond_total == 10, "subset sizes off");
    REQUIRE(mono_exact >= 19, "single-concept agreement " << mono_exact << "/20, need >= 19");
    REQUIRE(poly_exact >= 8, "disjunction agreement " << poly_exact << "/10, need >= 8");
    REQUIRE(cond_exact >= 8, "conditional agreement " << cond_exact << "/10, need >= 8");
    std::cout << "         (mono " << mono_exact << "/20, poly " << poly_exact << "/10, cond "
              << cond_exact << "/10)\n";
    return true;
}

// ---------------------------------------------------------------------------
// 5. Predictive separation on every roster neuron.
// ---------------------------------------------------------------------------

bool criterion_predictive_separation() {
    const auto& vocab = scene::default_vocabulary();
    const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
    auto clients = registry.make_clients("scene", "scene", "scene", "scene");
    auto prompter = eval::deterministic_prompter(&vocab);

    for (const auto& entry : neurons::default_roster()) {
        std::string label;
        switch (entry.spec.kind) {
            case neurons::NeuronKind::monosemantic: label = entry.spec.concept_a; break;
            case neurons::NeuronKind::polysemantic:
                label = entry.spec.concept_a + " OR " + entry.spec.concept_b;
                break;
            case neurons::NeuronKind::conditional:
                label = entry.spec.concept_a + " when " + entry.spec.concept_b + " is present";
                break;
        }
        const auto system = neurons::make_synthetic_system(entry, &vocab);
        const eval::ExemplarPromptSet prompts = eval::generate_eval_prompts(label, *prompter);
        REQUIRE(prompts.positive_prompts.size() == 7 && prompts.neutral_prompts.size() == 7,
                entry.name << ": prompt counts off");
        const eval::ScoreResult score =
            eval::score_description(*system, prompts, *clients.generator, 3);
        REQUIRE(score.mean_positive - score.mean_neutral >= 0.5,
                entry.name << ": separation " << score.mean_positive - score.mean_neutral
                           << " < 0.5");

        // wrong-label control: a concept disjoint from the ground truth
        std::string wrong;
        for (const auto& candidate : vocab.canonical_tokens()) {
            bool clashes = false;
            for (const auto& truth : entry.spec.concepts())
                clashes |= candidate.find(truth) != std::string::npos ||
                           truth.find(candidate) != std::string::npos;
            if (!clashes) {
                wrong = candidate;
                break;
            }
        }
        const eval::ScoreResult control = eval::score_description(
            *system, eval::generate_eval_prompts(wrong, *prompter), *clients.generator, 3);
        REQUIRE(control.mean_positive == 0.0,
                entry.name << ": wrong label '" << wrong << "' scored "
                           << control.mean_positive);
    }
    return true;
}

// ---------------------------------------------------------------------------
// 6. L1 solver: KKT, grid-search equivalence, exact sparsity targets.
// ---------------------------------------------------------------------------

bool criterion_l1_solver() {
    // KKT at convergence on the default planted dataset
    audit::PlantedDatasetSpec spec;
    const audit::PlantedDataset data = audit::generate_planted_dataset(spec, 0);
    const auto [val_std, stats] = audit::standardize(data.val_x);
    for (double lambda : {0.003, 0.01, 0.05}) {
        const audit::L1Path path = audit::l1_multinomial_fit(val_std, data.val_y, lambda);
        const std::vector<double> g = audit::smooth_gradient(val_std, data.val_y, path);
        for (size_t i = 0; i < path.weights.size(); ++i) {
            if (std::abs(path.weights[i]) <= 1e-12) {
                REQUIRE(std::abs(g[i]) <= lambda + 1e-6,
                        "KKT slack violated at zero weight " << i << ": |g|=" << std::abs(g[i]));
            } else {
                const double r = std::abs(g[i] + lambda * (path.weights[i] > 0 ? 1.0 : -1.0));
                REQUIRE(r <= 1e-6, "KKT residual " << r << " at active weight " << i);
            }
        }
        for (size_t i = 1; i < path.objective_trace.size(); ++i)
            REQUIRE(path.objective_trace[i] <= path.objective_trace[i - 1] + 1e-9,
                    "objective rose along the trace");
    }

    // grid-search equivalence on a tiny instance (2 features, 20 samples)
    {
        audit::FeatureMatrix X;
        X.rows = 20;
        X.cols = 2;
        std::vector<int> y;
        std::uint64_t h = 5;
        for (int i = 0; i < 20; ++i) {
            h = splitmix64(h);
            const double jx = unit_real(h) * 0.2 - 0.1;
            h = splitmix64(h);
            const double jy = unit_real(h) * 0.2 - 0.1;
            const int label = i % 2;
            X.values.push_back((label == 0 ? 1.0 : -1.0) + jx);
            X.values.push_back((label == 0 ? 0.5 : -0.5) + jy);
            y.push_back(label);
        }
        const double lambda = 0.15;
        const audit::L1Path fit = audit::l1_multinomial_fit(X, y, lambda);

        auto objective = [&](const std::vector<double>& W, const std::vector<double>& b) {
            double loss = 0.0;
            for (size_t i = 0; i < X.rows; ++i) {
                double z0 = b[0] + W[0] * X.at(i, 0) + W[1] * X.at(i, 1);
                double z1 = b[1] + W[2] * X.at(i, 0) + W[3] * X.at(i, 1);
                const double m = std::max(z0, z1);
                const double denom = std::exp(z0 - m) + std::exp(z1 - m);
                loss += std::log(denom) + m - (y[i] == 0 ? z0 : z1);
            }
            loss /= static_cast<double>(X.rows);
            for (double w : W) loss += lambda * std::abs(w);
            return loss;
        };
        double best = 1e300;
        std::vector<double> W(4), b(2);
        for (W[0] = -2.0; W[0] <= 2.0 + 1e-9; W[0] += 0.2)
            for (W[1] = -2.0; W[1] <= 2.0 + 1e-9; W[1] += 0.2)
                for (W[2] = -2.0; W[2] <= 2.0 + 1e-9; W[2] += 0.2)
                    for (W[3] = -2.0; W[3] <= 2.0 + 1e-9; W[3] += 0.2)
                        for (b[0] = -0.4; b[0] <= 0.4 + 1e-9; b[0] += 0.4)
                            for (b[1] = -0.4; b[1] <= 0.4 + 1e-9; b[1] += 0.4)
                                best = std::min(best, objective(W, b));
        REQUIRE(fit.objective_value <= best + 1e-4,
                "solver objective " << fit.objective_value << " vs grid " << best);
    }

    // exact sparsity targets on the default planted dataset
    const audit::SparsityResult s50 = audit::lambda_for_sparsity(val_std, data.val_y, 50);
    REQUIRE(s50.exact && s50.path.nonzero_neurons.size() == 50,
            "target 50 not hit exactly (got " << s50.path.nonzero_neurons.size() << ")");
    REQUIRE(s50.steps <= 60, "target 50 took " << s50.steps << " bisection steps");
    const audit::FeatureMatrix val50 = audit::select_columns(val_std, s50.path.nonzero_neurons);
    const audit::SparsityResult s22 = audit::lambda_for_sparsity(val50, data.val_y, 22);
    REQUIRE(s22.exact && s22.path.nonzero_neurons.size() == 22,
            "target 22 not hit exactly (got " << s22.path.nonzero_neurons.size() << ")");
    REQUIRE(s22.steps <= 60, "target 22 took " << s22.steps << " bisection steps");
    return true;
}

// ---------------------------------------------------------------------------
// 7. Spurious pipeline ordering over 10 seeds.
// ---------------------------------------------------------------------------

bool criterion_spurious_ordering() {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        audit::PlantedDatasetSpec spec;
        const audit::SpuriousPipelineResult result = audit::run_spurious_pipeline(spec, seed);
        double l1_accuracy = 0.0, agent_accuracy = 0.0;
        for (const auto& row : result.rows) {
            if (row.method == "l1") l1_accuracy = row.accuracy;
            if (row.method == "agent") agent_accuracy = row.accuracy;
        }
        if (agent_accuracy >= l1_accuracy + 0.05) ++wins;
    }
    REQUIRE(wins >= 9, "agent beat l1-top50 by 0.05 in only " << wins << "/10 seeds");
    std::cout << "         (ordering held in " << wins << "/10 seeds)\n";
    return true;
}

// ---------------------------------------------------------------------------
// 8. Bias probe across 10 seeds.
// ---------------------------------------------------------------------------

bool criterion_bias_probe() {
    audit::PlantedDatasetSpec spec;
    const scene::ConceptVocabulary vocab = audit::planted_vocabulary(spec);
    const std::vector<std::string> contexts = {"ball", "tree", "rock", "cloud"};
    const std::vector<std::string> classes = {"labrador", "corgi", "bulldog", "dachshund"};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::string context = contexts[splitmix64(seed) % contexts.size()];
        const std::string cls = classes[splitmix64(seed + 101) % classes.size()];
        audit::BiasSetup setup;
        setup.class_label = cls;
        setup.context = context;
        const agent::FinalReport report =
            audit::bias_probe_session(cls, audit::biased_logit_system(setup, &vocab), vocab);
        REQUIRE(report.parse_ok, "seed " << seed << ": bias report did not parse");
        REQUIRE(report.bias_text.find(context) != std::string::npos,
                "seed " << seed << ": [BIAS] text misses '" << context
                        << "': " << report.bias_text);
    }
    return true;
}

// ---------------------------------------------------------------------------
// 9. Ablation soundness.
// ---------------------------------------------------------------------------

bool criterion_ablation_soundness() {
    const auto& vocab = scene::default_vocabulary();
    const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
    auto corpus = std::make_shared<const std::vector<neurons::ImageHandle>>(
        tools::make_synthetic_corpus(vocab, 600, 42));
    const auto& roster = neurons::default_roster();
    const std::vector<std::string> keys = {"mono/stripes", "mono/grass", "poly/truck+train"};

    for (int setting = 0; setting < 2; ++setting) {
        agent::AblationConfig ablation;
        if (setting == 0) ablation.generation_enabled = false;  // exemplars only
        else ablation.exemplars_enabled = false;                // generated inputs only
        for (const auto& key : keys) {
            tools::ToolContext ctx;
            ctx.clients = registry.make_clients("scene", "scene", "scene", "scene");
            ctx.seed = 0;
            ctx.dataset = corpus;
            agent::TaskPrompt task;
            task.kind = agent::TaskKind::neuron_description;
            auto backbone = agent::scripted_backbone(agent::Playbook::describe_default, &vocab);
            const agent::SessionResult result = agent::run_session(
                *backbone, neurons::make_synthetic_system(neurons::roster_lookup(roster, key), &vocab),
                ctx, task, ablation);
            REQUIRE(result.report.parse_ok,
                    key << " under setting " << setting << ": report did not parse");
            if (setting == 0) {
                REQUIRE(ctx.client_dispatches["generator"] == 0,
                        key << ": generator dispatched under the exemplars-only setting");
                REQUIRE(ctx.client_dispatches["editor"] == 0,
                        key << ": editor dispatched under the exemplars-only setting");
            } else {
                REQUIRE(ctx.client_dispatches["exemplars"] == 0,
                        key << ": exemplar index dispatched under the generation-only setting");
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// 10. Replay determinism over the full roster.
// ---------------------------------------------------------------------------

bool criterion_replay_determinism() {
    auto run_to = [](const fs::path& out) {
        cli::DescribeArgs args;
        args.config.out_dir = out.string();
        args.config.corpus_size = 1000;
        args.config.seed = 0;
        args.config.concurrency = 4;
        return cli::cmd_describe(args);
    };
    const fs::path base = fs::temp_directory_path() / "maialab_acceptance_replay";
    fs::remove_all(base);
    const fs::path a = base / "a";
    const fs::path b = base / "b";
    REQUIRE(run_to(a) == cli::kExitOk, "first describe run failed");
    REQUIRE(run_to(b) == cli::kExitOk, "second describe run failed");

    size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name == "manifest.json") continue;  // timestamps live here by design
        const auto left = io::read_file(entry.path());
        const auto right = io::read_file(b / name);
        REQUIRE(right.has_value(), "second run is missing " << name);
        REQUIRE(*left == *right, "artifact differs between identical runs: " << name);
        ++compared;
    }
    // every image attachment must match byte for byte as well
    if (fs::exists(a / "images"))
        for (const auto& entry : fs::directory_iterator(a / "images")) {
            const auto left = io::read_file(entry.path());
            const auto right = io::read_file(b / "images" / entry.path().filename());
            REQUIRE(right.has_value(),
                    "second run is missing an image " << entry.path().filename());
            REQUIRE(*left == *right, "image differs between identical runs");
            ++compared;
        }
    REQUIRE(compared >= 2 * neurons::default_roster().size(),
            "compared only " << compared << " artifacts");
    std::cout << "         (" << compared << " artifacts byte-identical)\n";
    fs::remove_all(base);
    return true;
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        bool (*run)();
        double budget_seconds;
    };
    const std::vector<Criterion> criteria = {
        {"synthetic-neuron oracle equivalence", criterion_oracle_equivalence, 60.0},
        {"detection threshold straddle", criterion_threshold_straddle, 5.0},
        {"exemplar exactness + percentile mask", criterion_exemplar_exactness, 30.0},
        {"end-to-end scripted sessions", criterion_scripted_sessions, 180.0},
        {"predictive-evaluation separation", criterion_predictive_separation, 60.0},
        {"l1 solver (KKT, grid, sparsity targets)", criterion_l1_solver, 120.0},
        {"spurious pipeline ordering", criterion_spurious_ordering, 300.0},
        {"bias probe names the planted context", criterion_bias_probe, 60.0},
        {"ablation soundness", criterion_ablation_soundness, 60.0},
        {"replay determinism over the roster", criterion_replay_determinism, 120.0},
    };

    int index = 0;
    for (const auto& criterion : criteria) {
        ++index;
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = criterion.run();
        } catch (const std::exception& e) {
            std::cerr << "[FAIL] criterion " << index << " threw: " << e.what() << "\n";
            ok = false;
        }
        const double elapsed = seconds_since(t0);
        report(index, criterion.name, ok, elapsed);
        if (ok && elapsed > criterion.budget_seconds) {
            std::cout << "[FAIL] criterion " << index << ": exceeded its " <<
                criterion.budget_seconds << "s budget (" << elapsed << "s)\n";
            ++g_failures;
        }
    }

    if (g_failures == 0) {
        std::cout << "all acceptance criteria passed\n";
        return 0;
    }
    std::cout << g_failures << " acceptance failure(s)\n";
    return 1;
}
