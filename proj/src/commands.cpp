#include "maialab/commands.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "maialab/audit.hpp"
#include "maialab/cache.hpp"
#include "maialab/eval.hpp"
#include "maialab/io.hpp"

namespace maialab::cli {

using nlohmann::json;

namespace {

int exit_code_for(const Error& e) {
    static const std::set<std::string> config_codes = {"ConfigError", "UnknownClient",
                                                       "TemplateError", "AddressError",
                                                       "SchemaError", "SparsityUnreachable"};
    return config_codes.count(e.code()) ? kExitConfig : kExitPartial;
}

void print_error(const Error& e) {
    json j;
    j["error"] = e.code();
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
}

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '/' || c == ':' || c == '|' || c == ' ') c = '_';
    return out;
}

std::vector<neurons::RosterEntry> load_roster(const std::string& roster) {
    if (roster == "table_a2" || roster.empty()) return neurons::default_roster();
    const auto text = io::read_file(roster);
    if (!text) fail("ConfigError", "cannot read roster file " + roster);
    return neurons::roster_from_json(*text);
}

/// Accepts roster keys ("mono/stripes", "stripes", "37") and the address
/// form "synthetic:table_a2:<key>".
const neurons::RosterEntry& resolve_neuron(const std::vector<neurons::RosterEntry>& roster,
                                           const std::string& key) {
    const std::string prefix = "synthetic:table_a2:";
    if (starts_with(key, prefix))
        return neurons::roster_lookup(roster, key.substr(prefix.size()));
    return neurons::roster_lookup(roster, key);
}

agent::AblationConfig ablation_from(const RunConfig& config) {
    agent::AblationConfig ablation;
    ablation.exemplars_enabled = config.exemplars_enabled;
    ablation.generation_enabled = config.generation_enabled;
    ablation.generator_variant = config.generator;
    return ablation;
}

std::string ground_truth_label(const neurons::SyntheticNeuronSpec& spec) {
    switch (spec.kind) {
        case neurons::NeuronKind::monosemantic: return spec.concept_a;
        case neurons::NeuronKind::polysemantic: return spec.concept_a + " OR " + spec.concept_b;
        case neurons::NeuronKind::conditional:
            return spec.concept_a + " when " + spec.concept_b + " is present";
    }
    return spec.concept_a;
}

/// Bounded worker pool over an index range; exceptions surface per item.
void parallel_for(size_t count, int concurrency, const std::function<void(size_t)>& body) {
    if (count == 0) return;
    const int workers = std::max(1, std::min<int>(concurrency, static_cast<int>(count)));
    if (workers == 1) {
        for (size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex error_mutex;
    std::vector<std::string> errors;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    errors.push_back(e.what());
                }
            }
        });
    for (auto& t : pool) t.join();
    if (!errors.empty()) fail("WorkerError", errors.front());
}

}  // namespace

// ---------------------------------------------------------------------------
// describe
// ---------------------------------------------------------------------------

int cmd_describe(const DescribeArgs& args) {
    try {
        const RunConfig& config = args.config;
        config.validate();
        if (config.backbone != "scripted")
            fail("ConfigError", "backbone '" + config.backbone +
                                    "' is not available; the deterministic option is 'scripted'");
        const agent::Playbook playbook = agent::playbook_from_name(config.playbook);

        const auto& vocab = scene::default_vocabulary();
        const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
        // fail fast on unknown client keys
        (void)registry.make_clients(config.generator, config.editor, config.describer,
                                    config.summarizer);

        std::vector<neurons::RosterEntry> entries;
        if (!args.neuron.empty()) {
            entries.push_back(resolve_neuron(load_roster(args.roster), args.neuron));
        } else {
            entries = load_roster(args.roster);
        }

        auto corpus = std::make_shared<const std::vector<neurons::ImageHandle>>(
            tools::make_synthetic_corpus(vocab, config.corpus_size, config.seed));

        RunManifest manifest;
        manifest.started_at = iso_timestamp_now();
        manifest.config_hash = hex64(config.config_hash());
        manifest.resolved_config_json = config.to_json();
        manifest.clients_json = registry.manifest_json();
        manifest.run_id = hex64(hash_of(manifest.config_hash, manifest.started_at));

        const std::filesystem::path out_dir = config.out_dir;
        io::ensure_dirs(out_dir);
        const std::string exemplar_cache =
            config.cache_dir.empty() ? (out_dir / "exemplar_cache").string() : config.cache_dir;

        std::mutex merge_mutex;
        std::map<std::string, std::uint64_t> tool_calls;
        std::vector<std::string> artifacts;
        size_t aborted = 0;

        parallel_for(entries.size(), config.concurrency, [&](size_t i) {
            const neurons::RosterEntry& entry = entries[i];
            tools::ToolContext ctx;
            ctx.clients = registry.make_clients(config.generator, config.editor, config.describer,
                                                config.summarizer);
            ctx.seed = config.seed;
            ctx.dataset = corpus;
            ctx.exemplar_cache_dir = exemplar_cache;
            ctx.run_id = manifest.run_id;

            agent::TaskPrompt task;
            task.kind = agent::TaskKind::neuron_description;
            agent::SessionOptions options;
            options.round_budget = config.round_budget;
            options.run_dir = out_dir;
            options.artifact_stem = sanitize(entry.name);

            auto backbone = agent::scripted_backbone(playbook, &vocab);
            const agent::SessionResult result = agent::run_session(
                *backbone, neurons::make_synthetic_system(entry, &vocab), ctx, task,
                ablation_from(config), options);

            std::lock_guard<std::mutex> lock(merge_mutex);
            for (const auto& [role, n] : ctx.client_dispatches) tool_calls[role] += n;
            artifacts.push_back(options.artifact_stem + ".report.json");
            artifacts.push_back(options.artifact_stem + ".transcript.jsonl");
            if (result.report.aborted) ++aborted;
        });

        std::sort(artifacts.begin(), artifacts.end());
        manifest.artifacts = artifacts;
        manifest.tool_calls = tool_calls;
        manifest.finished_at = iso_timestamp_now();
        manifest.write(out_dir);
        std::cout << "describe: " << entries.size() << " session(s) -> " << out_dir.string()
                  << "\n";
        return aborted == 0 ? kExitOk : kExitPartial;
    } catch (const Error& e) {
        print_error(e);
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const EvalArgs& args) {
    try {
        const auto manifest_text = io::read_file(args.manifest_path);
        if (!manifest_text) fail("ConfigError", "cannot read manifest " + args.manifest_path);
        const json manifest = json::parse(*manifest_text, nullptr, true, true);
        if (!manifest.contains("methods") || manifest.at("methods").empty())
            fail("ConfigError", "evaluation manifest lists no methods");

        const auto& vocab = scene::default_vocabulary();
        const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
        auto clients = registry.make_clients(args.config.generator, args.config.editor,
                                             args.config.describer, args.config.summarizer);
        auto prompter = eval::deterministic_prompter(&vocab);

        std::vector<neurons::RosterEntry> entries;
        const auto roster = load_roster(manifest.value("roster", std::string("table_a2")));
        if (manifest.contains("neurons")) {
            for (const auto& key : manifest.at("neurons"))
                entries.push_back(neurons::roster_lookup(roster, key.get<std::string>()));
        } else {
            entries = roster;
        }
        if (entries.empty()) fail("ConfigError", "evaluation manifest selects no neurons");
        const std::uint64_t seed = manifest.value("seed", args.config.seed);

        // pairing pools stay within each method unless the manifest says otherwise
        const bool cross_method_pool = manifest.value("cross_method_pool", false);
        auto pairer = eval::deterministic_pairer(&vocab);

        struct MethodLabel {
            std::string method;
            std::string label;
            eval::ExemplarPromptSet prompts;
        };

        eval::EvalReportBuilder builder;
        size_t pool_size = 0;
        for (const auto& entry : entries) {
            std::vector<MethodLabel> labels;
            for (const auto& method : manifest.at("methods")) {
                const std::string name = method.at("name").get<std::string>();
                const std::string source = method.value("source", std::string("reports"));
                std::string label;
                if (source == "ground_truth") {
                    label = ground_truth_label(entry.spec);
                } else if (source == "wrong_label") {
                    // a deterministic concept disjoint from the ground truth
                    for (const auto& candidate : vocab.canonical_tokens()) {
                        const auto truth = entry.spec.concepts();
                        bool clashes = false;
                        for (const auto& t : truth)
                            clashes |= candidate.find(t) != std::string::npos ||
                                       t.find(candidate) != std::string::npos;
                        if (!clashes && hash_of(entry.name, candidate) % 7 == 0) {
                            label = candidate;
                            break;
                        }
                    }
                    if (label.empty()) label = "yarn";
                } else if (source == "reports") {
                    const std::filesystem::path dir = method.at("dir").get<std::string>();
                    const auto report_text =
                        io::read_file(dir / (sanitize(entry.name) + ".report.json"));
                    if (!report_text) {
                        builder.add_missing(name + ":" + entry.name);
                        continue;
                    }
                    const agent::FinalReport report = agent::report_from_json(*report_text);
                    if (!report.parse_ok) {
                        builder.add_missing(name + ":" + entry.name + " (unparsed)");
                        continue;
                    }
                    for (const auto& l : report.labels) label += l + " ";
                } else {
                    fail("ConfigError", "unknown method source '" + source + "'");
                }
                labels.push_back({name, label, eval::generate_eval_prompts(label, *prompter)});
            }

            // shared pool when requested: every method's 14 prompts per neuron
            std::vector<std::string> shared_pool;
            if (cross_method_pool)
                for (const auto& ml : labels) {
                    shared_pool.insert(shared_pool.end(), ml.prompts.positive_prompts.begin(),
                                       ml.prompts.positive_prompts.end());
                    shared_pool.insert(shared_pool.end(), ml.prompts.neutral_prompts.begin(),
                                       ml.prompts.neutral_prompts.end());
                }

            for (const auto& ml : labels) {
                std::vector<std::string> pool = shared_pool;
                if (!cross_method_pool) {
                    pool = ml.prompts.positive_prompts;
                    pool.insert(pool.end(), ml.prompts.neutral_prompts.begin(),
                                ml.prompts.neutral_prompts.end());
                }
                pool_size = std::max(pool_size, pool.size());
                const auto [most, least] = eval::pair_by_entailment(ml.label, pool, *pairer);
                eval::ExemplarPromptSet paired;
                paired.description = ml.label;
                paired.positive_prompts = most;
                paired.neutral_prompts = least;
                const eval::ScoreResult score = eval::score_description(
                    *neurons::make_synthetic_system(entry, &vocab), paired, *clients.generator,
                    seed);
                builder.add("synthetic", "table_a2", ml.method, score);
            }
        }

        const eval::EvalReport report = builder.build();
        const std::filesystem::path out_dir = args.config.out_dir;
        io::ensure_dirs(out_dir);
        io::atomic_write_file(out_dir / "eval_report.csv", eval::eval_report_csv(report));
        json extras = json::parse(eval::eval_report_json(report));
        extras["prompt_pool_size"] = pool_size;
        extras["cross_method_pool"] = cross_method_pool;
        io::atomic_write_file(out_dir / "eval_report.json", extras.dump(2));
        std::cout << "eval: " << report.rows.size() << " row(s) -> " << out_dir.string() << "\n";
        return report.partial ? kExitPartial : kExitOk;
    } catch (const Error& e) {
        print_error(e);
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

int cmd_audit_spurious(const AuditSpuriousArgs& args) {
    try {
        if (args.planted != "default")
            fail("ConfigError", "unknown planted spec '" + args.planted +
                                    "'; the built-in option is 'default'");
        audit::FilterOptions filter;
        filter.round_budget = args.config.round_budget;
        const std::filesystem::path out_dir = args.config.out_dir;
        filter.run_dir = out_dir / "sessions";

        audit::PlantedDatasetSpec spec;
        const audit::PlantedDataset data =
            args.config.dataset_path.empty()
                ? audit::generate_planted_dataset(spec, args.config.seed)
                : audit::load_dataset_bundle(args.config.dataset_path);
        const audit::SpuriousPipelineResult result =
            audit::run_spurious_pipeline(data, args.config.seed, filter);

        io::ensure_dirs(out_dir);
        io::atomic_write_file(out_dir / "spurious_results.csv",
                              audit::spurious_rows_csv(result.rows));
        json extras;
        extras["l1_top50"] = result.l1_top50;
        extras["agent_subset"] = result.agent_subset;
        extras["sparsity_exact"] = result.sparsity50.exact;
        extras["sparsity_steps"] = result.sparsity50.steps;
        io::atomic_write_file(out_dir / "spurious_results.json", extras.dump(2));
        if (args.dump_bundle) audit::save_dataset_bundle(data, out_dir / "dataset");
        std::cout << "audit spurious: " << result.rows.size() << " row(s) -> "
                  << out_dir.string() << "\n";
        return kExitOk;
    } catch (const Error& e) {
        print_error(e);
        return exit_code_for(e);
    }
}

int cmd_audit_bias(const AuditBiasArgs& args) {
    try {
        if (args.class_label.empty())
            fail("TemplateError", "audit bias needs --class <label>");
        audit::PlantedDatasetSpec spec;
        const scene::ConceptVocabulary vocab = audit::planted_vocabulary(spec);

        audit::BiasSetup setup;
        setup.class_label = args.class_label;
        setup.context = args.planted_bias;
        if (!vocab.contains(setup.class_label))
            fail("ConfigError", "class '" + setup.class_label +
                                    "' is not in the planted vocabulary");
        if (!setup.context.empty() && !vocab.contains(setup.context))
            fail("ConfigError", "context '" + setup.context +
                                    "' is not in the planted vocabulary");

        audit::BiasProbeOptions options;
        options.round_budget = args.config.round_budget;
        options.run_dir = args.config.out_dir;
        options.artifact_stem = "bias_" + sanitize(args.class_label);
        const agent::FinalReport report = audit::bias_probe_session(
            args.class_label, audit::biased_logit_system(setup, &vocab), vocab, options);

        std::cout << "audit bias: [BIAS] " << report.bias_text << "\n";
        return report.parse_ok ? kExitOk : kExitPartial;
    } catch (const Error& e) {
        print_error(e);
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const AblateArgs& args) {
    try {
        const auto& vocab = scene::default_vocabulary();
        const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);

        std::vector<neurons::RosterEntry> all = load_roster(args.roster);
        std::vector<neurons::RosterEntry> units(
            all.begin(), all.begin() + std::min(args.limit, all.size()));

        eval::AblationContext context;
        context.registry = &registry;
        context.vocab = &vocab;
        context.dataset = std::make_shared<const std::vector<neurons::ImageHandle>>(
            tools::make_synthetic_corpus(vocab, args.config.corpus_size, args.config.seed));
        context.seed = args.config.seed;
        context.round_budget = args.config.round_budget;

        std::vector<eval::AblationRun> runs;
        runs.push_back({"full", {}});
        eval::AblationRun exemplars_only{"exemplars-only", {}};
        exemplars_only.config.generation_enabled = false;
        runs.push_back(exemplars_only);
        eval::AblationRun generation_only{"generation-only", {}};
        generation_only.config.exemplars_enabled = false;
        runs.push_back(generation_only);
        eval::AblationRun variant{"generator-v2", {}};
        variant.config.generator_variant = "scene-v2";
        runs.push_back(variant);

        const auto outcomes = eval::run_ablation(units, runs, context);

        json j = json::array();
        std::ostringstream csv;
        csv << "config,generator,units,mean_agreement,mean_positive,mean_neutral,parse_failures\n";
        csv.precision(6);
        for (const auto& outcome : outcomes) {
            csv << outcome.name << "," << outcome.generator_variant << "," << outcome.units << ","
                << outcome.mean_agreement << "," << outcome.mean_positive << ","
                << outcome.mean_neutral << "," << outcome.parse_failures << "\n";
            json row;
            row["config"] = outcome.name;
            row["generator"] = outcome.generator_variant;
            row["units"] = outcome.units;
            row["mean_agreement"] = outcome.mean_agreement;
            row["mean_positive"] = outcome.mean_positive;
            row["mean_neutral"] = outcome.mean_neutral;
            row["parse_failures"] = outcome.parse_failures;
            row["client_dispatches"] = outcome.client_dispatches;
            j.push_back(std::move(row));
        }
        const std::filesystem::path out_dir = args.config.out_dir;
        io::ensure_dirs(out_dir);
        io::atomic_write_file(out_dir / "ablation.csv", csv.str());
        io::atomic_write_file(out_dir / "ablation.json", j.dump(2));
        std::cout << "ablate: " << outcomes.size() << " config(s) over " << units.size()
                  << " unit(s) -> " << out_dir.string() << "\n";
        return kExitOk;
    } catch (const Error& e) {
        print_error(e);
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------
// exemplars build
// ---------------------------------------------------------------------------

int cmd_exemplars_build(const ExemplarsArgs& args) {
    try {
        if (args.neuron.empty()) fail("ConfigError", "exemplars build needs --neuron <key>");
        const auto& vocab = scene::default_vocabulary();
        const auto& entry = resolve_neuron(neurons::default_roster(), args.neuron);
        const auto corpus =
            tools::make_synthetic_corpus(vocab, args.config.corpus_size, args.config.seed);
        const std::string cache_dir = args.config.cache_dir.empty()
                                          ? (std::filesystem::path(args.config.out_dir) /
                                             "exemplar_cache")
                                                .string()
                                          : args.config.cache_dir;
        const neurons::ExemplarSet set = neurons::build_exemplar_index(
            *neurons::make_synthetic_system(entry, &vocab), corpus, 15, cache_dir);
        std::cout << "exemplars: " << entry.name << " floor=" << set.activation_floor << " -> "
                  << cache_dir << "\n";
        return kExitOk;
    } catch (const Error& e) {
        print_error(e);
        return exit_code_for(e);
    }
}

}  // namespace maialab::cli
