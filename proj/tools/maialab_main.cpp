#include <CLI11.hpp>

#include <iostream>

#include "maialab/commands.hpp"

using namespace maialab;

namespace {

/// Shared flag wiring: defaults -> config file -> MAIALAB_* env -> flags.
struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backbone;
    std::optional<int> budget;
    std::optional<std::string> out;
    std::optional<std::string> generator;
    std::optional<std::uint64_t> corpus_size;
    std::optional<int> concurrency;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "run config (TOML)");
        app->add_option("--seed", seed, "run seed");
        app->add_option("--backbone", backbone, "backbone client (scripted)");
        app->add_option("--budget", budget, "round budget per session");
        app->add_option("--out", out, "output directory");
        app->add_option("--generator", generator, "generator client key");
        app->add_option("--corpus-size", corpus_size, "reference corpus size");
        app->add_option("--concurrency", concurrency, "worker pool size");
    }

    cli::RunConfig resolve() const {
        cli::RunConfig config;
        if (!config_path.empty()) config = cli::RunConfig::from_toml_file(config_path);
        config.apply_env_overrides();
        if (seed) config.seed = *seed;
        if (backbone) config.backbone = *backbone;
        if (budget) config.round_budget = *budget;
        if (out) config.out_dir = *out;
        if (generator) config.generator = *generator;
        if (corpus_size) config.corpus_size = *corpus_size;
        if (concurrency) config.concurrency = *concurrency;
        config.validate();
        return config;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interpretability-agent laboratory"};
    app.require_subcommand(1);

    CommonFlags describe_flags;
    std::string describe_neuron, describe_roster = "table_a2";
    CLI::App* describe = app.add_subcommand("describe", "run neuron-description sessions");
    describe_flags.attach(describe);
    describe->add_option("--neuron", describe_neuron, "single roster key (e.g. mono/stripes)");
    describe->add_option("--roster", describe_roster, "builtin roster name or JSON path");

    CommonFlags eval_flags;
    std::string eval_manifest;
    CLI::App* eval_cmd = app.add_subcommand("eval", "predictive evaluation of descriptions");
    eval_flags.attach(eval_cmd);
    eval_cmd->add_option("--manifest", eval_manifest, "evaluation manifest (JSON)")->required();

    CLI::App* audit_cmd = app.add_subcommand("audit", "model-level audits");
    audit_cmd->require_subcommand(1);

    CommonFlags spurious_flags;
    std::string planted = "default";
    bool dump_bundle = false;
    CLI::App* spurious = audit_cmd->add_subcommand("spurious", "spurious-feature removal");
    spurious_flags.attach(spurious);
    std::string spurious_dataset;
    spurious->add_option("--planted", planted, "planted dataset spec name");
    spurious->add_option("--dataset", spurious_dataset, "external dataset bundle directory");
    spurious->add_flag("--dump-bundle", dump_bundle, "write the dataset bundle too");

    CommonFlags bias_flags;
    std::string bias_class, planted_bias;
    CLI::App* bias = audit_cmd->add_subcommand("bias", "class-level bias surfacing");
    bias_flags.attach(bias);
    bias->add_option("--class", bias_class, "class label under investigation")->required();
    bias->add_option("--planted-bias", planted_bias,
                     "context concept the planted classifier depends on (omit for unbiased)");

    CommonFlags ablate_flags;
    std::string ablate_roster = "table_a2";
    std::size_t ablate_limit = 6;
    CLI::App* ablate = app.add_subcommand("ablate", "tool-ablation sweep");
    ablate_flags.attach(ablate);
    ablate->add_option("--roster", ablate_roster, "builtin roster name or JSON path");
    ablate->add_option("--limit", ablate_limit, "number of units to sweep");

    CommonFlags exemplars_flags;
    std::string exemplars_neuron;
    CLI::App* exemplars = app.add_subcommand("exemplars", "exemplar index maintenance");
    CLI::App* exemplars_build = exemplars->add_subcommand("build", "build one unit's index");
    exemplars_flags.attach(exemplars_build);
    exemplars_build->add_option("--neuron", exemplars_neuron, "roster key")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (describe->parsed()) {
            cli::DescribeArgs args;
            args.config = describe_flags.resolve();
            args.neuron = describe_neuron;
            args.roster = describe_roster;
            return cmd_describe(args);
        }
        if (eval_cmd->parsed()) {
            cli::EvalArgs args;
            args.config = eval_flags.resolve();
            args.manifest_path = eval_manifest;
            return cmd_eval(args);
        }
        if (spurious->parsed()) {
            cli::AuditSpuriousArgs args;
            args.config = spurious_flags.resolve();
            if (!spurious_dataset.empty()) args.config.dataset_path = spurious_dataset;
            args.planted = planted;
            args.dump_bundle = dump_bundle;
            return cmd_audit_spurious(args);
        }
        if (bias->parsed()) {
            cli::AuditBiasArgs args;
            args.config = bias_flags.resolve();
            args.class_label = bias_class;
            args.planted_bias = planted_bias;
            return cmd_audit_bias(args);
        }
        if (ablate->parsed()) {
            cli::AblateArgs args;
            args.config = ablate_flags.resolve();
            args.roster = ablate_roster;
            args.limit = ablate_limit;
            return cmd_ablate(args);
        }
        if (exemplars_build->parsed()) {
            cli::ExemplarsArgs args;
            args.config = exemplars_flags.resolve();
            args.neuron = exemplars_neuron;
            return cmd_exemplars_build(args);
        }
    } catch (const maialab::Error& e) {
        std::cerr << "{\"error\": \"" << e.code() << "\", \"message\": \"config resolution failed\"}"
                  << "\n";
        return cli::kExitConfig;
    }
    return cli::kExitConfig;
}
