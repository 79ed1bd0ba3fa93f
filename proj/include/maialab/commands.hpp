#pragma once

#include <string>

#include "maialab/config.hpp"

namespace maialab::cli {

// Exit codes shared by every command: 0 ok, 2 config/registry error,
// 3 partial failure (artifacts for the failed parts are preserved).
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct DescribeArgs {
    RunConfig config;
    std::string neuron;              // single roster key; empty = whole roster
    std::string roster = "table_a2"; // builtin name or a roster JSON path
};
int cmd_describe(const DescribeArgs& args);

struct EvalArgs {
    RunConfig config;
    std::string manifest_path;
};
int cmd_eval(const EvalArgs& args);

struct AuditSpuriousArgs {
    RunConfig config;
    std::string planted = "default";
    bool dump_bundle = false;
};
int cmd_audit_spurious(const AuditSpuriousArgs& args);

struct AuditBiasArgs {
    RunConfig config;
    std::string class_label;
    std::string planted_bias;  // context concept; empty plants an unbiased class
};
int cmd_audit_bias(const AuditBiasArgs& args);

struct AblateArgs {
    RunConfig config;
    std::string roster = "table_a2";
    size_t limit = 6;  // neurons per config sweep
};
int cmd_ablate(const AblateArgs& args);

struct ExemplarsArgs {
    RunConfig config;
    std::string neuron;
};
int cmd_exemplars_build(const ExemplarsArgs& args);

}  // namespace maialab::cli
