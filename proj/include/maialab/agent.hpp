#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maialab/interp.hpp"
#include "maialab/toolkit.hpp"

namespace maialab::agent {

enum class TaskKind { neuron_description, spurious_classification, bias_identification };

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

/// The function name a template's programs must define.
std::string program_function_name(TaskKind kind);

struct TaskPrompt {
    TaskKind kind = TaskKind::neuron_description;
    /// Template slots: "class_label" (bias), "classes" and "environments"
    /// (spurious; comma-separated lists).
    std::map<std::string, std::string> slots;
};

struct AblationConfig {
    bool exemplars_enabled = true;
    bool generation_enabled = true;  // text2image and edit_images
    std::string generator_variant = "scene";

    void validate() const;  // at least one source of inputs must stay on
    std::set<std::string> enabled_tools() const;
};

/// System prompt (tool and system reference, filtered to enabled tools) plus
/// the rendered task prompt. Throws TemplateError on unknown templates or
/// missing required slots.
std::pair<std::string, std::string> assemble_prompts(const TaskPrompt& task,
                                                     const AblationConfig& ablation);

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

enum class Role { system, user, agent, observation };

std::string role_name(Role role);

struct Attachment {
    std::string caption;  // always carries the reported activation
    neurons::ImageHandle image;
    std::string path;  // relative PNG path once persisted
};

struct Message {
    Role role = Role::user;
    std::string text;
    std::vector<Attachment> images;
};

struct Transcript {
    std::vector<Message> messages;
    int rounds_used = 0;
};

/// Canonical JSONL: one message per line, image refs by path, no timestamps.
std::string transcript_to_jsonl(const Transcript& transcript);
Transcript transcript_from_jsonl(const std::string& text);

// ---------------------------------------------------------------------------
// Final reports
// ---------------------------------------------------------------------------

struct FinalReport {
    TaskKind kind = TaskKind::neuron_description;
    std::string description;              // [DESCRIPTION] or [REASONING]
    std::vector<std::string> labels;      // [LABEL] / [LABEL n] in order
    std::optional<bool> selective;        // SELECTIVE(true) / SPURIOUS(false)
    std::string bias_text;                // [BIAS]
    bool parse_ok = false;
    int rounds_used = 0;
    bool aborted = false;
    std::string diagnostics;
};

bool has_final_markers(const std::string& message, TaskKind kind);

/// Always returns a report; missing or duplicated markers set parse_ok=false
/// with diagnostics.
FinalReport parse_final(const std::string& message, TaskKind kind);

/// Renders a report back into marker form; parse_final round-trips it.
std::string render_final(const FinalReport& report);

std::string report_to_json(const FinalReport& report);
FinalReport report_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Program extraction & execution
// ---------------------------------------------------------------------------

struct ExperimentProgram {
    interp::FunctionDef fn;
    std::string source;
};

/// Locates exactly one fenced code block and validates the function shape
/// (right name for the template, two parameters). Throws ExtractionError or
/// ProgramShapeError.
ExperimentProgram extract_program(const std::string& message, TaskKind kind);

struct Observation {
    std::string text;
    std::vector<Attachment> images;
    bool error = false;
    bool timeout = false;
};

/// Runs the program with exactly two bindings (system, tools) under the
/// sandbox limits and bundles the return value, new log entries, and any
/// error text into an observation.
Observation execute_program(const ExperimentProgram& program, neurons::SystemHandle system,
                            tools::ToolContext& ctx, const interp::SandboxLimits& limits = {});

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

class BackboneClient {
public:
    virtual ~BackboneClient() = default;
    virtual std::string send(const Transcript& transcript) = 0;
};

struct SessionOptions {
    int round_budget = 15;
    interp::SandboxLimits sandbox;
    bool final_nudge = false;  // one "final answer only" retry at budget exhaustion
    std::filesystem::path run_dir;  // when set, persists transcript/report/images
    std::string artifact_stem = "session";
};

struct SessionResult {
    FinalReport report;
    Transcript transcript;
};

/// Elicit -> (parse final | extract+execute -> observe) loop under the round
/// budget. Malformed agent output becomes a corrective observation and
/// consumes its round. Backbone failures mark the report aborted and keep the
/// partial transcript.
SessionResult run_session(BackboneClient& backbone, neurons::SystemHandle system,
                          tools::ToolContext& ctx, const TaskPrompt& task,
                          const AblationConfig& ablation = {}, const SessionOptions& options = {});

// ---------------------------------------------------------------------------
// Scripted backbones (deterministic test doubles for the VLM).
// ---------------------------------------------------------------------------

enum class Playbook { describe_default, spurious_default, bias_default };

Playbook playbook_from_name(const std::string& name);
std::string playbook_name(Playbook playbook);

/// A deterministic client that runs the playbook's fixed experimental
/// protocol, reading tool availability from the system prompt and
/// observations from the transcript. The vocabulary bounds its probe space.
std::unique_ptr<BackboneClient> scripted_backbone(Playbook playbook,
                                                  const scene::ConceptVocabulary* vocab = nullptr);

}  // namespace maialab::agent
