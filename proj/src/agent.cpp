#include "maialab/agent.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "maialab/io.hpp"

namespace maialab::agent {

using nlohmann::json;

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::neuron_description: return "neuron-description";
        case TaskKind::spurious_classification: return "spurious-classification";
        case TaskKind::bias_identification: return "bias-identification";
    }
    return "neuron-description";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "neuron-description") return TaskKind::neuron_description;
    if (name == "spurious-classification") return TaskKind::spurious_classification;
    if (name == "bias-identification") return TaskKind::bias_identification;
    fail("TemplateError", "unknown task template '" + name + "'");
}

std::string program_function_name(TaskKind kind) {
    return kind == TaskKind::neuron_description ? "run_experiment" : "execute_command";
}

void AblationConfig::validate() const {
    if (!exemplars_enabled && !generation_enabled)
        fail("ConfigError", "at least one of exemplars/generation must stay enabled");
}

std::set<std::string> AblationConfig::enabled_tools() const {
    std::set<std::string> enabled = {"describe_images", "summarize_images", "log_experiment"};
    if (exemplars_enabled) enabled.insert("dataset_exemplars");
    if (generation_enabled) {
        enabled.insert("text2image");
        enabled.insert("edit_images");
    }
    return enabled;
}

// ---------------------------------------------------------------------------
// API reference & task templates
// ---------------------------------------------------------------------------

namespace {

std::string api_reference(const std::set<std::string>& enabled, TaskKind kind) {
    const std::string log_name =
        kind == TaskKind::neuron_description ? "log_experiment" : "save_experiment_log";
    std::ostringstream out;
    out << "## Experiment API\n"
           "Programs receive two bindings and nothing else: `system`, the instrumented unit, "
           "and `tools`, the experiment library. The whitelisted builtins are len, str, range, "
           "min, max, abs, round, sorted, int, and float. There is no import mechanism and no "
           "file or network access; programs time out at the session deadline.\n\n";
    out << "### system.neuron\n"
           "system.neuron(image_list) -> (activation_list, masked_image_list)\n"
           "Runs the unit on each image. Returns the unit's activation value per image and a "
           "masked copy of each image in which non-activating pixels are darkened and the "
           "activating evidence is outlined in red. List order follows the input.\n\n";
    if (enabled.count("dataset_exemplars"))
        out << "### tools.dataset_exemplars\n"
               "tools.dataset_exemplars(system) -> (activation_list, masked_image_list)\n"
               "Returns the 15 images from the reference corpus that drive the unit hardest, "
               "masked to their activating evidence and sorted by activation. Also pins "
               "tools.activation_threshold to the weakest exemplar activation; treat probe "
               "results below that floor as weak evidence.\n\n";
    if (enabled.count("text2image"))
        out << "### tools.text2image\n"
               "tools.text2image(prompt_list) -> image_list\n"
               "Synthesizes one image per prompt (batches of at most 16). Use it to test the "
               "unit on controlled content.\n\n"
               "### tools.edit_images\n"
               "tools.edit_images(prompt_list, instruction_list) -> (image_list, title_list)\n"
               "Generates an image per prompt, applies the matching instruction, and returns "
               "originals interleaved with their edited versions ([orig1, edit1, orig2, ...]) "
               "plus aligned titles. Phrase instructions as positive changes such as "
               "\"replace the dog with a cat\" or \"change the color of the dog to red\"; "
               "instructions that start with remove/delete/erase are rejected.\n\n";
    out << "### tools.describe_images\n"
           "tools.describe_images(image_list, title_list) -> text\n"
           "Asks a fresh describer with no knowledge of this session for an impartial "
           "description of each image's unmasked regions. Returns one \"title: description\" "
           "line per image.\n\n";
    out << "### tools.summarize_images\n"
           "tools.summarize_images(image_list) -> text\n"
           "Reports what is common to every image in the list, judged on unmasked regions "
           "only. Needs at least two images.\n\n";
    out << "### tools." << log_name << "\n"
        << "tools." << log_name << "(activation_list, image_list, title_list, notes) -> None\n"
        << "Documents the experiment. Logged records (and only logged records) appear in your "
           "next observation and stay available for later rounds; notes may be a string or a "
           "list of strings.\n";
    return out.str();
}

std::string code_block_instructions(TaskKind kind) {
    const std::string fn = program_function_name(kind);
    const std::string log_name =
        kind == TaskKind::neuron_description ? "log_experiment" : "save_experiment_log";
    return "Write each experiment as exactly one fenced code block that defines exactly one "
           "function:\n"
           "```python\n"
           "def " + fn + "(system, tools):\n"
           "    ...\n"
           "    tools." + log_name + "(...)\n"
           "```\n"
           "Include only that single function and finish every experiment by logging what you "
           "observed. Each reply is either one experiment or your final output, never both.\n";
}

std::string description_template() {
    return "Your task is to work out which visual concepts drive the unit bound to `system` "
           "and then describe them.\n\n" +
           code_block_instructions(TaskKind::neuron_description) +
           "\nUnits may respond to one concept, to several unrelated concepts, or to a concept "
           "only when another is present, so test both broad and narrow hypotheses before "
           "concluding. When your evidence is conclusive, reply without code in exactly this "
           "format:\n"
           "[DESCRIPTION]: <a complete, specific account of what the unit responds to>\n"
           "[LABEL]: <a short label>\n"
           "If the unit responds to several distinct concepts, list the labels instead as:\n"
           "[LABEL 1]: <first label>\n"
           "[LABEL 2]: <second label>\n";
}

std::string spurious_template(const TaskPrompt& task) {
    auto classes_it = task.slots.find("classes");
    auto envs_it = task.slots.find("environments");
    if (classes_it == task.slots.end() || trim(classes_it->second).empty())
        fail("TemplateError", "spurious-classification needs a 'classes' slot");
    if (envs_it == task.slots.end() || trim(envs_it->second).empty())
        fail("TemplateError", "spurious-classification needs an 'environments' slot");

    std::ostringstream out;
    out << "You are auditing one final-layer unit of a classifier. The classifier was trained "
           "to recognize these classes:\n"
           "classes under test:\n";
    int index = 1;
    std::istringstream classes(classes_it->second);
    std::string item;
    while (std::getline(classes, item, ',')) out << index++ << ". " << trim(item) << "\n";
    out << "environments seen in training: " << envs_it->second << "\n\n";
    out << "Decide whether the unit is SELECTIVE or SPURIOUS. SELECTIVE means the unit "
           "responds to exactly one of the classes, does so consistently across the training "
           "environments, and does not respond to any other class or to environment content "
           "on its own. SPURIOUS means anything else: responses to multiple classes, responses "
           "driven by the environment, or responses that appear only in one context. A unit "
           "counts as responding when it returns a highlighted region with a red outline. "
           "If the evidence is mixed or you are unsure, lean toward SPURIOUS.\n\n";
    out << code_block_instructions(TaskKind::spurious_classification);
    out << "\nStay close to the training distribution when generating probes. Once a stopping "
           "criterion is met, reply without code in exactly this format:\n"
           "[REASONING]: <the evidence for your verdict>\n"
           "[LABEL]: <SELECTIVE or SPURIOUS>\n";
    return out.str();
}

std::string bias_template(const TaskPrompt& task) {
    auto label_it = task.slots.find("class_label");
    if (label_it == task.slots.end() || trim(label_it->second).empty())
        fail("TemplateError", "bias-identification needs a 'class_label' slot");
    std::ostringstream out;
    out << "The unit bound to `system` outputs the probability this classifier assigns to one "
           "class for any input image.\n"
           "The class under investigation is \"" << label_it->second << "\".\n\n"
        << "Your task is to surface biases in the unit's behavior: find contexts or subsets of "
           "the class where the probability runs unusually high or unusually low even though "
           "the class is present. Probe the class alone and in varied contexts and compare.\n\n"
        << code_block_instructions(TaskKind::bias_identification)
        << "\nWhen you are confident, reply without code in exactly this format:\n"
           "[BIAS]: <your finding, or a statement that behavior is uniform across tested "
           "contexts>\n";
    return out.str();
}

}  // namespace

std::pair<std::string, std::string> assemble_prompts(const TaskPrompt& task,
                                                     const AblationConfig& ablation) {
    ablation.validate();
    const std::string system_prompt = api_reference(ablation.enabled_tools(), task.kind);
    std::string user_prompt;
    switch (task.kind) {
        case TaskKind::neuron_description: user_prompt = description_template(); break;
        case TaskKind::spurious_classification: user_prompt = spurious_template(task); break;
        case TaskKind::bias_identification: user_prompt = bias_template(task); break;
    }
    return {system_prompt, user_prompt};
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

std::string role_name(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::agent: return "agent";
        case Role::observation: return "observation";
    }
    return "user";
}

namespace {

Role role_from_name(const std::string& name) {
    if (name == "system") return Role::system;
    if (name == "user") return Role::user;
    if (name == "agent") return Role::agent;
    if (name == "observation") return Role::observation;
    fail("SchemaError", "unknown role '" + name + "'");
}

}  // namespace

std::string transcript_to_jsonl(const Transcript& transcript) {
    std::ostringstream out;
    for (const auto& message : transcript.messages) {
        json j;
        j["role"] = role_name(message.role);
        j["text"] = message.text;
        if (!message.images.empty()) {
            j["images"] = json::array();
            for (const auto& attachment : message.images)
                j["images"].push_back(
                    {{"caption", attachment.caption},
                     {"path", attachment.path.empty()
                                  ? ("images/" + hex64(attachment.image.visual_hash()) + ".png")
                                  : attachment.path}});
        }
        out << j.dump() << "\n";
    }
    json tail;
    tail["rounds_used"] = transcript.rounds_used;
    out << tail.dump() << "\n";
    return out.str();
}

Transcript transcript_from_jsonl(const std::string& text) {
    Transcript transcript;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        if (j.contains("rounds_used")) {
            transcript.rounds_used = j.at("rounds_used").get<int>();
            continue;
        }
        Message message;
        message.role = role_from_name(j.at("role").get<std::string>());
        message.text = j.at("text").get<std::string>();
        if (j.contains("images"))
            for (const auto& a : j.at("images")) {
                Attachment attachment;
                attachment.caption = a.at("caption").get<std::string>();
                attachment.path = a.at("path").get<std::string>();
                message.images.push_back(std::move(attachment));
            }
        transcript.messages.push_back(std::move(message));
    }
    return transcript;
}

// ---------------------------------------------------------------------------
// Final-report parsing
// ---------------------------------------------------------------------------

namespace {

struct MarkerLine {
    std::string marker;  // "DESCRIPTION", "LABEL", "LABEL 2", "REASONING", "BIAS"
    std::string value;
};

std::vector<MarkerLine> scan_markers(const std::string& message) {
    std::vector<MarkerLine> lines;
    std::istringstream in(message);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.size() < 3 || t[0] != '[') continue;
        const size_t close = t.find("]:");
        if (close == std::string::npos) continue;
        MarkerLine m;
        m.marker = t.substr(1, close - 1);
        m.value = trim(t.substr(close + 2));
        lines.push_back(std::move(m));
    }
    return lines;
}

bool is_label_marker(const std::string& marker) {
    if (marker == "LABEL") return true;
    if (!starts_with(marker, "LABEL ")) return false;
    const std::string n = marker.substr(6);
    return !n.empty() && n.find_first_not_of("0123456789") == std::string::npos;
}

}  // namespace

bool has_final_markers(const std::string& message, TaskKind kind) {
    switch (kind) {
        case TaskKind::neuron_description:
            return message.find("[DESCRIPTION]:") != std::string::npos;
        case TaskKind::spurious_classification:
            return message.find("[REASONING]:") != std::string::npos;
        case TaskKind::bias_identification:
            return message.find("[BIAS]:") != std::string::npos;
    }
    return false;
}

FinalReport parse_final(const std::string& message, TaskKind kind) {
    FinalReport report;
    report.kind = kind;
    const std::vector<MarkerLine> markers = scan_markers(message);

    int descriptions = 0, reasonings = 0, biases = 0, plain_labels = 0;
    for (const auto& m : markers) {
        if (m.marker == "DESCRIPTION") {
            ++descriptions;
            report.description = m.value;
        } else if (m.marker == "REASONING") {
            ++reasonings;
            report.description = m.value;
        } else if (m.marker == "BIAS") {
            ++biases;
            report.bias_text = m.value;
        } else if (is_label_marker(m.marker)) {
            if (m.marker == "LABEL") ++plain_labels;
            report.labels.push_back(m.value);
        }
    }

    auto diag = [&](const std::string& text) {
        report.parse_ok = false;
        report.diagnostics = text;
    };

    switch (kind) {
        case TaskKind::neuron_description: {
            if (descriptions != 1)
                diag("expected exactly one [DESCRIPTION], found " + std::to_string(descriptions));
            else if (report.labels.empty())
                diag("no [LABEL] markers found");
            else
                report.parse_ok = true;
            break;
        }
        case TaskKind::spurious_classification: {
            if (reasonings != 1) {
                diag("expected exactly one [REASONING], found " + std::to_string(reasonings));
                break;
            }
            if (plain_labels != 1 || report.labels.size() != 1) {
                diag("expected exactly one [LABEL] carrying the verdict");
                break;
            }
            const std::string verdict = to_lower(report.labels[0]);
            if (verdict.find("selective") != std::string::npos)
                report.selective = true;
            else if (verdict.find("spurious") != std::string::npos)
                report.selective = false;
            else {
                diag("verdict label is neither SELECTIVE nor SPURIOUS: " + report.labels[0]);
                break;
            }
            report.parse_ok = true;
            break;
        }
        case TaskKind::bias_identification: {
            if (biases != 1)
                diag("expected exactly one [BIAS], found " + std::to_string(biases));
            else if (report.bias_text.empty())
                diag("[BIAS] marker carries no text");
            else
                report.parse_ok = true;
            break;
        }
    }
    return report;
}

std::string render_final(const FinalReport& report) {
    std::ostringstream out;
    switch (report.kind) {
        case TaskKind::neuron_description:
            out << "[DESCRIPTION]: " << report.description << "\n";
            if (report.labels.size() == 1)
                out << "[LABEL]: " << report.labels[0] << "\n";
            else
                for (size_t i = 0; i < report.labels.size(); ++i)
                    out << "[LABEL " << (i + 1) << "]: " << report.labels[i] << "\n";
            break;
        case TaskKind::spurious_classification:
            out << "[REASONING]: " << report.description << "\n";
            out << "[LABEL]: " << (report.selective.value_or(false) ? "SELECTIVE" : "SPURIOUS")
                << "\n";
            break;
        case TaskKind::bias_identification:
            out << "[BIAS]: " << report.bias_text << "\n";
            break;
    }
    return out.str();
}

std::string report_to_json(const FinalReport& report) {
    json j;
    j["kind"] = task_kind_name(report.kind);
    j["description"] = report.description;
    j["labels"] = report.labels;
    if (report.selective.has_value())
        j["verdict"] = *report.selective ? "SELECTIVE" : "SPURIOUS";
    j["bias_text"] = report.bias_text;
    j["parse_ok"] = report.parse_ok;
    j["rounds_used"] = report.rounds_used;
    j["aborted"] = report.aborted;
    j["diagnostics"] = report.diagnostics;
    return j.dump(2);
}

FinalReport report_from_json(const std::string& text) {
    const json j = json::parse(text);
    FinalReport report;
    report.kind = task_kind_from_name(j.at("kind").get<std::string>());
    report.description = j.value("description", "");
    report.labels = j.value("labels", std::vector<std::string>{});
    if (j.contains("verdict")) report.selective = j.at("verdict").get<std::string>() == "SELECTIVE";
    report.bias_text = j.value("bias_text", "");
    report.parse_ok = j.value("parse_ok", false);
    report.rounds_used = j.value("rounds_used", 0);
    report.aborted = j.value("aborted", false);
    report.diagnostics = j.value("diagnostics", "");
    return report;
}

// ---------------------------------------------------------------------------
// Program extraction
// ---------------------------------------------------------------------------

ExperimentProgram extract_program(const std::string& message, TaskKind kind) {
    std::vector<std::string> blocks;
    std::istringstream in(message);
    std::string line;
    std::string current;
    bool inside = false;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (starts_with(t, "```")) {
            if (!inside) {
                inside = true;
                current.clear();
            } else {
                inside = false;
                blocks.push_back(current);
            }
            continue;
        }
        if (inside) current += line + "\n";
    }
    if (inside) fail("ExtractionError", "unterminated fenced code block");
    if (blocks.size() != 1)
        fail("ExtractionError", "expected exactly one fenced code block, found " +
                                    std::to_string(blocks.size()));

    ExperimentProgram program;
    program.source = blocks[0];
    program.fn = interp::parse_program(program.source);

    const std::string expected = program_function_name(kind);
    if (program.fn.name != expected)
        fail("ProgramShapeError", "the function must be named " + expected + " for this task, "
                                      "got " + program.fn.name);
    if (program.fn.params.size() != 2)
        fail("ProgramShapeError", "the function must take exactly two parameters "
                                  "(system, tools), got " +
                                      std::to_string(program.fn.params.size()));
    return program;
}

// ---------------------------------------------------------------------------
// Execution & observation rendering
// ---------------------------------------------------------------------------

namespace {

std::string fmt_number(double v) {
    if (std::abs(v - std::round(v)) < 1e-9) return std::to_string(static_cast<long long>(std::llround(v)));
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::vector<std::string> to_string_vec(const interp::Value& v) {
    std::vector<std::string> out;
    for (const auto& item : *v.as_list()) out.push_back(item.as_string());
    return out;
}

std::vector<neurons::ImageHandle> to_image_vec(const interp::Value& v) {
    std::vector<neurons::ImageHandle> out;
    for (const auto& item : *v.as_list()) out.push_back(item.as_image());
    return out;
}

std::vector<double> to_double_vec(const interp::Value& v) {
    std::vector<double> out;
    for (const auto& item : *v.as_list()) out.push_back(item.as_number());
    return out;
}

interp::Value images_to_value(const std::vector<neurons::ImageHandle>& images) {
    std::vector<interp::Value> out;
    out.reserve(images.size());
    for (const auto& image : images) out.push_back(interp::Value(image));
    return interp::Value::make_list(std::move(out));
}

}  // namespace

Observation execute_program(const ExperimentProgram& program, neurons::SystemHandle system,
                            tools::ToolContext& ctx, const interp::SandboxLimits& limits) {
    interp::HostObject system_host;
    system_host.name = "system";
    system_host.methods["neuron"] = [&](std::vector<interp::Value>& args) {
        if (args.size() != 1) fail("ProgramError", "system.neuron(image_list) takes one argument");
        const auto images = to_image_vec(args[0]);
        const auto results = neurons::probe(*system, images);
        std::vector<interp::Value> activations;
        std::vector<neurons::ImageHandle> masked;
        for (const auto& result : results) {
            activations.push_back(interp::Value(result.reported_activation));
            masked.push_back(result.masked_image);
        }
        return interp::Value::make_list(
            {interp::Value::make_list(std::move(activations)), images_to_value(masked)});
    };

    interp::HostObject tools_host;
    tools_host.name = "tools";
    tools_host.attributes["activation_threshold"] = [&ctx] {
        return ctx.activation_threshold ? interp::Value(*ctx.activation_threshold)
                                        : interp::Value::none();
    };
    tools_host.methods["dataset_exemplars"] = [&](std::vector<interp::Value>&) {
        const tools::ExemplarReply reply = tools::dataset_exemplars(ctx, *system);
        std::vector<interp::Value> activations;
        for (double a : reply.activations) activations.push_back(interp::Value(a));
        return interp::Value::make_list(
            {interp::Value::make_list(std::move(activations)), images_to_value(reply.images)});
    };
    tools_host.methods["text2image"] = [&](std::vector<interp::Value>& args) {
        if (args.size() != 1) fail("ProgramError", "text2image(prompt_list) takes one argument");
        return images_to_value(tools::text2image(ctx, to_string_vec(args[0])));
    };
    tools_host.methods["edit_images"] = [&](std::vector<interp::Value>& args) {
        if (args.size() != 2)
            fail("ProgramError", "edit_images(prompt_list, instruction_list) takes two arguments");
        const tools::EditReply reply =
            tools::edit_images(ctx, to_string_vec(args[0]), to_string_vec(args[1]));
        std::vector<interp::Value> titles;
        for (const auto& t : reply.all_titles) titles.push_back(interp::Value(t));
        return interp::Value::make_list(
            {images_to_value(reply.all_images), interp::Value::make_list(std::move(titles))});
    };
    tools_host.methods["describe_images"] = [&](std::vector<interp::Value>& args) {
        if (args.size() != 2)
            fail("ProgramError", "describe_images(image_list, title_list) takes two arguments");
        return interp::Value(
            tools::describe_images(ctx, to_image_vec(args[0]), to_string_vec(args[1])));
    };
    tools_host.methods["summarize_images"] = [&](std::vector<interp::Value>& args) {
        if (args.size() != 1)
            fail("ProgramError", "summarize_images(image_list) takes one argument");
        return interp::Value(tools::summarize_images(ctx, to_image_vec(args[0])));
    };
    auto log_binding = [&](std::vector<interp::Value>& args) {
        if (args.size() != 4)
            fail("ProgramError",
                 "the log function takes (activation_list, image_list, title_list, notes)");
        std::string notes;
        if (args[3].is_string()) {
            notes = args[3].as_string();
        } else if (args[3].is_list()) {
            for (const auto& item : *args[3].as_list()) {
                if (!notes.empty()) notes += "\n";
                notes += item.is_string() ? item.as_string() : item.repr();
            }
        } else if (!args[3].is_none()) {
            notes = args[3].repr();
        }
        tools::log_experiment(ctx, to_double_vec(args[0]), to_image_vec(args[1]),
                              to_string_vec(args[2]), notes);
        return interp::Value::none();
    };
    tools_host.methods["log_experiment"] = log_binding;
    tools_host.methods["save_experiment_log"] = log_binding;

    const size_t log_before = ctx.log.size();
    const std::optional<double> threshold_before = ctx.activation_threshold;

    Observation observation;
    std::ostringstream text;
    try {
        const interp::Value result =
            interp::execute_function(program.fn, {&system_host, &tools_host}, limits);
        text << "[RETURN]: " << result.repr() << "\n";
    } catch (const Error& e) {
        observation.error = true;
        observation.timeout = e.code() == "Timeout";
        text << (observation.timeout ? "[TIMEOUT]: " : "[ERROR]: ") << e.what() << "\n";
    }

    if (ctx.activation_threshold != threshold_before && ctx.activation_threshold)
        text << "[THRESHOLD]: activation_threshold = " << fmt_number(*ctx.activation_threshold)
             << "\n";

    for (size_t i = log_before; i < ctx.log.size(); ++i) {
        const tools::LogEntry& entry = ctx.log[i];
        text << "[LOG " << entry.round_index << "]\n";
        bool any_below = false;
        for (const auto& record : entry.records) {
            text << "- title=\"" << record.title << "\" activation="
                 << fmt_number(record.reported_activation) << " image=" << record.image_ref
                 << "\n";
            if (ctx.activation_threshold &&
                record.reported_activation < *ctx.activation_threshold)
                any_below = true;
            Attachment attachment;
            attachment.caption =
                record.title + " | activation=" + fmt_number(record.reported_activation);
            attachment.image = record.image;
            attachment.image.reported_activation = record.reported_activation;
            observation.images.push_back(std::move(attachment));
        }
        if (!entry.notes.empty()) text << "notes:\n" << entry.notes << "\n";
        if (any_below)
            text << "note: some activations fall below the exemplar floor ("
                 << fmt_number(*ctx.activation_threshold)
                 << "); keep experimenting before concluding.\n";
        text << "[END LOG]\n";
    }

    observation.text = text.str();
    return observation;
}

// ---------------------------------------------------------------------------
// Session loop
// ---------------------------------------------------------------------------

namespace {

void persist_session(const SessionOptions& options, const Transcript& transcript,
                     const FinalReport& report) {
    if (options.run_dir.empty()) return;
    io::ensure_dirs(options.run_dir);

    Transcript stamped = transcript;
    for (auto& message : stamped.messages) {
        for (auto& attachment : message.images) {
            if (attachment.path.empty())
                attachment.path = "images/" + hex64(attachment.image.visual_hash()) + ".png";
            if (attachment.image.has_scene() || attachment.image.has_pixels()) {
                const auto png_path = options.run_dir / attachment.path;
                if (!std::filesystem::exists(png_path))
                    io::atomic_write_file(png_path,
                                          scene::encode_png(attachment.image.to_pixels()));
            }
        }
    }
    io::atomic_write_file(options.run_dir / (options.artifact_stem + ".transcript.jsonl"),
                          transcript_to_jsonl(stamped));
    io::atomic_write_file(options.run_dir / (options.artifact_stem + ".report.json"),
                          report_to_json(report));
}

}  // namespace

SessionResult run_session(BackboneClient& backbone, neurons::SystemHandle system,
                          tools::ToolContext& ctx, const TaskPrompt& task,
                          const AblationConfig& ablation, const SessionOptions& options) {
    ablation.validate();
    ctx.enabled_tools = ablation.enabled_tools();

    const auto [system_prompt, user_prompt] = assemble_prompts(task, ablation);
    Transcript transcript;
    transcript.messages.push_back({Role::system, system_prompt, {}});
    transcript.messages.push_back({Role::user, user_prompt, {}});

    FinalReport report;
    report.kind = task.kind;
    bool got_final = false;

    for (int round = 1; round <= options.round_budget; ++round) {
        ctx.current_round = round;
        std::string message;
        try {
            message = backbone.send(transcript);
        } catch (const std::exception& e) {
            report.aborted = true;
            report.diagnostics = std::string("SessionAborted: ") + e.what();
            break;
        }
        transcript.messages.push_back({Role::agent, message, {}});
        transcript.rounds_used = round;

        if (has_final_markers(message, task.kind)) {
            report = parse_final(message, task.kind);
            report.rounds_used = round;
            got_final = true;
            break;
        }

        Observation observation;
        try {
            const ExperimentProgram program = extract_program(message, task.kind);
            ctx.current_program = program.source;
            observation = execute_program(program, system, ctx, options.sandbox);
        } catch (const Error& e) {
            observation.error = true;
            observation.text = "[FORMAT ERROR]: " + std::string(e.what()) +
                               "\nReply with exactly one fenced code block defining " +
                               program_function_name(task.kind) +
                               "(system, tools), or with your final output markers.\n";
        }
        transcript.messages.push_back({Role::observation, observation.text, observation.images});
    }

    if (!got_final && !report.aborted) {
        if (options.final_nudge) {
            transcript.messages.push_back(
                {Role::observation,
                 "The round budget is exhausted. Reply with your final output markers only.\n",
                 {}});
            try {
                const std::string message = backbone.send(transcript);
                transcript.messages.push_back({Role::agent, message, {}});
                report = parse_final(message, task.kind);
                report.diagnostics = "final output elicited by the budget-exhaustion nudge";
            } catch (const std::exception& e) {
                report.aborted = true;
                report.diagnostics = std::string("SessionAborted: ") + e.what();
            }
        } else {
            report.parse_ok = false;
            if (report.diagnostics.empty())
                report.diagnostics = "round budget exhausted without final output";
        }
        report.rounds_used = transcript.rounds_used;
    }
    report.kind = task.kind;

    persist_session(options, transcript, report);
    return {std::move(report), std::move(transcript)};
}

}  // namespace maialab::agent
