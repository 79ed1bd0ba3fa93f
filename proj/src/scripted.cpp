#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "maialab/agent.hpp"

namespace maialab::agent {

namespace {

// ---------------------------------------------------------------------------
// Observation parsing shared by the playbooks.
// ---------------------------------------------------------------------------

struct ParsedObservation {
    std::vector<std::pair<std::string, double>> records;  // title -> reported activation
    std::optional<double> threshold;
    std::vector<std::string> notes_lines;
    bool error = false;
};

ParsedObservation parse_observation(const std::string& text) {
    ParsedObservation parsed;
    std::istringstream in(text);
    std::string line;
    bool in_notes = false;
    while (std::getline(in, line)) {
        if (starts_with(line, "[ERROR]") || starts_with(line, "[TIMEOUT]") ||
            starts_with(line, "[FORMAT ERROR]")) {
            parsed.error = true;
            in_notes = false;
            continue;
        }
        if (starts_with(line, "[THRESHOLD]: activation_threshold = ")) {
            parsed.threshold = std::stod(line.substr(std::string("[THRESHOLD]: activation_threshold = ").size()));
            continue;
        }
        if (starts_with(line, "[LOG") || starts_with(line, "[RETURN]")) {
            in_notes = false;
            continue;
        }
        if (starts_with(line, "[END LOG]")) {
            in_notes = false;
            continue;
        }
        if (starts_with(line, "notes:")) {
            in_notes = true;
            continue;
        }
        if (starts_with(line, "- title=\"")) {
            in_notes = false;
            const size_t title_start = std::string("- title=\"").size();
            const size_t title_end = line.find('"', title_start);
            const size_t act_at = line.find("activation=", title_end);
            if (title_end == std::string::npos || act_at == std::string::npos) continue;
            const std::string title = line.substr(title_start, title_end - title_start);
            const std::string rest = line.substr(act_at + std::string("activation=").size());
            parsed.records.emplace_back(title, std::stod(rest));
            continue;
        }
        if (in_notes) parsed.notes_lines.push_back(line);
    }
    return parsed;
}

const std::string* last_observation(const Transcript& transcript) {
    for (auto it = transcript.messages.rbegin(); it != transcript.messages.rend(); ++it)
        if (it->role == Role::observation) return &it->text;
    return nullptr;
}

std::string fenced(const std::string& lead, const std::string& code) {
    return lead + "\n[CODE]:\n```python\n" + code + "```\n";
}

std::string quote_list(const std::vector<std::string>& items) {
    std::string out = "[";
    for (size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += "'" + items[i] + "'";
    }
    return out + "]";
}

std::string probe_program(const std::string& fn, const std::string& log_fn,
                          const std::vector<std::string>& prompts,
                          const std::vector<std::string>& titles, const std::string& note) {
    std::ostringstream code;
    code << "def " << fn << "(system, tools):\n"
         << "    prompts = " << quote_list(prompts) << "\n"
         << "    titles = " << quote_list(titles) << "\n"
         << "    images = tools.text2image(prompts)\n"
         << "    activations, masked = system.neuron(images)\n"
         << "    tools." << log_fn << "(activations, masked, titles, '" << note << "')\n"
         << "    return activations\n";
    return code.str();
}

std::string exemplars_program(const std::string& fn, const std::string& log_fn) {
    std::ostringstream code;
    code << "def " << fn << "(system, tools):\n"
         << "    activations, images = tools.dataset_exemplars(system)\n"
         << "    titles = []\n"
         << "    for i in range(len(images)):\n"
         << "        titles.append('exemplar ' + str(i))\n"
         << "    summary = tools.summarize_images(images)\n"
         << "    details = tools.describe_images(images, titles)\n"
         << "    tools." << log_fn << "(activations, images, titles, summary + '\\n' + details)\n"
         << "    return summary\n";
    return code.str();
}

std::vector<std::vector<std::string>> chunk(const std::vector<std::string>& items, size_t size) {
    std::vector<std::vector<std::string>> chunks;
    for (size_t i = 0; i < items.size(); i += size)
        chunks.emplace_back(items.begin() + static_cast<long>(i),
                            items.begin() + static_cast<long>(std::min(items.size(), i + size)));
    return chunks;
}

constexpr double kDetectionFloor = 0.25;  // reported activations below this never count as firing
constexpr double kFloorMargin = 0.1;      // generation jitter band relative to the exemplar floor

// ---------------------------------------------------------------------------
// describe-default
// ---------------------------------------------------------------------------

class DescribePlaybook final : public BackboneClient {
public:
    explicit DescribePlaybook(const scene::ConceptVocabulary* vocab)
        : vocab_(vocab ? vocab : &scene::default_vocabulary()) {}

    std::string send(const Transcript& transcript) override {
        if (phase_ == Phase::init) {
            bootstrap(transcript);
            if (exemplars_enabled_) {
                phase_ = Phase::await_exemplars;
                return first_step();
            }
            if (generation_enabled_) {
                phase_ = Phase::await_sweep;
                sweep_pos_ = 0;
                return sweep_step();
            }
            phase_ = Phase::done;
            return final_message();
        }
        const std::string* obs = last_observation(transcript);
        switch (phase_) {
            case Phase::init:
                break;  // unreachable
            case Phase::await_exemplars:
                return after_exemplars(obs);
            case Phase::await_solo:
                return after_solo(obs);
            case Phase::await_pair:
                return after_pair(obs);
            case Phase::await_sweep:
                return after_sweep(obs);
            case Phase::done:
                break;
        }
        return final_message();
    }

private:
    enum class Phase { init, await_exemplars, await_solo, await_pair, await_sweep, done };

    void bootstrap(const Transcript& transcript) {
        const std::string& system_prompt = transcript.messages.at(0).text;
        exemplars_enabled_ = system_prompt.find("### tools.dataset_exemplars") != std::string::npos;
        generation_enabled_ = system_prompt.find("### tools.text2image") != std::string::npos;
        vocab_list_.assign(vocab_->canonical_tokens().begin(), vocab_->canonical_tokens().end());
    }

    double accept_threshold() const {
        return floor_ ? std::max(kDetectionFloor, *floor_ - kFloorMargin) : kDetectionFloor;
    }

    std::string first_step() {
        return fenced("Starting from the unit's typical behavior on the reference corpus.",
                      exemplars_program("run_experiment", "log_experiment"));
    }

    std::string sweep_step() {
        const auto batches = chunk(vocab_list_, 16);
        const auto& batch = batches.at(sweep_pos_);
        std::vector<std::string> prompts, titles;
        for (const auto& concept_token : batch) {
            prompts.push_back("a photo of a " + concept_token);
            titles.push_back("solo:" + concept_token);
        }
        return fenced("Sweeping candidate concepts batch " + std::to_string(sweep_pos_ + 1) + ".",
                      probe_program("run_experiment", "log_experiment", prompts, titles,
                                    "vocabulary sweep"));
    }

    std::string after_exemplars(const std::string* obs) {
        if (obs) {
            const ParsedObservation parsed = parse_observation(*obs);
            floor_ = parsed.threshold;
            // first notes line is the shared-concept summary, the rest are the
            // per-exemplar descriptions
            std::string summary =
                parsed.notes_lines.empty() ? std::string{} : parsed.notes_lines[0];
            std::map<std::string, int> freq;
            for (size_t i = 1; i < parsed.notes_lines.size(); ++i) {
                const auto labels = vocab_->concepts_in_text(parsed.notes_lines[i]);
                exemplar_labels_.push_back(labels);
                for (const auto& c : labels) ++freq[c];
            }
            if (summary != "no shared concept" && summary != "no recognizable concepts" &&
                !summary.empty()) {
                for (const auto& c : vocab_->concepts_in_text(summary)) candidates_.push_back(c);
            }
            if (candidates_.empty()) {
                std::vector<std::pair<int, std::string>> ranked;
                for (const auto& [c, n] : freq)
                    if (n >= 3) ranked.emplace_back(-n, c);
                std::sort(ranked.begin(), ranked.end());
                for (const auto& [n, c] : ranked) {
                    candidates_.push_back(c);
                    if (candidates_.size() >= 6) break;
                }
            }
        }
        if (!candidates_.empty()) lead_ = candidates_.front();

        if (!generation_enabled_) {
            // exemplars-only setting: report the corpus evidence directly
            accepted_ = candidates_;
            phase_ = Phase::done;
            return final_message();
        }
        if (candidates_.empty()) {
            phase_ = Phase::await_sweep;
            sweep_pos_ = 0;
            return sweep_step();
        }
        phase_ = Phase::await_solo;
        std::vector<std::string> prompts, titles;
        if (candidates_.size() >= 2) {
            std::string combo = "a photo of a " + candidates_[0];
            for (size_t i = 1; i < candidates_.size(); ++i) combo += " and a " + candidates_[i];
            prompts.push_back(combo);
            titles.push_back("combo:all");
        }
        for (const auto& c : candidates_) {
            prompts.push_back("a photo of a " + c);
            titles.push_back("solo:" + c);
        }
        return fenced("Testing the exemplar concepts together and in isolation.",
                      probe_program("run_experiment", "log_experiment", prompts, titles,
                                    "targeted probes"));
    }

    std::string after_solo(const std::string* obs) {
        double combo_activation = 0.0;
        if (obs) {
            for (const auto& [title, activation] : parse_observation(*obs).records) {
                if (starts_with(title, "solo:")) {
                    probed_.insert(title.substr(5));
                    if (activation >= accept_threshold()) accepted_.push_back(title.substr(5));
                }
                if (title == "combo:all") combo_activation = activation;
            }
        }
        if (!accepted_.empty()) {
            // completeness check: exemplars none of the accepted concepts can
            // explain point at further selectivities worth one more probe round
            if (!refined_) {
                std::map<std::string, int> leftover;
                for (const auto& labels : exemplar_labels_) {
                    if (labels.empty()) continue;
                    bool explained = false;
                    for (const auto& c : accepted_) explained |= labels.count(c) > 0;
                    if (!explained)
                        for (const auto& c : labels) ++leftover[c];
                }
                std::vector<std::pair<int, std::string>> ranked;
                for (const auto& [c, n] : leftover)
                    if (n >= 2 && !probed_.count(c)) ranked.emplace_back(-n, c);
                std::sort(ranked.begin(), ranked.end());
                if (!ranked.empty()) {
                    refined_ = true;
                    std::vector<std::string> prompts, titles;
                    for (const auto& [n, c] : ranked) {
                        prompts.push_back("a photo of a " + c);
                        titles.push_back("solo:" + c);
                        if (prompts.size() >= 8) break;
                    }
                    return fenced(
                        "Some top exemplars are not explained yet; probing their concepts.",
                        probe_program("run_experiment", "log_experiment", prompts, titles,
                                      "completeness probes"));
                }
            }
            phase_ = Phase::done;
            return final_message();
        }
        combo_fired_ = combo_activation >= accept_threshold();
        if (lead_.empty()) {
            phase_ = Phase::done;
            return final_message();
        }
        phase_ = Phase::await_pair;
        pair_pos_ = 0;
        return pair_step();
    }

    std::string pair_step() {
        std::vector<std::string> others;
        for (const auto& c : vocab_list_)
            if (c != lead_) others.push_back(c);
        const auto batches = chunk(others, 16);
        const auto& batch = batches.at(pair_pos_);
        std::vector<std::string> prompts, titles;
        for (const auto& other : batch) {
            prompts.push_back("a photo of a " + lead_ + " and a " + other);
            titles.push_back("pair:" + other);
        }
        return fenced("Solo probes stayed quiet; testing '" + lead_ + "' in context, batch " +
                          std::to_string(pair_pos_ + 1) + ".",
                      probe_program("run_experiment", "log_experiment", prompts, titles,
                                    "context probes"));
    }

    std::string after_pair(const std::string* obs) {
        if (obs) {
            for (const auto& [title, activation] : parse_observation(*obs).records)
                if (starts_with(title, "pair:") && activation >= accept_threshold())
                    partners_.push_back(title.substr(5));
        }
        std::vector<std::string> others;
        for (const auto& c : vocab_list_)
            if (c != lead_) others.push_back(c);
        ++pair_pos_;
        if (partners_.empty() && pair_pos_ < chunk(others, 16).size()) return pair_step();
        phase_ = Phase::done;
        return final_message();
    }

    std::string after_sweep(const std::string* obs) {
        if (obs) {
            for (const auto& [title, activation] : parse_observation(*obs).records)
                if (starts_with(title, "solo:") && activation >= accept_threshold())
                    accepted_.push_back(title.substr(5));
        }
        ++sweep_pos_;
        if (sweep_pos_ < chunk(vocab_list_, 16).size()) return sweep_step();
        phase_ = Phase::done;
        return final_message();
    }

    std::string final_message() const {
        FinalReport report;
        report.kind = TaskKind::neuron_description;
        if (!accepted_.empty()) {
            std::vector<std::string> concepts = accepted_;
            std::sort(concepts.begin(), concepts.end());
            concepts.erase(std::unique(concepts.begin(), concepts.end()), concepts.end());
            std::string joined;
            for (const auto& c : concepts) {
                if (!joined.empty()) joined += " OR ";
                joined += c;
            }
            report.description =
                "the unit responds to " + joined +
                (concepts.size() > 1 ? std::string("; each concept activates it on its own")
                                     : std::string(" whenever it appears in the image"));
            report.labels = {joined};
        } else if (!partners_.empty()) {
            std::string partners;
            for (const auto& p : partners_) {
                if (!partners.empty()) partners += " or ";
                partners += p;
            }
            report.description = "the unit responds to " + lead_ + " only when " + partners +
                                 " is also present; " + lead_ + " alone leaves it quiet" +
                                 (combo_fired_ ? "" : " (exemplar-context dependence)");
            report.labels = {lead_ + " when " + partners + " is present"};
        } else if (!candidates_.empty()) {
            std::string joined;
            for (const auto& c : candidates_) {
                if (!joined.empty()) joined += " OR ";
                joined += c;
            }
            report.description = "corpus exemplars consistently show " + joined +
                                 ", but generated probes could not confirm causality";
            report.labels = {joined};
        } else {
            report.description =
                "no probe or exemplar produced a confirmed response from this unit";
            report.labels = {"unresponsive unit"};
        }
        return render_final(report);
    }

    const scene::ConceptVocabulary* vocab_;
    Phase phase_ = Phase::init;
    bool exemplars_enabled_ = true;
    bool generation_enabled_ = true;
    std::vector<std::string> vocab_list_;
    std::vector<std::string> candidates_;
    std::vector<std::string> accepted_;
    std::vector<std::string> partners_;
    std::vector<std::set<std::string>> exemplar_labels_;
    std::set<std::string> probed_;
    bool refined_ = false;
    std::string lead_;
    std::optional<double> floor_;
    bool combo_fired_ = false;
    size_t sweep_pos_ = 0;
    size_t pair_pos_ = 0;
};

// ---------------------------------------------------------------------------
// spurious-default
// ---------------------------------------------------------------------------

class SpuriousPlaybook final : public BackboneClient {
public:
    explicit SpuriousPlaybook(const scene::ConceptVocabulary* vocab)
        : vocab_(vocab ? vocab : &scene::default_vocabulary()) {}

    std::string send(const Transcript& transcript) override {
        if (phase_ == Phase::init) {
            bootstrap(transcript);
            pair_pos_ = 0;
            if (exemplars_enabled_) {
                phase_ = Phase::await_exemplars;
                return first_step();
            }
            phase_ = Phase::await_pairs;
            return pair_step();
        }
        const std::string* obs = last_observation(transcript);
        switch (phase_) {
            case Phase::init:
                break;  // unreachable
            case Phase::await_exemplars:
                phase_ = Phase::await_pairs;
                if (obs) floor_ = parse_observation(*obs).threshold;
                pair_pos_ = 0;
                return pair_step();
            case Phase::await_pairs: {
                collect_pairs(obs);
                ++pair_pos_;
                if (pair_pos_ < pair_batches_.size()) return pair_step();
                phase_ = Phase::await_envs;
                return env_step();
            }
            case Phase::await_envs:
                collect_envs(obs);
                phase_ = Phase::done;
                return final_message();
            case Phase::done:
                break;
        }
        return final_message();
    }

private:
    enum class Phase { init, await_exemplars, await_pairs, await_envs, done };

    void bootstrap(const Transcript& transcript) {
        const std::string& system_prompt = transcript.messages.at(0).text;
        const std::string& user_prompt = transcript.messages.at(1).text;
        exemplars_enabled_ = system_prompt.find("### tools.dataset_exemplars") != std::string::npos;

        std::istringstream in(user_prompt);
        std::string line;
        bool in_classes = false;
        while (std::getline(in, line)) {
            const std::string t = trim(line);
            if (t == "classes under test:") {
                in_classes = true;
                continue;
            }
            if (in_classes && !t.empty() && t[0] >= '1' && t[0] <= '9' && t.size() > 2 &&
                t[1] == '.') {
                classes_.push_back(trim(t.substr(2)));
                continue;
            }
            in_classes = false;
            const std::string env_prefix = "environments seen in training:";
            if (starts_with(t, env_prefix)) {
                std::istringstream envs(t.substr(env_prefix.size()));
                std::string env;
                while (std::getline(envs, env, ',')) envs_.push_back(trim(env));
            }
        }
        std::vector<std::string> pairs;
        for (const auto& c : classes_)
            for (const auto& e : envs_) pairs.push_back(c + "@" + e);
        for (auto& batch : chunk(pairs, 16)) pair_batches_.push_back(std::move(batch));
    }

    double accept_threshold() const {
        return floor_ ? std::max(kDetectionFloor, *floor_ - kFloorMargin) : kDetectionFloor;
    }

    std::string first_step() {
        return fenced("Checking the unit's exemplar behavior first.",
                      exemplars_program("execute_command", "save_experiment_log"));
    }

    std::string pair_step() {
        const auto& batch = pair_batches_.at(pair_pos_);
        std::vector<std::string> prompts, titles;
        for (const auto& pair : batch) {
            const size_t at = pair.find('@');
            prompts.push_back("a photo of a " + pair.substr(0, at) + " in the " +
                              pair.substr(at + 1));
            titles.push_back("pair:" + pair);
        }
        return fenced("Probing every class in every training environment, batch " +
                          std::to_string(pair_pos_ + 1) + ".",
                      probe_program("execute_command", "save_experiment_log", prompts, titles,
                                    "class-environment grid"));
    }

    std::string env_step() {
        std::vector<std::string> prompts, titles;
        for (const auto& e : envs_) {
            prompts.push_back("a photo of the " + e);
            titles.push_back("env:" + e);
        }
        return fenced("Probing the environments with no class present.",
                      probe_program("execute_command", "save_experiment_log", prompts, titles,
                                    "environment-only probes"));
    }

    void collect_pairs(const std::string* obs) {
        if (!obs) return;
        for (const auto& [title, activation] : parse_observation(*obs).records) {
            if (!starts_with(title, "pair:")) continue;
            const std::string pair = title.substr(5);
            const size_t at = pair.find('@');
            if (at == std::string::npos) continue;
            fired_[pair.substr(0, at)][pair.substr(at + 1)] =
                activation >= accept_threshold();
        }
    }

    void collect_envs(const std::string* obs) {
        if (!obs) return;
        for (const auto& [title, activation] : parse_observation(*obs).records)
            if (starts_with(title, "env:") && activation >= accept_threshold())
                env_fired_.push_back(title.substr(4));
    }

    std::string final_message() const {
        std::vector<std::string> responding;
        for (const auto& c : classes_) {
            auto it = fired_.find(c);
            if (it == fired_.end()) continue;
            for (const auto& [env, fired] : it->second)
                if (fired) {
                    responding.push_back(c);
                    break;
                }
        }
        bool selective = responding.size() == 1 && env_fired_.empty();
        if (selective) {
            const auto& c = responding[0];
            for (const auto& e : envs_) {
                auto it = fired_.at(c).find(e);
                if (it == fired_.at(c).end() || !it->second) selective = false;
            }
        }

        FinalReport report;
        report.kind = TaskKind::spurious_classification;
        report.selective = selective;
        std::ostringstream reason;
        if (selective) {
            reason << "only \"" << responding[0] << "\" produced highlighted responses, and it "
                   << "did so in every training environment; environment-only probes stayed "
                   << "quiet";
        } else if (responding.empty()) {
            reason << "no class produced a highlighted response in any environment, so the "
                   << "unit cannot be a reliable single-class detector";
        } else if (responding.size() > 1) {
            reason << responding.size() << " different classes produced highlighted responses";
        } else if (!env_fired_.empty()) {
            reason << "environment content alone (\"" << env_fired_[0]
                   << "\") produced a highlighted response, so the unit tracks context rather "
                   << "than the class";
        } else {
            reason << "\"" << responding[0]
                   << "\" responded only in a subset of the training environments";
        }
        report.description = reason.str();
        return render_final(report);
    }

    const scene::ConceptVocabulary* vocab_;
    Phase phase_ = Phase::init;
    bool exemplars_enabled_ = true;
    std::vector<std::string> classes_, envs_;
    std::vector<std::vector<std::string>> pair_batches_;
    size_t pair_pos_ = 0;
    std::map<std::string, std::map<std::string, bool>> fired_;
    std::vector<std::string> env_fired_;
    std::optional<double> floor_;
};

// ---------------------------------------------------------------------------
// bias-default
// ---------------------------------------------------------------------------

class BiasPlaybook final : public BackboneClient {
public:
    explicit BiasPlaybook(const scene::ConceptVocabulary* vocab)
        : vocab_(vocab ? vocab : &scene::default_vocabulary()) {}

    std::string send(const Transcript& transcript) override {
        if (phase_ == Phase::init) {
            bootstrap(transcript);
            phase_ = Phase::await_batch;
            batch_pos_ = 0;
            return batch_step();
        }
        const std::string* obs = last_observation(transcript);
        switch (phase_) {
            case Phase::init:
                break;  // unreachable
            case Phase::await_batch: {
                collect(obs);
                ++batch_pos_;
                if (batch_pos_ < batches_.size()) return batch_step();
                phase_ = Phase::done;
                return final_message();
            }
            case Phase::done:
                break;
        }
        return final_message();
    }

private:
    enum class Phase { init, await_batch, done };

    void bootstrap(const Transcript& transcript) {
        const std::string& user_prompt = transcript.messages.at(1).text;
        const std::string needle = "The class under investigation is \"";
        const size_t at = user_prompt.find(needle);
        if (at != std::string::npos) {
            const size_t end = user_prompt.find('"', at + needle.size());
            class_label_ = user_prompt.substr(at + needle.size(), end - at - needle.size());
        }
        const auto class_tokens = vocab_->concepts_in_text(class_label_);
        for (const auto& c : vocab_->canonical_tokens())
            if (!class_tokens.count(c) && c != to_lower(class_label_)) contexts_.push_back(c);
        for (auto& batch : chunk(contexts_, 15)) batches_.push_back(std::move(batch));
    }

    std::string batch_step() {
        const auto& batch = batches_.at(batch_pos_);
        std::vector<std::string> prompts, titles;
        if (batch_pos_ == 0) {
            prompts.push_back("a photo of a " + class_label_);
            titles.push_back("base");
        }
        for (const auto& ctx : batch) {
            prompts.push_back("a photo of a " + class_label_ + " with a " + ctx);
            titles.push_back("ctx:" + ctx);
        }
        return fenced("Comparing the class alone against the class in context, batch " +
                          std::to_string(batch_pos_ + 1) + ".",
                      probe_program("execute_command", "save_experiment_log", prompts, titles,
                                    "context comparison"));
    }

    void collect(const std::string* obs) {
        if (!obs) return;
        for (const auto& [title, activation] : parse_observation(*obs).records) {
            if (title == "base") base_ = activation;
            else if (starts_with(title, "ctx:")) context_activation_[title.substr(4)] = activation;
        }
    }

    std::string final_message() const {
        FinalReport report;
        report.kind = TaskKind::bias_identification;

        std::string best_ctx;
        double best_delta = 0.0;
        for (const auto& [ctx, activation] : context_activation_) {
            const double delta = activation - base_;
            if (std::abs(delta) > std::abs(best_delta)) {
                best_delta = delta;
                best_ctx = ctx;
            }
        }
        if (!best_ctx.empty() && std::abs(best_delta) >= 0.2) {
            if (best_delta > 0)
                report.bias_text = "the probability assigned to \"" + class_label_ +
                                   "\" is substantially higher when a " + best_ctx +
                                   " is present and drops when it is absent; images of the "
                                   "class without a " + best_ctx + " are under-ranked";
            else
                report.bias_text = "the probability assigned to \"" + class_label_ +
                                   "\" drops substantially when a " + best_ctx +
                                   " is present, although the class is still there";
        } else {
            report.bias_text = "behavior is uniform across the tested contexts; the class \"" +
                               class_label_ + "\" scores consistently with and without "
                               "accompanying objects, so no context-dependent bias was found";
        }
        return render_final(report);
    }

    const scene::ConceptVocabulary* vocab_;
    Phase phase_ = Phase::init;
    std::string class_label_;
    std::vector<std::string> contexts_;
    std::vector<std::vector<std::string>> batches_;
    size_t batch_pos_ = 0;
    double base_ = 0.0;
    std::map<std::string, double> context_activation_;
};

}  // namespace

Playbook playbook_from_name(const std::string& name) {
    if (name == "describe-default") return Playbook::describe_default;
    if (name == "spurious-default") return Playbook::spurious_default;
    if (name == "bias-default") return Playbook::bias_default;
    fail("TemplateError", "unknown playbook '" + name + "'");
}

std::string playbook_name(Playbook playbook) {
    switch (playbook) {
        case Playbook::describe_default: return "describe-default";
        case Playbook::spurious_default: return "spurious-default";
        case Playbook::bias_default: return "bias-default";
    }
    return "describe-default";
}

std::unique_ptr<BackboneClient> scripted_backbone(Playbook playbook,
                                                  const scene::ConceptVocabulary* vocab) {
    switch (playbook) {
        case Playbook::describe_default: return std::make_unique<DescribePlaybook>(vocab);
        case Playbook::spurious_default: return std::make_unique<SpuriousPlaybook>(vocab);
        case Playbook::bias_default: return std::make_unique<BiasPlaybook>(vocab);
    }
    fail("TemplateError", "unknown playbook");
}

}  // namespace maialab::agent
