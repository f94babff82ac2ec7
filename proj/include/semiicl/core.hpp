#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "semiicl/util.hpp"

namespace semiicl {

// ── task description ────────────────────────────────────────────────

enum class TaskFamily { classification, translation, freeform };

enum class EquivalenceRule { exact_normalized, label_match, custom_registry_key };

inline const char* family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::classification: return "classification";
        case TaskFamily::translation: return "translation";
        case TaskFamily::freeform: return "freeform";
    }
    return "?";
}

inline TaskFamily family_from_name(const std::string& s) {
    if (s == "classification") return TaskFamily::classification;
    if (s == "translation") return TaskFamily::translation;
    if (s == "freeform") return TaskFamily::freeform;
    throw ConfigError("unknown task family: " + s);
}

struct TaskSpec {
    TaskFamily family = TaskFamily::classification;
    std::vector<std::string> labels;   // classification only
    std::string source_lang;           // translation only
    std::string target_lang;           // translation only
    std::string instruction;           // task instruction rendered into the prompt
    EquivalenceRule equivalence = EquivalenceRule::exact_normalized;
    std::string equivalence_key;       // custom_registry_key only

    void validate() const {
        if (instruction.empty()) throw ConfigError("TaskSpec: instruction empty");
        if (family == TaskFamily::classification) {
            if (labels.empty())
                throw ConfigError("TaskSpec: classification requires labels");
            std::set<std::string> seen(labels.begin(), labels.end());
            if (seen.size() != labels.size())
                throw ConfigError("TaskSpec: duplicate labels");
        }
        if (family == TaskFamily::translation) {
            if (source_lang.empty() || target_lang.empty())
                throw ConfigError("TaskSpec: translation requires both language names");
        }
    }
};

// ── examples and demonstrations ─────────────────────────────────────

struct Example {
    std::string id;
    std::string input;
    std::optional<std::string> gold;
};

enum class Scorer { verbalized, entropy, self_consistency, back_translation };

inline const char* scorer_name(Scorer s) {
    switch (s) {
        case Scorer::verbalized: return "verbalized";
        case Scorer::entropy: return "entropy";
        case Scorer::self_consistency: return "self-consistency";
        case Scorer::back_translation: return "back-translation";
    }
    return "?";
}

inline Scorer scorer_from_name(const std::string& s) {
    if (s == "verbalized") return Scorer::verbalized;
    if (s == "entropy") return Scorer::entropy;
    if (s == "self-consistency" || s == "self_consistency") return Scorer::self_consistency;
    if (s == "back-translation" || s == "back_translation") return Scorer::back_translation;
    throw ConfigError("unknown scorer: " + s);
}

struct PseudoDemonstration {
    std::string example_id;
    std::string input;
    std::string prediction;
    std::optional<std::string> rationale;
    double confidence = 0.0;  // normalized to [0,1]
    Scorer scorer = Scorer::verbalized;
    int iteration = 0;        // 0 for single-pass generation
    std::string created_by;   // backend identity
};

enum class DemoOrigin { ground_truth, pseudo };

struct Demo {
    std::string example_id;
    std::string input;
    std::string prediction;
    std::optional<std::string> rationale;
    DemoOrigin origin = DemoOrigin::ground_truth;
};

struct DemoSet {
    std::vector<Demo> demos;

    static DemoSet from_examples(const std::vector<Example>& examples) {
        DemoSet ds;
        for (const auto& e : examples) {
            if (!e.gold) throw ConfigError("ground-truth demo without gold: " + e.id);
            ds.demos.push_back({e.id, e.input, *e.gold, std::nullopt,
                                DemoOrigin::ground_truth});
        }
        return ds;
    }

    void append_pseudo(const PseudoDemonstration& p) {
        demos.push_back({p.example_id, p.input, p.prediction, p.rationale,
                         DemoOrigin::pseudo});
    }
};

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;  // always <= 0
};

struct LmResponse {
    std::string text;
    std::optional<std::vector<TokenLogprob>> token_logprobs;
    std::string prediction;
    std::optional<std::string> rationale;
    std::optional<double> verbalized_confidence;
};

// ── answer normalization and equivalence ────────────────────────────

inline std::string strip_surrounding_punct(std::string s) {
    auto is_punct = [](unsigned char c) {
        return std::ispunct(c) && c != '<' && c != '>';
    };
    size_t b = 0, e = s.size();
    while (b < e && is_punct(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_punct(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string normalize_answer(const TaskSpec& task, const std::string& text) {
    std::string out = collapse_whitespace(to_lower(trim(text)));
    out = trim(strip_surrounding_punct(out));
    if (task.equivalence == EquivalenceRule::label_match) {
        for (const auto& label : task.labels) {
            if (to_lower(label) == out) return label;  // canonical casing
        }
    }
    return out;
}

using EquivalenceFn = std::function<bool(const std::string&, const std::string&)>;

inline std::map<std::string, EquivalenceFn>& equivalence_registry() {
    static std::map<std::string, EquivalenceFn> registry;
    return registry;
}

inline bool answers_equivalent(const TaskSpec& task, const std::string& a,
                               const std::string& b) {
    switch (task.equivalence) {
        case EquivalenceRule::exact_normalized:
        case EquivalenceRule::label_match:
            return normalize_answer(task, a) == normalize_answer(task, b);
        case EquivalenceRule::custom_registry_key: {
            auto it = equivalence_registry().find(task.equivalence_key);
            if (it == equivalence_registry().end())
                throw ConfigError("unknown equivalence key: " + task.equivalence_key);
            return it->second(a, b);
        }
    }
    return false;
}

// ── prompt templates ────────────────────────────────────────────────
//
// Placeholders: {INSTRUCTION} {LABELS} {DEMONSTRATIONS} {INPUT}
//               {SOURCE_LANG} {TARGET_LANG}
// All three templates request a confidence score in the same format so
// one parser covers every family.

inline constexpr const char* kConfidenceLine =
    "**Confidence**: <a confidence score between 0 and 1>";

struct PromptTemplates {
    std::string classification =
        "{INSTRUCTION}\n"
        "\n"
        "{LABELS}\n"
        "\n"
        "___\n"
        "\n"
        "Here are zero or more Input and Label pairs sampled from the "
        "classification task.\n"
        "\n"
        "{DEMONSTRATIONS}\n"
        "\n"
        "___\n"
        "\n"
        "Now, Label the following Input among the possible labels. Also give "
        "the Confidence of your given Answer in the following format:\n"
        "\n"
        "**Confidence**: <a confidence score between 0 and 1>\n"
        "\n"
        "Input: {INPUT}\n";

    std::string translation =
        "{INSTRUCTION}\n"
        "\n"
        "<source language>: <first sentence>\n"
        "\n"
        "<target language>: <translated first sentence>\n"
        "\n"
        "___\n"
        "\n"
        "{DEMONSTRATIONS}\n"
        "\n"
        "___\n"
        "\n"
        "Now, Translate the following {SOURCE_LANG} text into {TARGET_LANG}. "
        "Also give the Confidence of your given Answer in the following "
        "format:\n"
        "\n"
        "**Confidence**: <a confidence score between 0 and 1>\n"
        "\n"
        "{SOURCE_LANG}: {INPUT}\n"
        "\n"
        "{TARGET_LANG}:\n";

    std::string freeform =
        "{INSTRUCTION}\n"
        "\n"
        "___\n"
        "\n"
        "{DEMONSTRATIONS}\n"
        "\n"
        "___\n"
        "\n"
        "Now, Answer the following Question. Think step by step.\n"
        "\n"
        "Question: {INPUT}\n"
        "\n"
        "Also give the Confidence of your given Answer in the following "
        "format:\n"
        "\n"
        "**Confidence**: <a confidence score between 0 and 1>\n";
};

inline const PromptTemplates& default_templates() {
    static PromptTemplates t;
    return t;
}

inline std::string default_instruction(const TaskSpec& task) {
    switch (task.family) {
        case TaskFamily::classification:
            return "You are a helpful assistant who is capable of performing a "
                   "classification task (mapping an Input to a Label) with the "
                   "following possible labels:";
        case TaskFamily::translation:
            return "You are an expert translator. I am going to give you zero "
                   "or more example pairs of text snippets where the first is "
                   "in the source language and the second is a translation of "
                   "the first snippet into the target language. The sentences "
                   "will be written in the following format:";
        case TaskFamily::freeform:
            return "First, I am going to give you a series of Questions that "
                   "are like the one you will be solving.";
    }
    return {};
}

inline std::string render_demo(const TaskSpec& task, const Demo& d) {
    switch (task.family) {
        case TaskFamily::classification:
            return "Input: " + d.input + "\nLabel: " + d.prediction + "\n";
        case TaskFamily::translation:
            return task.source_lang + ": " + d.input + "\n" + task.target_lang +
                   ": " + d.prediction + "\n";
        case TaskFamily::freeform: {
            std::string block = "Question: " + d.input + "\n";
            if (d.rationale && !d.rationale->empty())
                block += *d.rationale + "\n";
            block += "Answer: " + d.prediction + "\n";
            return block;
        }
    }
    return {};
}

inline std::string render_prompt(const TaskSpec& task, const DemoSet& demos,
                                 const std::string& input,
                                 const PromptTemplates& templates = default_templates()) {
    task.validate();
    if (input.empty()) throw ConfigError("render_prompt: empty input");

    std::string demo_block;
    for (size_t i = 0; i < demos.demos.size(); ++i) {
        if (i) demo_block += "\n";
        demo_block += render_demo(task, demos.demos[i]);
    }

    std::string tpl;
    switch (task.family) {
        case TaskFamily::classification: tpl = templates.classification; break;
        case TaskFamily::translation: tpl = templates.translation; break;
        case TaskFamily::freeform: tpl = templates.freeform; break;
        default: throw ConfigError("render_prompt: unknown task family");
    }

    std::string labels_block;
    for (size_t i = 0; i < task.labels.size(); ++i) {
        if (i) labels_block += "\n";
        labels_block += task.labels[i];
    }

    tpl = replace_all(std::move(tpl), "{INSTRUCTION}", task.instruction);
    tpl = replace_all(std::move(tpl), "{LABELS}", labels_block);
    tpl = replace_all(std::move(tpl), "{DEMONSTRATIONS}", demo_block);
    tpl = replace_all(std::move(tpl), "{SOURCE_LANG}", task.source_lang);
    tpl = replace_all(std::move(tpl), "{TARGET_LANG}", task.target_lang);
    tpl = replace_all(std::move(tpl), "{INPUT}", input);
    return tpl;
}

// ── response parsing ────────────────────────────────────────────────

// Parses the numeric value after the last "**Confidence**:" occurrence.
// Out-of-range or unparsable values yield nullopt, never an error.
inline std::optional<double> parse_verbalized_confidence(const std::string& raw) {
    const std::string marker = "**Confidence**:";
    size_t pos = raw.rfind(marker);
    if (pos == std::string::npos) return std::nullopt;
    size_t start = pos + marker.size();
    size_t end = raw.find('\n', start);
    std::string tail = trim(raw.substr(start, end == std::string::npos
                                                  ? std::string::npos
                                                  : end - start));
    try {
        size_t consumed = 0;
        double v = std::stod(tail, &consumed);
        (void)consumed;
        if (v < 0.0 || v > 1.0) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline bool is_confidence_line(const std::string& line) {
    return trim(line).rfind("**Confidence**", 0) == 0;
}

// Extracts (prediction, rationale) from a raw completion per task family.
// Throws ParseFailure when no prediction can be recovered.
inline LmResponse parse_response(const TaskSpec& task, const std::string& raw,
                                 std::optional<std::vector<TokenLogprob>> logprobs =
                                     std::nullopt) {
    if (raw.empty()) throw ParseFailure("parse_response: empty completion", raw);
    LmResponse resp;
    resp.text = raw;
    resp.token_logprobs = std::move(logprobs);
    resp.verbalized_confidence = parse_verbalized_confidence(raw);

    auto lines = split_lines(raw);

    switch (task.family) {
        case TaskFamily::classification: {
            // Last line whose content (minus an optional "Label:" prefix)
            // normalizes to a known label.
            for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
                std::string line = trim(*it);
                if (line.empty() || is_confidence_line(line)) continue;
                if (starts_with(line, "Label:")) line = trim(line.substr(6));
                std::string norm = normalize_answer(task, line);
                for (const auto& label : task.labels) {
                    if (normalize_answer(task, label) == norm) {
                        resp.prediction = label;
                        return resp;
                    }
                }
            }
            throw ParseFailure("classification: no line matches a label", raw);
        }
        case TaskFamily::translation: {
            std::string marker = task.target_lang + ":";
            size_t pos = raw.rfind(marker);
            std::string candidate;
            if (pos != std::string::npos) {
                candidate = raw.substr(pos + marker.size());
            } else {
                // No marker echoed; take everything that is not a
                // confidence line.
                for (const auto& l : lines) {
                    if (is_confidence_line(l)) continue;
                    if (!candidate.empty()) candidate += "\n";
                    candidate += l;
                }
            }
            // Cut at a trailing confidence line.
            std::string result;
            for (const auto& l : split_lines(candidate)) {
                if (is_confidence_line(l)) break;
                if (!result.empty()) result += "\n";
                result += l;
            }
            result = trim(result);
            if (result.empty())
                throw ParseFailure("translation: empty translation", raw);
            resp.prediction = result;
            return resp;
        }
        case TaskFamily::freeform: {
            const std::string marker = "Answer:";
            size_t pos = raw.rfind(marker);
            if (pos != std::string::npos) {
                std::string after = raw.substr(pos + marker.size());
                std::string result;
                for (const auto& l : split_lines(after)) {
                    if (is_confidence_line(l)) break;
                    if (!result.empty()) result += "\n";
                    result += l;
                }
                result = trim(result);
                if (!result.empty()) {
                    std::string before = trim(raw.substr(0, pos));
                    // Rationale: everything before the final answer marker,
                    // minus confidence lines.
                    std::string rationale;
                    for (const auto& l : split_lines(before)) {
                        if (is_confidence_line(l)) continue;
                        if (!rationale.empty()) rationale += "\n";
                        rationale += l;
                    }
                    rationale = trim(rationale);
                    if (!rationale.empty()) resp.rationale = rationale;
                    resp.prediction = result;
                    return resp;
                }
            }
            // Fallback: last non-empty, non-confidence line.
            for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
                std::string line = trim(*it);
                if (line.empty() || is_confidence_line(line)) continue;
                resp.prediction = line;
                return resp;
            }
            throw ParseFailure("freeform: no extractable answer", raw);
        }
    }
    throw ConfigError("parse_response: unknown task family");
}

}  // namespace semiicl
