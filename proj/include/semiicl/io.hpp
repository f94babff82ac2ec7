#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "semiicl/annotate.hpp"
#include "semiicl/core.hpp"
#include "semiicl/embedspace.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

using json = nlohmann::json;

// ── TaskSpec ────────────────────────────────────────────────────────

inline json task_to_json(const TaskSpec& t) {
    json j;
    j["task_family"] = family_name(t.family);
    if (!t.labels.empty()) j["labels"] = t.labels;
    if (!t.source_lang.empty()) j["source_lang"] = t.source_lang;
    if (!t.target_lang.empty()) j["target_lang"] = t.target_lang;
    j["instruction"] = t.instruction;
    switch (t.equivalence) {
        case EquivalenceRule::exact_normalized: j["equivalence"] = "exact-normalized"; break;
        case EquivalenceRule::label_match: j["equivalence"] = "label-match"; break;
        case EquivalenceRule::custom_registry_key:
            j["equivalence"] = "custom-registry-key";
            j["equivalence_key"] = t.equivalence_key;
            break;
    }
    return j;
}

inline TaskSpec task_from_json(const json& j) {
    TaskSpec t;
    t.family = family_from_name(j.at("task_family").get<std::string>());
    if (j.contains("labels")) t.labels = j["labels"].get<std::vector<std::string>>();
    if (j.contains("source_lang")) t.source_lang = j["source_lang"].get<std::string>();
    if (j.contains("target_lang")) t.target_lang = j["target_lang"].get<std::string>();
    t.instruction = j.value("instruction", std::string{});
    if (t.instruction.empty()) {
        t.instruction = default_instruction(t);
    }
    std::string eq = j.value("equivalence", "exact-normalized");
    if (eq == "exact-normalized") t.equivalence = EquivalenceRule::exact_normalized;
    else if (eq == "label-match") t.equivalence = EquivalenceRule::label_match;
    else if (eq == "custom-registry-key") {
        t.equivalence = EquivalenceRule::custom_registry_key;
        t.equivalence_key = j.value("equivalence_key", std::string{});
    } else throw ConfigError("unknown equivalence rule: " + eq);
    t.validate();
    return t;
}

inline TaskSpec load_task(const std::string& path) {
    return task_from_json(json::parse(read_file(path)));
}

// ── Examples ────────────────────────────────────────────────────────

inline std::vector<Example> load_examples(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open dataset: " + path);
    std::vector<Example> out;
    std::set<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        Example e;
        e.id = j.at("id").get<std::string>();
        e.input = j.at("input").get<std::string>();
        if (j.contains("gold") && !j["gold"].is_null())
            e.gold = j["gold"].get<std::string>();
        if (e.input.empty()) throw ConfigError("empty input for example " + e.id);
        if (!ids.insert(e.id).second)
            throw ConfigError("duplicate example id: " + e.id);
        out.push_back(std::move(e));
    }
    return out;
}

inline void save_examples(const std::string& path,
                          const std::vector<Example>& examples) {
    std::ofstream f(path, std::ios::trunc);
    for (const auto& e : examples) {
        json j;
        j["id"] = e.id;
        j["input"] = e.input;
        if (e.gold) j["gold"] = *e.gold;
        f << j.dump() << "\n";
    }
}

// ── pseudo-demonstration store ──────────────────────────────────────

inline json psd_to_json(const PseudoDemonstration& p) {
    json j;
    j["example_id"] = p.example_id;
    j["input"] = p.input;
    j["prediction"] = p.prediction;
    if (p.rationale) j["rationale"] = *p.rationale;
    j["confidence"] = p.confidence;
    j["scorer"] = scorer_name(p.scorer);
    j["iteration"] = p.iteration;
    j["created_by"] = p.created_by;
    return j;
}

inline PseudoDemonstration psd_from_json(const json& j) {
    PseudoDemonstration p;
    p.example_id = j.at("example_id").get<std::string>();
    p.input = j.at("input").get<std::string>();
    p.prediction = j.at("prediction").get<std::string>();
    if (j.contains("rationale")) p.rationale = j["rationale"].get<std::string>();
    p.confidence = j.at("confidence").get<double>();
    p.scorer = scorer_from_name(j.at("scorer").get<std::string>());
    p.iteration = j.at("iteration").get<int>();
    p.created_by = j.value("created_by", std::string{});
    return p;
}

inline std::vector<PseudoDemonstration> load_psd_store(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open store: " + path);
    std::vector<PseudoDemonstration> out;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        out.push_back(psd_from_json(json::parse(line)));
    }
    return out;
}

inline void append_psd_store(const std::string& path,
                             const std::vector<PseudoDemonstration>& psds) {
    std::ofstream f(path, std::ios::app);
    for (const auto& p : psds) f << psd_to_json(p).dump() << "\n";
}

// ── skip records ────────────────────────────────────────────────────

inline std::vector<SkipRecord> load_skips(const std::string& path) {
    std::ifstream f(path);
    std::vector<SkipRecord> out;
    if (!f) return out;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        out.push_back({j.at("example_id").get<std::string>(),
                       j.value("iteration", 0),
                       j.value("reason", std::string{})});
    }
    return out;
}

inline void append_skips(const std::string& path,
                         const std::vector<SkipRecord>& skips) {
    if (skips.empty()) return;
    std::ofstream f(path, std::ios::app);
    for (const auto& s : skips) {
        json j;
        j["example_id"] = s.example_id;
        j["iteration"] = s.iteration;
        j["reason"] = s.reason;
        f << j.dump() << "\n";
    }
}

// ── embedding cache ─────────────────────────────────────────────────

inline void load_embedding_cache(EmbeddingCache& cache, const std::string& path,
                                 const std::string& provider) {
    std::ifstream f(path);
    if (!f) return;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        if (j.value("provider", std::string{}) != provider) continue;
        cache.entries()[j.at("example_id").get<std::string>()] =
            j.at("vector").get<Vec>();
    }
}

inline void save_embedding_cache(const EmbeddingCache& cache,
                                 const std::string& path,
                                 const std::string& provider) {
    std::ofstream f(path, std::ios::trunc);
    for (const auto& [id, vec] : cache.entries()) {
        json j;
        j["example_id"] = id;
        j["provider"] = provider;
        j["vector"] = vec;
        f << j.dump() << "\n";
    }
}

}  // namespace semiicl
