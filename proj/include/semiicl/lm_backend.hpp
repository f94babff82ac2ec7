#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "semiicl/core.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

struct RetryPolicy {
    int attempts = 3;
    int backoff_ms = 200;  // doubled per retry
};

enum class BackendKind { sim, remote };

struct BackendConfig {
    BackendKind kind = BackendKind::sim;
    std::string base_url;      // remote, e.g. "http://localhost:8080"
    std::string model;         // remote
    std::string api_key_env;   // name of the env var holding the key
    double temperature = 0.0;
    int max_tokens = 1024;
    bool logprobs = false;
    int max_inflight = 4;
    RetryPolicy retry;

    void validate() const {
        if (temperature < 0) throw ConfigError("BackendConfig: temperature < 0");
        if (max_inflight < 1) throw ConfigError("BackendConfig: max_inflight < 1");
    }
};

struct LmRequest {
    std::string prompt;
    double temperature = 0.0;
    bool want_logprobs = false;
    int sample_index = 0;  // distinguishes stochastic resamples
};

struct LmResult {
    std::string text;
    std::optional<std::vector<TokenLogprob>> logprobs;
};

class LmBackend {
public:
    virtual ~LmBackend() = default;
    virtual LmResult complete(const LmRequest& req) = 0;
    virtual std::string identity() const = 0;
};

// ── deterministic simulator ─────────────────────────────────────────
//
// SimLm answers rendered prompts the way the real pipeline produces
// them. Inputs carry an `[id:...]` marker injected by the fixture
// generator; the simulator looks up the gold answer, counts the correct
// and incorrect demonstrations present in the prompt, and draws a
// correct/incorrect answer with probability
//   p = clamp(p0 + gain*(n_correct - wrong_penalty*n_wrong) + delta, 0.01, p_max)
// where delta is a fixed per-example difficulty offset. All randomness
// derives from hash(seed, example_id, sample_index), so output is
// independent of request scheduling.

struct SimConfig {
    std::map<std::string, std::string> truth;    // example_id -> gold answer
    std::map<std::string, std::string> sources;  // example_id -> input text
    double p0 = 0.6;
    double gain = 0.004;
    double wrong_penalty = 1.0;
    double conf_noise = 0.05;
    double p_max = 0.99;
    double difficulty_spread = 0.3;  // per-example offset in [-spread, spread]
    std::uint64_t seed = 0;

    void validate() const {
        if (!(p0 > 0 && p0 <= p_max && p_max < 1))
            throw ConfigError("SimConfig: require 0 < p0 <= p_max < 1");
        if (conf_noise < 0) throw ConfigError("SimConfig: conf_noise < 0");
    }

    void add_examples(const std::vector<Example>& examples) {
        for (const auto& e : examples) {
            sources[e.id] = e.input;
            if (e.gold) truth[e.id] = *e.gold;
        }
    }
};

struct UnknownFixture : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class SimLm : public LmBackend {
public:
    SimLm(TaskSpec task, SimConfig cfg)
        : task_(std::move(task)), cfg_(std::move(cfg)) {
        task_.validate();
        cfg_.validate();
    }

    LmResult complete(const LmRequest& req) override {
        if (req.prompt.empty()) throw ConfigError("SimLm: empty prompt");
        if (task_.family == TaskFamily::translation && is_back_translation(req.prompt))
            return back_translate(req.prompt);
        return answer(req);
    }

    std::string identity() const override {
        return "sim:seed=" + std::to_string(cfg_.seed);
    }

    const SimConfig& config() const { return cfg_; }

private:
    struct DemoCounts {
        int correct = 0;
        int wrong = 0;
    };

    static std::string query_marker(const TaskSpec& t) {
        switch (t.family) {
            case TaskFamily::classification: return "Input: ";
            case TaskFamily::translation: return t.source_lang + ": ";
            case TaskFamily::freeform: return "Question: ";
        }
        return {};
    }

    // The back-translation prompt swaps the language pair, so its query
    // line starts with the task's *target* language.
    bool is_back_translation(const std::string& prompt) const {
        auto lines = split_lines(prompt);
        std::string fwd = query_marker(task_);
        std::string bwd = task_.target_lang + ": ";
        for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
            if (starts_with(*it, bwd)) return true;
            if (starts_with(*it, fwd)) return false;
        }
        return false;
    }

    // Extracts the final query text (the line after the last query
    // marker, excluding the dangling target-language prefix line).
    std::string final_query(const std::string& prompt,
                            const std::string& marker) const {
        size_t pos = prompt.rfind("\n" + marker);
        if (pos == std::string::npos) {
            if (starts_with(prompt, marker)) pos = 0;
            else throw ProtocolError("SimLm: no query marker in prompt");
        } else {
            pos += 1;
        }
        size_t start = pos + marker.size();
        size_t end = prompt.find('\n', start);
        return trim(prompt.substr(start, end == std::string::npos
                                             ? std::string::npos
                                             : end - start));
    }

    DemoCounts count_demos(const std::string& prompt,
                           const std::string& query_id) const {
        DemoCounts counts;
        auto lines = split_lines(prompt);
        std::string in_marker = query_marker(task_);
        std::string out_marker;
        switch (task_.family) {
            case TaskFamily::classification: out_marker = "Label: "; break;
            case TaskFamily::translation: out_marker = task_.target_lang + ": "; break;
            case TaskFamily::freeform: out_marker = "Answer: "; break;
        }
        std::string pending_id;
        for (const auto& line : lines) {
            if (starts_with(line, in_marker)) {
                pending_id = extract_marker(line, "id");
            } else if (!pending_id.empty() && starts_with(line, out_marker)) {
                std::string pred = trim(line.substr(out_marker.size()));
                auto it = cfg_.truth.find(pending_id);
                if (it != cfg_.truth.end() && pending_id != query_id) {
                    if (answers_equivalent(task_, pred, it->second))
                        counts.correct++;
                    else
                        counts.wrong++;
                }
                pending_id.clear();
            }
        }
        return counts;
    }

    // Fixed per-example difficulty, independent of the run seed so the
    // same fixture is equally hard across seeds.
    double difficulty(const std::string& example_id) const {
        std::uint64_t h = splitmix64(fnv1a64(example_id));
        double u = static_cast<double>(h >> 11) / 9007199254740992.0;  // [0,1)
        return (u - 0.5) * 2.0 * cfg_.difficulty_spread;
    }

    std::string corrupt(const std::string& gold, std::mt19937_64& rng) const {
        auto words = split_words(gold);
        std::string out = "mis";
        std::uniform_int_distribution<int> coin(0, 1);
        for (size_t i = 0; i < words.size(); ++i) {
            if (words.size() > 1 && coin(rng) == 0) continue;  // drop word
            out += " " + words[i];
        }
        if (answers_equivalent(task_, out, gold)) out += " extra";
        return out;
    }

    LmResult answer(const LmRequest& req) const {
        std::string query = final_query(req.prompt, query_marker(task_));
        std::string id = extract_marker(query, "id");
        auto it = cfg_.truth.find(id);
        if (id.empty() || it == cfg_.truth.end())
            throw UnknownFixture("SimLm: unknown example id in query: '" + id + "'");
        const std::string& gold = it->second;

        DemoCounts dc = count_demos(req.prompt, id);
        double e = dc.correct - cfg_.wrong_penalty * dc.wrong;
        double p = cfg_.p0 + cfg_.gain * e + difficulty(id);
        p = std::clamp(p, 0.01, cfg_.p_max);

        std::mt19937_64 rng(mix_seed(cfg_.seed, fnv1a64(id),
                                     static_cast<std::uint64_t>(req.sample_index)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        bool correct = u01(rng) < p;

        std::string pred;
        if (correct) {
            pred = gold;
        } else if (task_.family == TaskFamily::classification) {
            std::vector<std::string> others;
            for (const auto& l : task_.labels)
                if (!answers_equivalent(task_, l, gold)) others.push_back(l);
            if (others.empty()) {
                pred = gold;
            } else {
                std::uniform_int_distribution<size_t> pick(0, others.size() - 1);
                pred = others[pick(rng)];
            }
        } else {
            pred = corrupt(gold, rng);
        }

        double conf = p;
        if (cfg_.conf_noise > 0) {
            std::normal_distribution<double> g(0.0, cfg_.conf_noise);
            conf = std::clamp(p + g(rng), 0.0, 1.0);
        }

        std::string text;
        switch (task_.family) {
            case TaskFamily::classification:
                text = "Label: " + pred + "\n";
                break;
            case TaskFamily::translation:
                text = task_.target_lang + ": " + pred + "\n";
                break;
            case TaskFamily::freeform:
                text = "Considering the question step by step.\nAnswer: " +
                       pred + "\n";
                break;
        }
        char cbuf[32];
        std::snprintf(cbuf, sizeof(cbuf), "%.4f", conf);
        text += "**Confidence**: " + std::string(cbuf) + "\n";

        LmResult res;
        res.text = text;
        // Synthetic logprobs whose mean NLL rises as p falls.
        double tok_p = std::clamp(1.0 - (1.0 - p) * 0.9, 1e-6, 1.0);
        std::vector<TokenLogprob> lps;
        for (int i = 0; i < 5; ++i)
            lps.push_back({"t" + std::to_string(i), std::log(tok_p)});
        res.logprobs = std::move(lps);
        return res;
    }

    // Round trip for back-translation confidence: a translation that
    // matches some gold target maps back to that example's source text;
    // anything else comes back garbled.
    LmResult back_translate(const std::string& prompt) const {
        std::string query = final_query(prompt, task_.target_lang + ": ");
        for (const auto& [id, gold] : cfg_.truth) {
            if (answers_equivalent(task_, query, gold)) {
                auto src = cfg_.sources.find(id);
                if (src != cfg_.sources.end()) {
                    LmResult res;
                    res.text = task_.source_lang + ": " + src->second +
                               "\n**Confidence**: 0.9000\n";
                    return res;
                }
            }
        }
        LmResult res;
        res.text = task_.source_lang + ": roundtrip " + query +
                   "\n**Confidence**: 0.3000\n";
        return res;
    }

    TaskSpec task_;
    SimConfig cfg_;
};

}  // namespace semiicl
