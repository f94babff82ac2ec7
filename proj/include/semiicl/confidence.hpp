#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "semiicl/core.hpp"
#include "semiicl/embedspace.hpp"
#include "semiicl/lm_backend.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

struct ConfidenceReport {
    Scorer scorer = Scorer::verbalized;
    double raw = 0.0;         // NLL, vote fraction, cosine, or parsed value
    double confidence = 0.0;  // normalized, higher = more confident
    int samples_used = 1;
};

// Mean negative token log-probability. The companion keep-high
// confidence is exp(-result), the geometric mean of token probabilities.
inline double entropy_nll(const std::vector<double>& token_logprobs) {
    if (token_logprobs.empty())
        throw DegenerateInput("entropy_nll: empty logprob list");
    double sum = 0;
    for (double lp : token_logprobs) sum += lp;
    return -sum / static_cast<double>(token_logprobs.size());
}

inline double entropy_confidence(const std::vector<double>& token_logprobs) {
    return std::exp(-entropy_nll(token_logprobs));
}

struct SelfConsistencyResult {
    std::string majority;  // first-occurring answer among tied modes
    double confidence = 0.0;
};

// Vote fraction of the modal answer after normalization. Ties are
// broken by first occurrence in sample order.
inline SelfConsistencyResult self_consistency(const std::vector<std::string>& answers,
                                              const TaskSpec& task) {
    if (answers.empty())
        throw DegenerateInput("self_consistency: no answers");
    std::vector<std::string> norm;
    norm.reserve(answers.size());
    for (const auto& a : answers) norm.push_back(normalize_answer(task, a));

    size_t best_count = 0, best_first = 0;
    for (size_t i = 0; i < norm.size(); ++i) {
        // Count only at the first occurrence of each answer.
        bool seen = false;
        for (size_t j = 0; j < i; ++j)
            if (norm[j] == norm[i]) { seen = true; break; }
        if (seen) continue;
        size_t count = 0;
        for (size_t j = i; j < norm.size(); ++j)
            if (norm[j] == norm[i]) ++count;
        if (count > best_count) {
            best_count = count;
            best_first = i;
        }
    }
    return {answers[best_first],
            static_cast<double>(best_count) / static_cast<double>(answers.size())};
}

inline double verbalized_confidence(const LmResponse& resp) {
    if (!resp.verbalized_confidence)
        throw ScorerMissing("verbalized confidence absent from response");
    return *resp.verbalized_confidence;
}

struct ThresholdResult {
    double lambda = 0.0;
    std::vector<size_t> kept_indices;  // in input order
};

// Keep-top-⌈f·N⌉ with stable input-order tie-break; lambda is the
// confidence of the last kept item, so every kept score satisfies
// c >= lambda.
inline ThresholdResult percentile_threshold(const std::vector<double>& scores,
                                            double keep_fraction) {
    if (scores.empty())
        throw DegenerateInput("percentile_threshold: empty scores");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw ConfigError("percentile_threshold: keep_fraction must be in (0,1]");
    const size_t n = scores.size();
    size_t m = static_cast<size_t>(
        std::ceil(keep_fraction * static_cast<double>(n) - 1e-12));
    m = std::clamp<size_t>(m, 1, n);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return scores[a] > scores[b];
    });

    ThresholdResult res;
    res.lambda = scores[order[m - 1]];
    res.kept_indices.assign(order.begin(), order.begin() + m);
    std::sort(res.kept_indices.begin(), res.kept_indices.end());
    return res;
}

// Back-translation confidence (translation tasks): translate the model
// output back to the source language with a swapped-language prompt,
// then score by embedding cosine between the original input and the
// round trip. Negative cosines clamp to 0 so filtering stays in [0,1].
inline double back_translation_confidence(
    const std::string& source, const std::string& translation, LmBackend& lm,
    Embedder& embedder, const TaskSpec& task,
    const PromptTemplates& templates = default_templates()) {
    if (task.family != TaskFamily::translation)
        throw ConfigError("back_translation_confidence: task is not translation");
    if (translation.empty())
        throw DegenerateInput("back_translation_confidence: empty translation");

    TaskSpec back = task;
    std::swap(back.source_lang, back.target_lang);

    LmRequest req;
    req.prompt = render_prompt(back, DemoSet{}, translation, templates);
    LmResult res = lm.complete(req);
    LmResponse parsed = parse_response(back, res.text);

    Vec a = embedder.embed(parsed.prediction);
    Vec b = embedder.embed(source);
    return std::max(0.0, cosine_similarity(a, b));
}

}  // namespace semiicl
