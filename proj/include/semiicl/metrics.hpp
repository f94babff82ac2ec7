#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "semiicl/core.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

inline double accuracy(const std::vector<std::string>& preds,
                       const std::vector<std::string>& golds,
                       const TaskSpec& task) {
    if (preds.size() != golds.size())
        throw DegenerateInput("accuracy: length mismatch");
    if (preds.empty()) throw DegenerateInput("accuracy: empty input");
    size_t hits = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (answers_equivalent(task, preds[i], golds[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

namespace detail {

inline std::string strip_whitespace(const std::string& s) {
    std::string out;
    for (unsigned char c : s)
        if (!std::isspace(c)) out.push_back(static_cast<char>(c));
    return out;
}

// Clipped n-gram overlap for one order over token sequences.
struct NgramStats {
    size_t matches = 0;
    size_t hyp_count = 0;
    size_t ref_count = 0;
};

template <typename Seq>
NgramStats ngram_overlap(const Seq& hyp, const Seq& ref, size_t n) {
    NgramStats st;
    std::unordered_map<std::string, size_t> ref_counts;
    auto key = [](const Seq& s, size_t i, size_t n) {
        std::string k;
        for (size_t j = 0; j < n; ++j) {
            k += s[i + j];
            k.push_back('\x1f');
        }
        return k;
    };
    if (ref.size() >= n)
        for (size_t i = 0; i + n <= ref.size(); ++i) ref_counts[key(ref, i, n)]++;
    st.ref_count = ref.size() >= n ? ref.size() - n + 1 : 0;
    st.hyp_count = hyp.size() >= n ? hyp.size() - n + 1 : 0;
    if (hyp.size() >= n) {
        std::unordered_map<std::string, size_t> hyp_counts;
        for (size_t i = 0; i + n <= hyp.size(); ++i) hyp_counts[key(hyp, i, n)]++;
        for (const auto& [k, c] : hyp_counts) {
            auto it = ref_counts.find(k);
            if (it != ref_counts.end()) st.matches += std::min(c, it->second);
        }
    }
    return st;
}

}  // namespace detail

// ChrF++: character n-grams of order 1-6 on whitespace-stripped text
// plus word n-grams of order 1-2, beta = 2, F-score averaged over the
// orders where either side has n-grams. Range [0, 100].
inline double chrf_pp(const std::string& hypothesis, const std::string& reference) {
    if (reference.empty()) throw DegenerateInput("chrf_pp: empty reference");
    if (trim(hypothesis).empty()) return 0.0;

    constexpr double beta2 = 4.0;  // beta = 2
    double f_sum = 0;
    int contributing = 0;

    auto add_order = [&](const detail::NgramStats& st) {
        if (st.hyp_count == 0 && st.ref_count == 0) return;  // order skip
        double p = st.hyp_count ? static_cast<double>(st.matches) / st.hyp_count : 0.0;
        double r = st.ref_count ? static_cast<double>(st.matches) / st.ref_count : 0.0;
        double denom = beta2 * p + r;
        double f = denom > 0 ? (1.0 + beta2) * p * r / denom : 0.0;
        f_sum += f;
        ++contributing;
    };

    std::string hyp_chars = detail::strip_whitespace(hypothesis);
    std::string ref_chars = detail::strip_whitespace(reference);
    std::vector<std::string> hc, rc;
    for (char c : hyp_chars) hc.emplace_back(1, c);
    for (char c : ref_chars) rc.emplace_back(1, c);
    for (size_t n = 1; n <= 6; ++n)
        add_order(detail::ngram_overlap(hc, rc, n));

    auto hyp_words = split_words(hypothesis);
    auto ref_words = split_words(reference);
    for (size_t n = 1; n <= 2; ++n)
        add_order(detail::ngram_overlap(hyp_words, ref_words, n));

    if (contributing == 0) return 0.0;
    return 100.0 * f_sum / contributing;
}

// ── run summaries ───────────────────────────────────────────────────

struct ResultRow {
    std::string example_id;
    std::string prediction;
};

struct RunSummary {
    std::string metric;  // "accuracy" or "chrf++"
    double mean = 0.0;
    size_t n = 0;
    std::map<std::string, double> per_bucket;  // per gold label (classification)
};

inline RunSummary summarize_run(const std::vector<ResultRow>& results,
                                const std::map<std::string, std::string>& golds,
                                const TaskSpec& task) {
    if (results.empty()) throw DegenerateInput("summarize_run: no results");
    RunSummary s;
    s.n = results.size();
    if (task.family == TaskFamily::translation) {
        s.metric = "chrf++";
        double sum = 0;
        for (const auto& r : results) {
            auto it = golds.find(r.example_id);
            if (it == golds.end())
                throw ConfigError("summarize_run: no gold for " + r.example_id);
            sum += chrf_pp(r.prediction, it->second);
        }
        s.mean = sum / static_cast<double>(results.size());
        return s;
    }
    s.metric = "accuracy";
    std::map<std::string, std::pair<size_t, size_t>> bucket;  // label -> (hits, n)
    size_t hits = 0;
    for (const auto& r : results) {
        auto it = golds.find(r.example_id);
        if (it == golds.end())
            throw ConfigError("summarize_run: no gold for " + r.example_id);
        bool hit = answers_equivalent(task, r.prediction, it->second);
        if (hit) ++hits;
        auto& b = bucket[normalize_answer(task, it->second)];
        b.second++;
        if (hit) b.first++;
    }
    s.mean = static_cast<double>(hits) / static_cast<double>(results.size());
    for (const auto& [label, hn] : bucket)
        s.per_bucket[label] =
            static_cast<double>(hn.first) / static_cast<double>(hn.second);
    return s;
}

struct MetricRow {
    std::string run_id;
    size_t k_gt = 0;
    size_t k_psd = 0;
    std::string scorer;
    std::string metric_name;
    double value = 0.0;
};

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "run_id,k_gt,k_psd,scorer,metric_name,value\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.value);
        out += r.run_id + "," + std::to_string(r.k_gt) + "," +
               std::to_string(r.k_psd) + "," + r.scorer + "," + r.metric_name +
               "," + buf + "\n";
    }
    return out;
}

}  // namespace semiicl
