#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "semiicl/annotate.hpp"
#include "semiicl/core.hpp"
#include "semiicl/embedspace.hpp"
#include "semiicl/lm_backend.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

// ── diverse demonstration sampling ──────────────────────────────────
//
// Classification: group by predicted label and round-robin over labels
// in descending group-size order (ties lexicographic), taking the
// highest-confidence remaining member each visit. Other families:
// k-means with k = n, walking each cluster from its centroid outward.

inline DemoSet diverse_sample(const std::vector<PseudoDemonstration>& pool,
                              size_t n, const TaskSpec& task,
                              Embedder& embedder, EmbeddingCache& cache,
                              std::uint64_t seed) {
    if (n < 1) throw ConfigError("diverse_sample: n must be >= 1");
    if (pool.empty()) throw DegenerateInput("diverse_sample: empty pool");

    DemoSet out;
    if (n >= pool.size()) {
        for (const auto& p : pool) out.append_pseudo(p);
        return out;
    }

    if (task.family == TaskFamily::classification) {
        std::map<std::string, std::vector<size_t>> groups;
        for (size_t i = 0; i < pool.size(); ++i)
            groups[normalize_answer(task, pool[i].prediction)].push_back(i);
        for (auto& [label, members] : groups) {
            std::sort(members.begin(), members.end(), [&](size_t a, size_t b) {
                if (pool[a].confidence != pool[b].confidence)
                    return pool[a].confidence > pool[b].confidence;
                return pool[a].example_id < pool[b].example_id;
            });
        }
        std::vector<std::string> label_order;
        for (const auto& [label, members] : groups) label_order.push_back(label);
        std::sort(label_order.begin(), label_order.end(),
                  [&](const std::string& a, const std::string& b) {
                      if (groups[a].size() != groups[b].size())
                          return groups[a].size() > groups[b].size();
                      return a < b;
                  });
        std::map<std::string, size_t> cursor;
        while (out.demos.size() < n) {
            bool progressed = false;
            for (const auto& label : label_order) {
                if (out.demos.size() >= n) break;
                size_t& c = cursor[label];
                if (c < groups[label].size()) {
                    out.append_pseudo(pool[groups[label][c++]]);
                    progressed = true;
                }
            }
            if (!progressed) break;
        }
        return out;
    }

    // Embedding-space route: one cluster per requested slot, then
    // round-robin by next-nearest within each cluster.
    std::vector<Vec> vecs;
    std::vector<std::string> ids;
    for (const auto& p : pool) {
        vecs.push_back(cache.get(p.example_id, p.input, embedder));
        ids.push_back(p.example_id);
    }
    size_t k = std::min(n, pool.size());
    Clustering clus = kmeans(vecs, k, seed, 100, 1e-6, 8);

    // Per cluster, members ordered by distance to centroid (ties by id).
    std::vector<std::vector<size_t>> by_cluster(k);
    for (size_t i = 0; i < pool.size(); ++i)
        by_cluster[clus.assignment[i]].push_back(i);
    for (size_t j = 0; j < k; ++j) {
        auto& members = by_cluster[j];
        std::sort(members.begin(), members.end(), [&](size_t a, size_t b) {
            double da = sq_euclidean(vecs[a], clus.centroids[j]);
            double db = sq_euclidean(vecs[b], clus.centroids[j]);
            if (da != db) return da < db;
            return ids[a] < ids[b];
        });
    }
    std::vector<size_t> cursor(k, 0);
    while (out.demos.size() < n) {
        bool progressed = false;
        for (size_t j = 0; j < k && out.demos.size() < n; ++j) {
            if (cursor[j] < by_cluster[j].size()) {
                out.append_pseudo(pool[by_cluster[j][cursor[j]++]]);
                progressed = true;
            }
        }
        if (!progressed) break;
    }
    return out;
}

// ── semi-supervised inference ───────────────────────────────────────

inline DemoSet build_inference_demos(const DemoSet& gt_demos,
                                     const std::vector<PseudoDemonstration>& psd_pool,
                                     size_t n_psd, const TaskSpec& task,
                                     Embedder& embedder, EmbeddingCache& cache,
                                     std::uint64_t seed) {
    DemoSet ds = gt_demos;  // ground truth first, pseudo after
    if (n_psd > 0) {
        if (psd_pool.empty())
            throw ConfigError("inference: n_psd > 0 but pseudo-demo pool is empty");
        DemoSet pseudo = diverse_sample(psd_pool, n_psd, task, embedder, cache, seed);
        for (const auto& d : pseudo.demos) ds.demos.push_back(d);
    }
    return ds;
}

inline LmResponse infer_one(const Example& x, const DemoSet& demos,
                            const TaskSpec& task, LmBackend& lm, int retries = 2) {
    std::string prompt = render_prompt(task, demos, x.input);
    std::string last_error;
    for (int attempt = 0; attempt <= retries; ++attempt) {
        try {
            LmRequest req;
            req.prompt = prompt;
            req.sample_index = attempt * 7919;
            LmResult res = lm.complete(req);
            return parse_response(task, res.text, res.logprobs);
        } catch (const ParseFailure& e) {
            last_error = e.what();
        }
    }
    throw ParseFailure("inference failed for " + x.id + ": " + last_error, "");
}

// Convenience wrapper: n_psd = 0 degrades to plain k-shot ICL.
inline LmResponse semi_supervised_infer(
    const Example& x, const DemoSet& gt_demos,
    const std::vector<PseudoDemonstration>& psd_pool, size_t n_psd,
    const TaskSpec& task, LmBackend& lm, Embedder& embedder,
    EmbeddingCache& cache, std::uint64_t seed, int retries = 2) {
    DemoSet demos = build_inference_demos(gt_demos, psd_pool, n_psd, task,
                                          embedder, cache, seed);
    return infer_one(x, demos, task, lm, retries);
}

}  // namespace semiicl
