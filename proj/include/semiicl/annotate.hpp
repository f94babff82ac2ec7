#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "semiicl/confidence.hpp"
#include "semiicl/core.hpp"
#include "semiicl/embedspace.hpp"
#include "semiicl/lm_backend.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

struct AnnotateConfig {
    Scorer scorer = Scorer::verbalized;
    double keep_fraction = 0.1;
    size_t chunk_size = 500;          // K
    double epsilon = 0.8;
    size_t kappa = 1000;              // max self-fed pseudo-demos; 0 = unlimited
    int retries = 2;
    int self_consistency_samples = 10;
    double sampling_temperature = 0.7;  // for self-consistency resamples
    int max_inflight = 1;
    bool literal_dissimilar_sampler = false;  // ablation flag, see sampler
    std::optional<double> fixed_lambda;       // fixed-threshold filtering mode
    std::uint64_t seed = 0;

    void validate() const {
        if (epsilon < 0.0 || epsilon > 1.0)
            throw ConfigError("AnnotateConfig: epsilon must be in [0,1]");
        if (chunk_size < 1) throw ConfigError("AnnotateConfig: chunk_size < 1");
        if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
            throw ConfigError("AnnotateConfig: keep_fraction must be in (0,1]");
        if (max_inflight < 1) throw ConfigError("AnnotateConfig: max_inflight < 1");
    }
};

struct SkipRecord {
    std::string example_id;
    int iteration = 0;
    std::string reason;
};

// ── single-example annotation ───────────────────────────────────────

namespace detail {

inline std::optional<PseudoDemonstration> annotate_one(
    const Example& ex, const DemoSet& demos, const TaskSpec& task, LmBackend& lm,
    Embedder* embedder, const AnnotateConfig& cfg, int iteration,
    std::string* fail_reason) {
    std::string prompt = render_prompt(task, demos, ex.input);

    auto try_complete_parse = [&](int sample_index, double temperature,
                                  bool want_logprobs) -> std::optional<LmResponse> {
        for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
            try {
                LmRequest req;
                req.prompt = prompt;
                req.temperature = temperature;
                req.want_logprobs = want_logprobs;
                // Retries draw a fresh sample stream.
                req.sample_index = sample_index + attempt * 1000003;
                LmResult res = lm.complete(req);
                return parse_response(task, res.text, res.logprobs);
            } catch (const ParseFailure& e) {
                if (fail_reason) *fail_reason = e.what();
            } catch (const TransportError& e) {
                if (fail_reason) *fail_reason = e.what();
            }
        }
        return std::nullopt;
    };

    PseudoDemonstration psd;
    psd.example_id = ex.id;
    psd.input = ex.input;
    psd.scorer = cfg.scorer;
    psd.iteration = iteration;
    psd.created_by = lm.identity();

    switch (cfg.scorer) {
        case Scorer::verbalized: {
            // A parsed response without a confidence field counts as a
            // failed attempt for this scorer.
            for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
                auto resp = try_complete_parse(attempt * 7919, 0.0, false);
                if (!resp) return std::nullopt;
                if (resp->verbalized_confidence) {
                    psd.prediction = resp->prediction;
                    psd.rationale = resp->rationale;
                    psd.confidence = *resp->verbalized_confidence;
                    return psd;
                }
                if (fail_reason) *fail_reason = "verbalized confidence absent";
            }
            return std::nullopt;
        }
        case Scorer::entropy: {
            auto resp = try_complete_parse(0, 0.0, true);
            if (!resp) return std::nullopt;
            if (!resp->token_logprobs || resp->token_logprobs->empty()) {
                if (fail_reason) *fail_reason = "backend returned no logprobs";
                return std::nullopt;
            }
            std::vector<double> lps;
            for (const auto& t : *resp->token_logprobs) lps.push_back(t.logprob);
            psd.prediction = resp->prediction;
            psd.rationale = resp->rationale;
            psd.confidence = entropy_confidence(lps);
            return psd;
        }
        case Scorer::self_consistency: {
            std::vector<std::string> answers;
            std::optional<LmResponse> first;
            for (int s = 0; s < cfg.self_consistency_samples; ++s) {
                auto resp = try_complete_parse(s, cfg.sampling_temperature, false);
                if (!resp) continue;
                if (!first) first = resp;
                answers.push_back(resp->prediction);
            }
            if (answers.empty()) return std::nullopt;
            auto sc = self_consistency(answers, task);
            psd.prediction = sc.majority;
            psd.rationale = first->rationale;
            psd.confidence = sc.confidence;
            return psd;
        }
        case Scorer::back_translation: {
            if (!embedder) {
                if (fail_reason) *fail_reason = "back-translation requires an embedder";
                return std::nullopt;
            }
            auto resp = try_complete_parse(0, 0.0, false);
            if (!resp) return std::nullopt;
            psd.prediction = resp->prediction;
            psd.rationale = resp->rationale;
            psd.confidence = back_translation_confidence(
                ex.input, resp->prediction, lm, *embedder, task);
            return psd;
        }
    }
    return std::nullopt;
}

}  // namespace detail

// ── Naive-SemiICL ───────────────────────────────────────────────────
//
// One annotation attempt per unlabeled example against a fixed demo
// set. Failures are retried then skipped; output order matches input
// order regardless of internal concurrency.

inline std::vector<PseudoDemonstration> naive_semi_icl(
    const std::vector<Example>& unlabeled, const DemoSet& gt_demos,
    const TaskSpec& task, LmBackend& lm, const AnnotateConfig& cfg,
    std::vector<SkipRecord>* skips = nullptr, Embedder* embedder = nullptr,
    int iteration = 0) {
    cfg.validate();

    struct Slot {
        std::optional<PseudoDemonstration> psd;
        std::string fail_reason;
    };
    std::vector<Slot> slots = parallel_map<Slot>(
        unlabeled.size(), cfg.max_inflight, [&](size_t i) {
            Slot s;
            s.psd = detail::annotate_one(unlabeled[i], gt_demos, task, lm,
                                         embedder, cfg, iteration, &s.fail_reason);
            return s;
        });

    std::vector<PseudoDemonstration> out;
    for (size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].psd) {
            out.push_back(std::move(*slots[i].psd));
        } else if (skips) {
            skips->push_back({unlabeled[i].id, iteration,
                              slots[i].fail_reason.empty() ? "annotation failed"
                                                           : slots[i].fail_reason});
        }
    }
    return out;
}

// ── ε-Random Sampler ────────────────────────────────────────────────
//
// Mixes K_sim = K - round(εK) picks nearest to the annotated set with
// round(εK) seeded-uniform picks from the rest. By default "nearest"
// means smallest 1 - max cosine similarity; the literal flag instead
// selects the most dissimilar items (smallest min-similarity), kept for
// ablation.

inline std::vector<size_t> epsilon_random_sampler(
    const std::vector<Vec>& annotated_emb, const std::vector<Example>& pool,
    const std::vector<Vec>& pool_emb, size_t K, double epsilon,
    std::uint64_t seed, bool literal_dissimilar = false) {
    if (pool.size() != pool_emb.size())
        throw ConfigError("sampler: pool/embedding size mismatch");
    std::vector<size_t> all(pool.size());
    std::iota(all.begin(), all.end(), 0);
    if (pool.size() <= K) return all;

    size_t k_random = static_cast<size_t>(
        std::floor(epsilon * static_cast<double>(K) + 0.5));
    k_random = std::min(k_random, K);
    size_t k_sim = K - k_random;
    if (k_sim > 0 && annotated_emb.empty())
        throw ConfigError("sampler: similarity picks require annotated examples");

    std::vector<size_t> selected;
    std::vector<char> taken(pool.size(), 0);

    if (k_sim > 0) {
        std::vector<double> dist(pool.size());
        for (size_t j = 0; j < pool.size(); ++j) {
            if (literal_dissimilar) {
                double mn = 1.0;
                for (const auto& a : annotated_emb)
                    mn = std::min(mn, cosine_similarity(a, pool_emb[j]));
                dist[j] = mn;  // literal reading: rank by min-similarity
            } else {
                double mx = -1.0;
                for (const auto& a : annotated_emb)
                    mx = std::max(mx, cosine_similarity(a, pool_emb[j]));
                dist[j] = 1.0 - mx;  // distance to nearest annotated example
            }
        }
        std::vector<size_t> order = all;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (dist[a] != dist[b]) return dist[a] < dist[b];
            return pool[a].id < pool[b].id;
        });
        for (size_t i = 0; i < k_sim; ++i) {
            selected.push_back(order[i]);
            taken[order[i]] = 1;
        }
    }

    if (k_random > 0) {
        std::vector<size_t> rest;
        for (size_t j = 0; j < pool.size(); ++j)
            if (!taken[j]) rest.push_back(j);
        // Partial Fisher-Yates so the draw is stable across platforms.
        std::mt19937_64 rng(seed);
        for (size_t i = 0; i < k_random && i < rest.size(); ++i) {
            std::uniform_int_distribution<size_t> pick(i, rest.size() - 1);
            std::swap(rest[i], rest[pick(rng)]);
            selected.push_back(rest[i]);
        }
    }

    std::sort(selected.begin(), selected.end());  // pool order
    return selected;
}

// ── chunk filtering ─────────────────────────────────────────────────

inline std::vector<PseudoDemonstration> chunk_filter(
    const std::vector<PseudoDemonstration>& chunk, const AnnotateConfig& cfg) {
    if (chunk.empty()) return {};
    std::vector<PseudoDemonstration> kept;
    if (cfg.fixed_lambda) {
        for (const auto& p : chunk)
            if (p.confidence >= *cfg.fixed_lambda) kept.push_back(p);
        return kept;
    }
    std::vector<double> scores;
    for (const auto& p : chunk) scores.push_back(p.confidence);
    auto thr = percentile_threshold(scores, cfg.keep_fraction);
    for (size_t i : thr.kept_indices) kept.push_back(chunk[i]);
    return kept;
}

// ── IterPSD ─────────────────────────────────────────────────────────

struct PsdStore {
    std::vector<PseudoDemonstration> all;   // every annotation made
    std::vector<PseudoDemonstration> kept;  // self-fed working set
    std::vector<Example> remaining;         // pool yet to be annotated
};

namespace detail {

// Top-κ most confident across *all* annotations; ties favor earlier
// iterations, then smaller example_id.
inline void apply_kappa_cap(PsdStore& store, size_t kappa) {
    if (kappa == 0 || store.kept.size() <= kappa) return;
    std::vector<size_t> order(store.all.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto& x = store.all[a];
        const auto& y = store.all[b];
        if (x.confidence != y.confidence) return x.confidence > y.confidence;
        if (x.iteration != y.iteration) return x.iteration < y.iteration;
        return x.example_id < y.example_id;
    });
    store.kept.clear();
    for (size_t i = 0; i < kappa && i < order.size(); ++i)
        store.kept.push_back(store.all[order[i]]);
}

}  // namespace detail

struct IterPsdCallbacks {
    // Called after each completed chunk with that chunk's annotations
    // and skips; used for streaming persistence.
    std::function<void(int iteration, const std::vector<PseudoDemonstration>&,
                       const std::vector<SkipRecord>&)> on_chunk = {};
};

// Iterative pseudo-demonstration generation. `resume_all` /
// `resume_skips` replay a previously persisted run up to its last
// completed chunk, after which annotation continues; `max_chunks`
// bounds how many *new* chunks this call annotates (0 = no bound).
inline std::vector<PseudoDemonstration> iter_psd(
    const std::vector<Example>& unlabeled, const DemoSet& gt_demos,
    const TaskSpec& task, LmBackend& lm, Embedder& embedder,
    EmbeddingCache& cache, const AnnotateConfig& cfg,
    std::vector<SkipRecord>* skips = nullptr,
    const IterPsdCallbacks& callbacks = {},
    const std::vector<PseudoDemonstration>& resume_all = {},
    const std::vector<SkipRecord>& resume_skips = {}, int max_chunks = 0) {
    cfg.validate();

    PsdStore store;
    store.remaining = unlabeled;
    int iteration = 0;

    auto remove_ids = [&](const std::set<std::string>& ids) {
        std::vector<Example> rest;
        for (auto& e : store.remaining)
            if (!ids.count(e.id)) rest.push_back(std::move(e));
        store.remaining = std::move(rest);
    };

    // Replay a persisted prefix chunk by chunk so kept/remaining end up
    // exactly as the interrupted run left them.
    if (!resume_all.empty() || !resume_skips.empty()) {
        int last_iter = -1;
        for (const auto& p : resume_all) last_iter = std::max(last_iter, p.iteration);
        for (const auto& s : resume_skips) last_iter = std::max(last_iter, s.iteration);
        for (int it = 0; it <= last_iter; ++it) {
            detail::apply_kappa_cap(store, cfg.kappa);
            std::vector<PseudoDemonstration> chunk;
            std::set<std::string> chunk_ids;
            for (const auto& p : resume_all)
                if (p.iteration == it) {
                    chunk.push_back(p);
                    chunk_ids.insert(p.example_id);
                }
            for (const auto& s : resume_skips)
                if (s.iteration == it) chunk_ids.insert(s.example_id);
            auto kept_chunk = chunk_filter(chunk, cfg);
            for (auto& p : kept_chunk) store.kept.push_back(std::move(p));
            for (auto& p : chunk) store.all.push_back(std::move(p));
            remove_ids(chunk_ids);
        }
        iteration = last_iter + 1;
    }

    int new_chunks = 0;
    while (!store.remaining.empty()) {
        if (max_chunks > 0 && new_chunks >= max_chunks) break;
        detail::apply_kappa_cap(store, cfg.kappa);

        // Annotated set for the sampler: ground-truth demos plus the
        // current kept pseudo-demos.
        std::vector<Vec> annotated_emb;
        for (const auto& d : gt_demos.demos)
            annotated_emb.push_back(cache.get(d.example_id, d.input, embedder));
        for (const auto& p : store.kept)
            annotated_emb.push_back(cache.get(p.example_id, p.input, embedder));

        std::vector<Vec> pool_emb;
        for (const auto& e : store.remaining)
            pool_emb.push_back(cache.get(e.id, e.input, embedder));

        size_t K = std::min(cfg.chunk_size, store.remaining.size());
        // Cold start (no gt demos, nothing kept yet): similarity to an
        // empty set is undefined, so the first chunk is fully random.
        double epsilon = annotated_emb.empty() ? 1.0 : cfg.epsilon;
        auto picked = epsilon_random_sampler(
            annotated_emb, store.remaining, pool_emb, K, epsilon,
            mix_seed(cfg.seed, static_cast<std::uint64_t>(iteration)),
            cfg.literal_dissimilar_sampler);

        std::vector<Example> chunk_examples;
        std::set<std::string> chunk_ids;
        for (size_t idx : picked) {
            chunk_examples.push_back(store.remaining[idx]);
            chunk_ids.insert(store.remaining[idx].id);
        }

        DemoSet demos = gt_demos;
        for (const auto& p : store.kept) demos.append_pseudo(p);

        std::vector<SkipRecord> chunk_skips;
        auto chunk = naive_semi_icl(chunk_examples, demos, task, lm, cfg,
                                    &chunk_skips, &embedder, iteration);

        auto kept_chunk = chunk_filter(chunk, cfg);
        for (auto& p : kept_chunk) store.kept.push_back(p);
        for (const auto& p : chunk) store.all.push_back(p);
        if (skips)
            skips->insert(skips->end(), chunk_skips.begin(), chunk_skips.end());
        if (callbacks.on_chunk) callbacks.on_chunk(iteration, chunk, chunk_skips);
        remove_ids(chunk_ids);
        ++iteration;
        ++new_chunks;
    }

    return store.all;
}

}  // namespace semiicl
