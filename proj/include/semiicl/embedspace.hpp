#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "semiicl/core.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

using Vec = std::vector<double>;

// ── cosine similarity ───────────────────────────────────────────────

inline double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw DegenerateInput("cosine_similarity: dimension mismatch");
    if (a.empty()) throw DegenerateInput("cosine_similarity: empty vectors");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw DegenerateInput("cosine_similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double sq_euclidean(const Vec& a, const Vec& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// ── k-means ─────────────────────────────────────────────────────────

struct Clustering {
    size_t k = 0;
    std::vector<Vec> centroids;
    std::vector<int> assignment;  // index into centroids, per input vector
    double inertia = 0.0;
};

namespace detail {

inline Clustering kmeans_once(const std::vector<Vec>& vectors, size_t k,
                              std::uint64_t seed, int max_iters, double tol) {
    const size_t n = vectors.size();
    std::mt19937_64 rng(seed);
    Clustering c;
    c.k = k;
    c.assignment.assign(n, -1);

    // k-means++ seeding
    std::uniform_int_distribution<size_t> first(0, n - 1);
    c.centroids.push_back(vectors[first(rng)]);
    std::vector<double> d2(n, 0.0);
    while (c.centroids.size() < k) {
        double total = 0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& cen : c.centroids)
                best = std::min(best, sq_euclidean(vectors[i], cen));
            d2[i] = best;
            total += best;
        }
        size_t pick = 0;
        if (total <= 0) {
            pick = first(rng);  // all points coincide with a centroid
        } else {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng), acc = 0;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) { pick = i; break; }
            }
        }
        c.centroids.push_back(vectors[pick]);
    }

    double prev_inertia = std::numeric_limits<double>::max();
    for (int iter = 0; iter < max_iters; ++iter) {
        // assign
        double inertia = 0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int arg = 0;
            for (size_t j = 0; j < k; ++j) {
                double d = sq_euclidean(vectors[i], c.centroids[j]);
                if (d < best) { best = d; arg = static_cast<int>(j); }
            }
            c.assignment[i] = arg;
            inertia += best;
        }
        c.inertia = inertia;
        if (inertia > prev_inertia + 1e-9)
            throw std::logic_error("kmeans: inertia increased");
        // update
        std::vector<Vec> sums(k, Vec(vectors[0].size(), 0.0));
        std::vector<size_t> counts(k, 0);
        for (size_t i = 0; i < n; ++i) {
            const Vec& v = vectors[i];
            Vec& s = sums[c.assignment[i]];
            for (size_t d = 0; d < v.size(); ++d) s[d] += v[d];
            counts[c.assignment[i]]++;
        }
        double shift = 0;
        for (size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                // Empty cluster: reseed to the point farthest from its
                // assigned centroid.
                size_t far_i = 0;
                double far_d = -1;
                for (size_t i = 0; i < n; ++i) {
                    double d = sq_euclidean(vectors[i],
                                            c.centroids[c.assignment[i]]);
                    if (d > far_d) { far_d = d; far_i = i; }
                }
                shift += sq_euclidean(c.centroids[j], vectors[far_i]);
                c.centroids[j] = vectors[far_i];
                continue;
            }
            Vec mean = sums[j];
            for (auto& x : mean) x /= static_cast<double>(counts[j]);
            shift += sq_euclidean(c.centroids[j], mean);
            c.centroids[j] = mean;
        }
        if (shift < tol) break;
        prev_inertia = inertia;
    }

    // Final assignment/inertia against the final centroids.
    double inertia = 0;
    for (size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        int arg = 0;
        for (size_t j = 0; j < k; ++j) {
            double d = sq_euclidean(vectors[i], c.centroids[j]);
            if (d < best) { best = d; arg = static_cast<int>(j); }
        }
        c.assignment[i] = arg;
        inertia += best;
    }
    c.inertia = inertia;
    return c;
}

}  // namespace detail

// Lloyd's algorithm with seeded k-means++ init. `restarts` runs derived
// seeds and keeps the lowest-inertia result; deterministic given seed.
inline Clustering kmeans(const std::vector<Vec>& vectors, size_t k,
                         std::uint64_t seed, int max_iters = 100,
                         double tol = 1e-6, int restarts = 1) {
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (k > vectors.size())
        throw ConfigError("kmeans: k exceeds number of vectors");
    Clustering best;
    bool have = false;
    for (int r = 0; r < std::max(1, restarts); ++r) {
        Clustering c = detail::kmeans_once(vectors, k, mix_seed(seed, r),
                                           max_iters, tol);
        if (!have || c.inertia < best.inertia) {
            best = std::move(c);
            have = true;
        }
    }
    return best;
}

// Per cluster, the member closest to its centroid; ties broken by
// lexicographically smaller id. Empty clusters are skipped.
inline std::vector<std::string> nearest_to_centroids(
    const Clustering& c, const std::vector<Vec>& vectors,
    const std::vector<std::string>& ids) {
    std::vector<std::string> out;
    for (size_t j = 0; j < c.k; ++j) {
        std::string best_id;
        double best_d = std::numeric_limits<double>::max();
        for (size_t i = 0; i < vectors.size(); ++i) {
            if (c.assignment[i] != static_cast<int>(j)) continue;
            double d = sq_euclidean(vectors[i], c.centroids[j]);
            if (d < best_d || (d == best_d && ids[i] < best_id)) {
                best_d = d;
                best_id = ids[i];
            }
        }
        if (!best_id.empty()) out.push_back(best_id);
    }
    return out;
}

// ── embedding providers ─────────────────────────────────────────────

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Vec embed(const std::string& text) = 0;
    virtual int dim() const = 0;
    virtual std::string identity() const = 0;
};

// Deterministic offline embedder: seeded hash of the text drives a unit
// vector. Texts carrying a `[c:<k>]` cluster marker are placed near a
// per-cluster centroid so fixtures can exercise geometry-dependent code.
class MockEmbedder : public Embedder {
public:
    explicit MockEmbedder(int dim = 32, std::uint64_t seed = 0,
                          double cluster_noise = 0.15)
        : dim_(dim), seed_(seed), cluster_noise_(cluster_noise) {
        if (dim < 2) throw ConfigError("MockEmbedder: dim must be >= 2");
    }

    Vec embed(const std::string& text) override {
        std::string cluster = extract_marker(text, "c");
        Vec v = unit_from_seed(mix_seed(seed_, fnv1a64(text)));
        if (!cluster.empty()) {
            Vec base = unit_from_seed(mix_seed(seed_, 0xC1u, fnv1a64(cluster)));
            for (int i = 0; i < dim_; ++i)
                v[i] = base[i] + cluster_noise_ * v[i];
            normalize(v);
        }
        return v;
    }

    int dim() const override { return dim_; }
    std::string identity() const override {
        return "mock:dim=" + std::to_string(dim_) + ",seed=" + std::to_string(seed_);
    }

private:
    Vec unit_from_seed(std::uint64_t s) const {
        std::mt19937_64 rng(s);
        std::normal_distribution<double> g(0.0, 1.0);
        Vec v(dim_);
        for (auto& x : v) x = g(rng);
        normalize(v);
        return v;
    }

    static void normalize(Vec& v) {
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n == 0) { v[0] = 1.0; return; }
        for (auto& x : v) x /= n;
    }

    int dim_;
    std::uint64_t seed_;
    double cluster_noise_;
};

// Per-example embedding cache, persisted as JSONL so embeddings are
// computed once per dataset.
class EmbeddingCache {
public:
    EmbeddingCache() = default;

    const Vec& get(const std::string& example_id, const std::string& text,
                   Embedder& embedder) {
        auto it = cache_.find(example_id);
        if (it != cache_.end()) return it->second;
        auto [ins, ok] = cache_.emplace(example_id, embedder.embed(text));
        (void)ok;
        return ins->second;
    }

    bool contains(const std::string& example_id) const {
        return cache_.count(example_id) > 0;
    }

    size_t size() const { return cache_.size(); }

    std::map<std::string, Vec>& entries() { return cache_; }
    const std::map<std::string, Vec>& entries() const { return cache_; }

private:
    std::map<std::string, Vec> cache_;
};

}  // namespace semiicl
