// Acceptance gate: one pass/fail line per criterion, nonzero exit if
// any fail. Everything runs against the deterministic simulator, so a
// green run is reproducible bit-for-bit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "semiicl/harness.hpp"

using namespace semiicl;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool ok, const std::string& what) {
    std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion,
                what.c_str());
    if (!ok) ++failures;
}

// ── shared fixture / pipeline helpers ───────────────────────────────

struct AnnotatedRun {
    Fixture fx;
    std::vector<PseudoDemonstration> all;
};

Fixture clustered_fixture(size_t pool_size, size_t n_test, std::uint64_t seed,
                          size_t n_labels = 3, size_t n_clusters = 3) {
    FixtureOptions opt;
    opt.pool_size = pool_size;
    opt.n_test = n_test;
    opt.n_gt = 16;
    opt.n_labels = n_labels;
    opt.n_clusters = n_clusters;
    opt.seed = seed;
    return make_fixture(opt);
}

SimLm make_sim(const Fixture& fx, std::uint64_t seed, double conf_noise = 0.0,
               double spread = 0.3, double gain = 0.004) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.conf_noise = conf_noise;
    cfg.difficulty_spread = spread;
    cfg.gain = gain;
    cfg.add_examples(fx.all());
    return SimLm(fx.task, cfg);
}

double pool_correctness(const std::vector<PseudoDemonstration>& psds,
                        const Fixture& fx) {
    if (psds.empty()) return 0.0;
    std::map<std::string, std::string> gold;
    for (const auto& e : fx.all()) gold[e.id] = *e.gold;
    size_t hits = 0;
    for (const auto& p : psds)
        if (answers_equivalent(fx.task, p.prediction, gold.at(p.example_id)))
            ++hits;
    return static_cast<double>(hits) / static_cast<double>(psds.size());
}

std::string store_digest(const std::vector<PseudoDemonstration>& psds) {
    std::string blob;
    for (const auto& p : psds) blob += psd_to_json(p).dump() + "\n";
    return hex_digest(blob);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("semiicl_accept_" + std::to_string(::getpid()) + "_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

// ── criterion 1: derived values match brute-force oracles ───────────

bool oracle_percentile() {
    std::mt19937_64 rng(101);
    const double alphabet[4] = {0.1, 0.4, 0.4, 0.9};
    for (int it = 0; it < 400; ++it) {
        size_t n = 1 + rng() % 8;
        std::vector<double> scores;
        for (size_t i = 0; i < n; ++i) scores.push_back(alphabet[rng() % 4]);
        double f = (1 + rng() % 10) / 10.0;

        // Oracle: repeated max-scan with earliest-index tie-break.
        size_t m = std::max<size_t>(
            1, static_cast<size_t>(std::ceil(f * static_cast<double>(n) - 1e-12)));
        std::vector<char> used(n, 0);
        std::vector<size_t> want;
        for (size_t round = 0; round < m; ++round) {
            size_t best = SIZE_MAX;
            for (size_t i = 0; i < n; ++i) {
                if (used[i]) continue;
                if (best == SIZE_MAX || scores[i] > scores[best]) best = i;
            }
            used[best] = 1;
            want.push_back(best);
        }
        std::sort(want.begin(), want.end());

        auto got = percentile_threshold(scores, f);
        if (got.kept_indices != want) return false;
        for (size_t k : got.kept_indices)
            if (scores[k] < got.lambda) return false;
    }
    return true;
}

bool oracle_self_consistency() {
    TaskSpec t;
    t.family = TaskFamily::freeform;
    t.instruction = default_instruction(t);
    const char* symbols[3] = {"x", "y", "z"};
    std::mt19937_64 rng(102);
    for (int it = 0; it < 300; ++it) {
        size_t n = 1 + rng() % 10;
        std::vector<std::string> answers;
        for (size_t i = 0; i < n; ++i) answers.push_back(symbols[rng() % 3]);
        std::map<std::string, size_t> counts;
        for (const auto& a : answers) counts[a]++;
        size_t best = 0;
        for (const auto& [k, c] : counts) best = std::max(best, c);
        std::string expect;
        for (const auto& a : answers)
            if (counts[a] == best) { expect = a; break; }
        auto r = self_consistency(answers, t);
        if (r.majority != expect) return false;
        if (std::abs(r.confidence - static_cast<double>(best) / n) > 1e-12)
            return false;
    }
    return true;
}

bool oracle_kmeans() {
    std::mt19937_64 rng(103);
    std::normal_distribution<double> g(0, 1);
    for (int it = 0; it < 200; ++it) {
        size_t n = 3 + rng() % 5;  // up to 7
        size_t k = 1 + rng() % std::min<size_t>(3, n);
        std::vector<Vec> pts(n, Vec(2));
        for (auto& p : pts)
            for (auto& x : p) x = g(rng);

        // Oracle: exhaustive assignment enumeration.
        double best_inertia = std::numeric_limits<double>::max();
        size_t total = 1;
        for (size_t i = 0; i < n; ++i) total *= k;
        for (size_t code = 0; code < total; ++code) {
            size_t c = code;
            std::vector<int> assign(n);
            std::vector<size_t> counts(k, 0);
            for (size_t i = 0; i < n; ++i) {
                assign[i] = static_cast<int>(c % k);
                counts[assign[i]]++;
                c /= k;
            }
            bool ok = true;
            for (size_t j = 0; j < k; ++j)
                if (!counts[j]) ok = false;
            if (!ok) continue;
            std::vector<Vec> means(k, Vec(2, 0.0));
            for (size_t i = 0; i < n; ++i)
                for (int d = 0; d < 2; ++d) means[assign[i]][d] += pts[i][d];
            for (size_t j = 0; j < k; ++j)
                for (auto& x : means[j]) x /= static_cast<double>(counts[j]);
            double inertia = 0;
            for (size_t i = 0; i < n; ++i)
                inertia += sq_euclidean(pts[i], means[assign[i]]);
            best_inertia = std::min(best_inertia, inertia);
        }

        auto clus = kmeans(pts, k, rng(), 100, 1e-9, 32);
        if (std::abs(clus.inertia - best_inertia) > 1e-9) return false;
    }
    return true;
}

bool oracle_chrf() {
    // Oracle: multiset n-gram intersection via sorted vectors.
    auto oracle = [](const std::string& hyp, const std::string& ref) {
        auto grams = [](const std::vector<std::string>& toks, size_t n) {
            std::vector<std::string> out;
            if (toks.size() < n) return out;
            for (size_t i = 0; i + n <= toks.size(); ++i) {
                std::string gkey;
                for (size_t j = 0; j < n; ++j) gkey += toks[i + j] + "\x1f";
                out.push_back(gkey);
            }
            std::sort(out.begin(), out.end());
            return out;
        };
        std::vector<std::string> hc, rc;
        for (char c : hyp)
            if (!std::isspace(static_cast<unsigned char>(c))) hc.emplace_back(1, c);
        for (char c : ref)
            if (!std::isspace(static_cast<unsigned char>(c))) rc.emplace_back(1, c);
        auto hw = split_words(hyp);
        auto rw = split_words(ref);
        if (hc.empty()) return 0.0;
        double f_sum = 0;
        int contributing = 0;
        auto add = [&](const std::vector<std::string>& h,
                       const std::vector<std::string>& r, size_t n) {
            auto hg = grams(h, n);
            auto rg = grams(r, n);
            if (hg.empty() && rg.empty()) return;
            std::vector<std::string> both;
            std::set_intersection(hg.begin(), hg.end(), rg.begin(), rg.end(),
                                  std::back_inserter(both));
            double m = static_cast<double>(both.size());
            double p = hg.empty() ? 0.0 : m / hg.size();
            double rr = rg.empty() ? 0.0 : m / rg.size();
            double denom = 4.0 * p + rr;
            f_sum += denom > 0 ? 5.0 * p * rr / denom : 0.0;
            ++contributing;
        };
        for (size_t n = 1; n <= 6; ++n) add(hc, rc, n);
        for (size_t n = 1; n <= 2; ++n) add(hw, rw, n);
        return contributing ? 100.0 * f_sum / contributing : 0.0;
    };

    std::mt19937_64 rng(104);
    const char alphabet[] = "abc d";
    for (int it = 0; it < 200; ++it) {
        auto make = [&](size_t maxlen) {
            size_t n = 1 + rng() % maxlen;
            std::string s;
            for (size_t i = 0; i < n; ++i) s.push_back(alphabet[rng() % 5]);
            return s;
        };
        std::string hyp = make(12);
        std::string ref = make(12);
        if (trim(ref).empty() || trim(hyp).empty()) continue;
        if (std::abs(chrf_pp(hyp, ref) - oracle(hyp, ref)) > 1e-9) return false;
    }
    return true;
}

void criterion_1() {
    auto start = std::chrono::steady_clock::now();
    bool ok = oracle_percentile() && oracle_self_consistency() &&
              oracle_kmeans() && oracle_chrf();
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "derived values match independent brute-force oracles "
                  "(1100 instances, %.1fs, limit 60s)",
                  secs);
    report(1, ok && secs < 60.0, buf);
}

// ── criterion 2: confidence filtering improves demo quality ─────────

void criterion_2() {
    bool ok = true;
    double min_gain = 1.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Fixture fx = clustered_fixture(500, 10, seed);
        SimLm lm = make_sim(fx, seed, /*conf_noise=*/0.05);
        AnnotateConfig cfg;
        cfg.seed = seed;
        DemoSet gt = DemoSet::from_examples(fx.gt);
        auto all = naive_semi_icl(fx.pool, gt, fx.task, lm, cfg);
        auto kept = filter_store_globally(all, 0.1);
        double gain = pool_correctness(kept, fx) - pool_correctness(all, fx);
        min_gain = std::min(min_gain, gain);
        if (gain < 0.05) ok = false;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "top-10%% confidence filtering lifts pseudo-demo correctness "
                  "by >= 5pp on every seed (min observed %+.1fpp)",
                  min_gain * 100);
    report(2, ok, buf);
}

// ── criterion 3: accuracy scales with pseudo-demo count ─────────────

void criterion_3() {
    const std::vector<size_t> sweep = {0, 8, 128};
    std::map<size_t, double> acc_sum;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Fixture fx = clustered_fixture(500, 800, seed);
        SimLm lm = make_sim(fx, seed, /*conf_noise=*/0.05);
        AnnotateConfig cfg;
        cfg.seed = seed;
        DemoSet gt = DemoSet::from_examples(fx.gt);
        auto all = naive_semi_icl(fx.pool, gt, fx.task, lm, cfg);
        auto kept = filter_store_globally(all, 0.1);

        MockEmbedder emb(32, seed);
        EmbeddingCache cache;
        for (size_t n_psd : sweep) {
            DemoSet demos = build_inference_demos(gt, kept, n_psd, fx.task, emb,
                                                  cache, seed);
            std::vector<std::string> preds, golds;
            for (const auto& x : fx.test) {
                preds.push_back(infer_one(x, demos, fx.task, lm).prediction);
                golds.push_back(*x.gold);
            }
            acc_sum[n_psd] += accuracy(preds, golds, fx.task);
        }
    }
    double a0 = acc_sum[0] / 5, a8 = acc_sum[8] / 5, a128 = acc_sum[128] / 5;
    bool ok = (a8 - a0 >= 0.02) && (a128 - a8 >= 0.02);
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "mean accuracy scales with pseudo-demo count: "
                  "n_psd 0 -> %.3f, 8 -> %.3f, 128 -> %.3f (gaps >= 2pp)",
                  a0, a8, a128);
    report(3, ok, buf);
}

// ── criterion 4: iterative generation beats single-pass quality ─────

void criterion_4() {
    int wins = 0;
    double iter_avg = 0, naive_avg = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Fixture fx = clustered_fixture(1500, 10, seed);
        SimLm lm = make_sim(fx, seed, /*conf_noise=*/0.05);
        DemoSet gt = DemoSet::from_examples(fx.gt);
        MockEmbedder emb(32, seed);

        AnnotateConfig cfg;
        cfg.seed = seed;
        cfg.chunk_size = 500;
        cfg.epsilon = 0.8;
        cfg.kappa = 1000;
        cfg.keep_fraction = 0.1;

        EmbeddingCache cache;
        auto iter_all = iter_psd(fx.pool, gt, fx.task, lm, emb, cache, cfg);
        auto naive_all = naive_semi_icl(fx.pool, gt, fx.task, lm, cfg);

        double ic = pool_correctness(filter_store_globally(iter_all, 0.1), fx);
        double nc = pool_correctness(filter_store_globally(naive_all, 0.1), fx);
        iter_avg += ic / 5;
        naive_avg += nc / 5;
        if (ic >= nc) ++wins;
    }
    bool ok = wins >= 4;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "iterative chunked generation matches or beats single-pass "
                  "kept-pool correctness on %d/5 seeds (mean %.3f vs %.3f)",
                  wins, iter_avg, naive_avg);
    report(4, ok, buf);
}

// ── criterion 5: mixing in random picks reduces selection bias ──────

void criterion_5() {
    bool ok = true;
    double worst_margin = 10.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Fixture fx = clustered_fixture(300, 10, seed);
        MockEmbedder emb(32, seed);
        EmbeddingCache cache;
        std::vector<Vec> pool_emb;
        for (const auto& e : fx.pool)
            pool_emb.push_back(cache.get(e.id, e.input, emb));

        // Pool share of each cluster (the unbiased target).
        auto cluster_of = [&](const Example& e) {
            return extract_marker(e.input, "c");
        };
        std::map<std::string, double> pool_frac;
        for (const auto& e : fx.pool) pool_frac[cluster_of(e)] += 1.0;
        for (auto& [c, v] : pool_frac) v /= static_cast<double>(fx.pool.size());

        // Annotated set: only cluster-0 members (a biased starting set).
        std::vector<Vec> annotated;
        for (size_t i = 0; i < fx.pool.size() && annotated.size() < 40; ++i)
            if (cluster_of(fx.pool[i]) == "0") annotated.push_back(pool_emb[i]);

        auto divergence = [&](double epsilon) {
            auto picked = epsilon_random_sampler(annotated, fx.pool, pool_emb,
                                                 60, epsilon, seed);
            std::map<std::string, double> frac;
            for (size_t idx : picked) frac[cluster_of(fx.pool[idx])] += 1.0;
            double div = 0;
            for (const auto& [c, target] : pool_frac)
                div += std::abs(frac[c] / 60.0 - target);
            return div;
        };

        double biased = divergence(0.0);
        double mixed = divergence(0.8);
        worst_margin = std::min(worst_margin, biased - mixed);
        if (!(mixed < biased - 0.3)) ok = false;
    }
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "epsilon=0.8 sampling stays >= 0.30 closer (L1) to the pool "
                  "cluster mix than epsilon=0 on every seed (min margin %.2f)",
                  worst_margin);
    report(5, ok, buf);
}

// ── criterion 6: reduction equivalences ─────────────────────────────

void criterion_6() {
    Fixture fx = clustered_fixture(80, 10, 11);
    SimLm lm = make_sim(fx, 11);
    DemoSet gt = DemoSet::from_examples(fx.gt);
    MockEmbedder emb(32, 11);
    EmbeddingCache cache;

    AnnotateConfig cfg;
    cfg.seed = 11;
    cfg.epsilon = 1.0;
    cfg.kappa = 0;
    cfg.chunk_size = fx.pool.size();

    auto iter_all = iter_psd(fx.pool, gt, fx.task, lm, emb, cache, cfg);
    auto naive_all = naive_semi_icl(fx.pool, gt, fx.task, lm, cfg);
    bool stores_equal = store_digest(iter_all) == store_digest(naive_all);

    // Zero pseudo-demos degrades to the plain few-shot prompt.
    DemoSet demos = build_inference_demos(gt, iter_all, 0, fx.task, emb, cache, 11);
    bool prompts_equal = true;
    for (const auto& x : fx.test)
        if (render_prompt(fx.task, demos, x.input) !=
            render_prompt(fx.task, gt, x.input))
            prompts_equal = false;

    report(6, stores_equal && prompts_equal,
           "epsilon=1/unlimited-kappa/full-chunk iteration reproduces the "
           "single-pass store byte-for-byte, and n_psd=0 reproduces plain "
           "few-shot prompts");
}

// ── criterion 7: determinism and resumable runs ─────────────────────

void criterion_7() {
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 3 && ok; ++seed) {
        std::string tag = std::to_string(seed);
        TempDir fixture_dir("fx" + tag);
        FixtureOptions fopt;
        fopt.pool_size = 60;
        fopt.n_gt = 4;
        fopt.n_test = 10;
        fopt.n_labels = 3;
        fopt.seed = seed;
        save_fixture(make_fixture(fopt), fixture_dir.str());

        auto options = [&](const std::string& out_dir) {
            RunOptions opt;
            opt.task_path = fixture_dir.str() + "/task.json";
            opt.gt_path = fixture_dir.str() + "/gt.jsonl";
            opt.pool_path = fixture_dir.str() + "/pool.jsonl";
            opt.test_path = fixture_dir.str() + "/test.jsonl";
            opt.out_dir = out_dir;
            opt.seed = seed;
            opt.annotate.seed = seed;
            opt.annotate.chunk_size = 20;
            opt.annotate.keep_fraction = 0.2;
            return opt;
        };

        // Single-pass: rerun and interrupted-then-resumed runs must all
        // produce identical store bytes.
        TempDir g1("g1" + tag), g2("g2" + tag), g3("g3" + tag);
        run_generate(options(g1.str()));
        run_generate(options(g2.str()));
        RunOptions interrupted = options(g3.str());
        interrupted.max_examples = 25;
        run_generate(interrupted);
        interrupted.max_examples = 0;
        run_generate(interrupted);
        std::string d1 = file_digest(g1.str() + "/psd.jsonl");
        if (d1 != file_digest(g2.str() + "/psd.jsonl")) ok = false;
        if (d1 != file_digest(g3.str() + "/psd.jsonl")) ok = false;

        // Iterative: same, interrupting after the first chunk.
        TempDir i1("i1" + tag), i2("i2" + tag), i3("i3" + tag);
        run_iterpsd(options(i1.str()));
        run_iterpsd(options(i2.str()));
        RunOptions iter_part = options(i3.str());
        iter_part.max_chunks = 1;
        run_iterpsd(iter_part);
        iter_part.max_chunks = 0;
        run_iterpsd(iter_part);
        std::string e1 = file_digest(i1.str() + "/psd.jsonl");
        if (e1 != file_digest(i2.str() + "/psd.jsonl")) ok = false;
        if (e1 != file_digest(i3.str() + "/psd.jsonl")) ok = false;
    }
    report(7, ok,
           "reruns and interrupted-then-resumed runs produce byte-identical "
           "stores for both generation modes on 3 seeds");
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    if (failures) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
