#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "semiicl/annotate.hpp"
#include "semiicl/io.hpp"
#include "semiicl/lm_backend.hpp"
#include "semiicl/metrics.hpp"
#include "semiicl/select_infer.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

namespace fs = std::filesystem;

// ── synthetic fixtures ──────────────────────────────────────────────
//
// Fixture inputs carry `[id:...]` markers (looked up by the simulator)
// and `[c:<k>]` cluster markers (placing the mock embedding near a
// cluster centroid). Gold answers are present on every split so
// annotation quality is measurable after the fact.

struct Fixture {
    TaskSpec task;
    std::vector<Example> gt;
    std::vector<Example> pool;
    std::vector<Example> test;

    std::vector<Example> all() const {
        std::vector<Example> out = gt;
        out.insert(out.end(), pool.begin(), pool.end());
        out.insert(out.end(), test.begin(), test.end());
        return out;
    }
};

struct FixtureOptions {
    TaskFamily family = TaskFamily::classification;
    size_t pool_size = 200;
    size_t n_gt = 16;
    size_t n_test = 100;
    size_t n_labels = 5;     // classification
    size_t n_clusters = 0;   // 0 = one cluster per label
    std::uint64_t seed = 0;
};

inline Fixture make_fixture(const FixtureOptions& opt) {
    if (opt.pool_size == 0) throw ConfigError("fixture: pool size must be > 0");
    Fixture fx;
    std::mt19937_64 rng(mix_seed(opt.seed, 0xF17));

    static const char* kTopics[] = {"billing", "transfer", "weather", "music",
                                    "travel", "garden", "sports", "kitchen"};
    static const char* kVerbs[] = {"check", "update", "cancel", "schedule",
                                   "review", "compare"};

    auto gen = [&](const std::string& prefix, size_t count,
                   std::vector<Example>& out) {
        for (size_t i = 0; i < count; ++i) {
            size_t serial = out.size();
            Example e;
            e.id = prefix + std::to_string(serial);
            if (opt.family == TaskFamily::classification) {
                size_t n_clusters = opt.n_clusters ? opt.n_clusters : opt.n_labels;
                size_t l = (fnv1a64(e.id) ^ rng()) % opt.n_labels;
                size_t c = l % n_clusters;
                e.input = "[id:" + e.id + "] [c:" + std::to_string(c) + "] " +
                          kVerbs[serial % 6] + " request about " +
                          kTopics[l % 8] + " item " + std::to_string(serial);
                e.gold = "L" + std::to_string(l);
            } else if (opt.family == TaskFamily::translation) {
                e.input = "[id:" + e.id + "] the " + kVerbs[serial % 6] +
                          " of " + kTopics[serial % 8] + " number " +
                          std::to_string(serial) + " is ready";
                e.gold = "la " + std::string(kVerbs[serial % 6]) + "a de " +
                         kTopics[serial % 8] + " numero " +
                         std::to_string(serial) + " esta lista";
            } else {
                e.input = "[id:" + e.id + "] what is " + std::to_string(serial) +
                          " plus " + std::to_string(serial % 7) + "?";
                e.gold = std::to_string(serial + serial % 7);
            }
            out.push_back(std::move(e));
        }
    };

    if (opt.family == TaskFamily::classification) {
        fx.task.family = TaskFamily::classification;
        for (size_t l = 0; l < opt.n_labels; ++l)
            fx.task.labels.push_back("L" + std::to_string(l));
        fx.task.equivalence = EquivalenceRule::label_match;
    } else if (opt.family == TaskFamily::translation) {
        fx.task.family = TaskFamily::translation;
        fx.task.source_lang = "English";
        fx.task.target_lang = "Novalang";
    } else {
        fx.task.family = TaskFamily::freeform;
    }
    fx.task.instruction = default_instruction(fx.task);
    fx.task.validate();

    gen("g", opt.n_gt, fx.gt);
    gen("p", opt.pool_size, fx.pool);
    gen("t", opt.n_test, fx.test);
    return fx;
}

inline void save_fixture(const Fixture& fx, const std::string& dir) {
    fs::create_directories(dir);
    write_file(dir + "/task.json", task_to_json(fx.task).dump(2) + "\n");
    save_examples(dir + "/gt.jsonl", fx.gt);
    save_examples(dir + "/pool.jsonl", fx.pool);
    save_examples(dir + "/test.jsonl", fx.test);
}

// ── run manifest and lockfile ───────────────────────────────────────

struct RunManifest {
    std::string run_id;
    json config;
    std::string backend_identity;
    std::string status = "running";
    json outcome;

    static RunManifest start(const std::string& out_dir, json config,
                             const std::string& backend_identity) {
        RunManifest m;
        m.config = std::move(config);
        m.backend_identity = backend_identity;
        m.run_id = hex_digest(m.config.dump() + backend_identity);
        m.write(out_dir);
        return m;
    }

    void finalize(const std::string& out_dir, json outcome_summary) {
        status = "done";
        outcome = std::move(outcome_summary);
        write(out_dir);
    }

    void write(const std::string& out_dir) const {
        json j;
        j["run_id"] = run_id;
        j["config"] = config;
        j["backend"] = backend_identity;
        j["config_digest"] = hex_digest(config.dump());
        j["status"] = status;
        j["timestamp"] = static_cast<long long>(
            std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count());
        if (!outcome.is_null()) j["outcome"] = outcome;
        write_file(out_dir + "/manifest.json", j.dump(2) + "\n");
    }
};

// One run owns its output directory; a stale lock (from an interrupted
// run) must be taken over explicitly.
class RunLock {
public:
    RunLock(const std::string& dir, bool take_over) : path_(dir + "/.lock") {
        fs::create_directories(dir);
        if (fs::exists(path_) && !take_over)
            throw ConfigError("output directory is locked (" + path_ +
                              "); pass --take-lock to take over");
        write_file(path_, "locked\n");
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    std::string path_;
};

// ── run options ─────────────────────────────────────────────────────

struct RunOptions {
    std::string task_path;
    std::string gt_path;
    std::string pool_path;
    std::string test_path;   // infer/eval; also sim truth for held-out ids
    std::string store_path;  // infer
    std::string results_path;  // eval
    std::string out_dir;

    BackendKind backend = BackendKind::sim;
    BackendConfig backend_cfg;
    SimConfig sim_cfg;
    AnnotateConfig annotate;

    size_t n_gt = SIZE_MAX;           // how many gt demos to use (prefix)
    std::vector<size_t> n_psd{0};     // infer sweep
    bool resample_per_query = false;
    bool take_lock = false;
    size_t max_examples = 0;          // generate: stop early (0 = all)
    int max_chunks = 0;               // iterpsd: stop early (0 = all)
    int embed_dim = 32;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::unique_ptr<LmBackend> make_backend(const RunOptions& opt,
                                               const TaskSpec& task,
                                               const std::vector<Example>& truth) {
    if (opt.backend == BackendKind::sim) {
        SimConfig cfg = opt.sim_cfg;
        cfg.seed = opt.seed;
        cfg.add_examples(truth);
        return std::make_unique<SimLm>(task, cfg);
    }
    throw ConfigError("remote backend must be constructed by the caller");
}

inline DemoSet gt_demo_set(const std::vector<Example>& gt, size_t n_gt) {
    std::vector<Example> used(gt.begin(),
                              gt.begin() + std::min(n_gt, gt.size()));
    return DemoSet::from_examples(used);
}

inline json annotate_cfg_json(const AnnotateConfig& a) {
    json j;
    j["scorer"] = scorer_name(a.scorer);
    j["keep_fraction"] = a.keep_fraction;
    j["chunk_size"] = a.chunk_size;
    j["epsilon"] = a.epsilon;
    j["kappa"] = a.kappa;
    j["retries"] = a.retries;
    j["self_consistency_samples"] = a.self_consistency_samples;
    j["sampling_temperature"] = a.sampling_temperature;
    j["max_inflight"] = a.max_inflight;
    j["literal_dissimilar_sampler"] = a.literal_dissimilar_sampler;
    if (a.fixed_lambda) j["fixed_lambda"] = *a.fixed_lambda;
    j["seed"] = a.seed;
    return j;
}

inline std::vector<Example> load_truth_examples(const RunOptions& opt) {
    std::vector<Example> truth;
    for (const auto& path : {opt.gt_path, opt.pool_path, opt.test_path}) {
        if (path.empty() || !fs::exists(path)) continue;
        auto ex = load_examples(path);
        truth.insert(truth.end(), ex.begin(), ex.end());
    }
    return truth;
}

}  // namespace detail

// ── generate (Naive-SemiICL) ────────────────────────────────────────

struct GenerateResult {
    std::string store_path;
    size_t annotated = 0;
    size_t skipped = 0;
};

inline GenerateResult run_generate(RunOptions opt, LmBackend* backend = nullptr,
                                   Embedder* embedder = nullptr) {
    TaskSpec task = load_task(opt.task_path);
    auto pool = load_examples(opt.pool_path);
    auto gt = opt.gt_path.empty() ? std::vector<Example>{}
                                  : load_examples(opt.gt_path);
    AnnotateConfig cfg = opt.annotate;
    cfg.seed = opt.seed;
    cfg.validate();

    RunLock lock(opt.out_dir, opt.take_lock);
    std::string store_path = opt.out_dir + "/psd.jsonl";
    std::string skip_path = opt.out_dir + "/psd.skips.jsonl";

    std::unique_ptr<LmBackend> owned;
    if (!backend) {
        owned = detail::make_backend(opt, task, detail::load_truth_examples(opt));
        backend = owned.get();
    }
    std::unique_ptr<Embedder> owned_emb;
    if (!embedder) {
        owned_emb = std::make_unique<MockEmbedder>(opt.embed_dim, opt.seed);
        embedder = owned_emb.get();
    }

    json cfgj = detail::annotate_cfg_json(cfg);
    cfgj["mode"] = "generate";
    cfgj["pool"] = opt.pool_path;
    cfgj["n_gt"] = std::min(opt.n_gt, gt.size());
    RunManifest manifest = RunManifest::start(opt.out_dir, cfgj,
                                              backend->identity());

    // Resume: anything already in the store or skip file stays done.
    std::set<std::string> done;
    if (fs::exists(store_path))
        for (const auto& p : load_psd_store(store_path)) done.insert(p.example_id);
    if (fs::exists(skip_path))
        for (const auto& s : load_skips(skip_path)) done.insert(s.example_id);

    std::vector<Example> todo;
    for (const auto& e : pool)
        if (!done.count(e.id)) todo.push_back(e);
    if (opt.max_examples > 0 && todo.size() > opt.max_examples)
        todo.resize(opt.max_examples);

    DemoSet gt_demos = detail::gt_demo_set(gt, opt.n_gt);
    std::vector<SkipRecord> skips;
    auto psds = naive_semi_icl(todo, gt_demos, task, *backend, cfg, &skips,
                               embedder);
    append_psd_store(store_path, psds);
    append_skips(skip_path, skips);

    if (psds.empty() && !todo.empty())
        std::fprintf(stderr, "warning: all %zu examples were skipped\n",
                     todo.size());

    manifest.finalize(opt.out_dir, {{"annotated", psds.size()},
                                    {"skipped", skips.size()},
                                    {"resumed_done", done.size()}});
    return {store_path, psds.size(), skips.size()};
}

// ── iterpsd ─────────────────────────────────────────────────────────

struct IterPsdResult {
    std::string store_path;
    size_t annotated = 0;
    size_t skipped = 0;
    int iterations = 0;
};

inline IterPsdResult run_iterpsd(RunOptions opt, LmBackend* backend = nullptr,
                                 Embedder* embedder = nullptr) {
    TaskSpec task = load_task(opt.task_path);
    auto pool = load_examples(opt.pool_path);
    auto gt = opt.gt_path.empty() ? std::vector<Example>{}
                                  : load_examples(opt.gt_path);
    AnnotateConfig cfg = opt.annotate;
    cfg.seed = opt.seed;
    cfg.validate();
    if (cfg.kappa != 0 && cfg.kappa < cfg.chunk_size)
        std::fprintf(stderr,
                     "warning: kappa (%zu) < chunk size (%zu); the kept set "
                     "will churn every iteration\n",
                     cfg.kappa, cfg.chunk_size);

    RunLock lock(opt.out_dir, opt.take_lock);
    std::string store_path = opt.out_dir + "/psd.jsonl";
    std::string skip_path = opt.out_dir + "/psd.skips.jsonl";

    std::unique_ptr<LmBackend> owned;
    if (!backend) {
        owned = detail::make_backend(opt, task, detail::load_truth_examples(opt));
        backend = owned.get();
    }
    std::unique_ptr<Embedder> owned_emb;
    if (!embedder) {
        owned_emb = std::make_unique<MockEmbedder>(opt.embed_dim, opt.seed);
        embedder = owned_emb.get();
    }

    json cfgj = detail::annotate_cfg_json(cfg);
    cfgj["mode"] = "iterpsd";
    cfgj["pool"] = opt.pool_path;
    cfgj["n_gt"] = std::min(opt.n_gt, gt.size());
    cfgj["final_pool_rule"] = "global-percentile-over-all";
    RunManifest manifest = RunManifest::start(opt.out_dir, cfgj,
                                              backend->identity());

    std::vector<PseudoDemonstration> resume_all;
    std::vector<SkipRecord> resume_skips;
    if (fs::exists(store_path)) resume_all = load_psd_store(store_path);
    if (fs::exists(skip_path)) resume_skips = load_skips(skip_path);

    DemoSet gt_demos = detail::gt_demo_set(gt, opt.n_gt);
    EmbeddingCache cache;
    std::string cache_path = opt.out_dir + "/embeddings.jsonl";
    load_embedding_cache(cache, cache_path, embedder->identity());

    int last_iteration = -1;
    size_t new_annotated = 0, new_skipped = 0;
    IterPsdCallbacks cb;
    cb.on_chunk = [&](int iteration, const std::vector<PseudoDemonstration>& chunk,
                      const std::vector<SkipRecord>& chunk_skips) {
        append_psd_store(store_path, chunk);
        append_skips(skip_path, chunk_skips);
        last_iteration = iteration;
        new_annotated += chunk.size();
        new_skipped += chunk_skips.size();
    };

    auto all = iter_psd(pool, gt_demos, task, *backend, *embedder, cache, cfg,
                        nullptr, cb, resume_all, resume_skips, opt.max_chunks);
    save_embedding_cache(cache, cache_path, embedder->identity());

    manifest.finalize(opt.out_dir,
                      {{"annotated_total", all.size()},
                       {"annotated_new", new_annotated},
                       {"skipped_new", new_skipped},
                       {"iterations", last_iteration + 1}});
    return {store_path, all.size(), new_skipped, last_iteration + 1};
}

// ── infer ───────────────────────────────────────────────────────────

struct InferResult {
    std::vector<std::string> result_paths;
    std::string curve_csv_path;
};

// Global percentile filter applied to a loaded store; the filtered set
// is the demonstration pool for inference.
inline std::vector<PseudoDemonstration> filter_store_globally(
    const std::vector<PseudoDemonstration>& all, double keep_fraction) {
    if (all.empty()) return {};
    std::vector<double> scores;
    for (const auto& p : all) scores.push_back(p.confidence);
    auto thr = percentile_threshold(scores, keep_fraction);
    std::vector<PseudoDemonstration> kept;
    for (size_t i : thr.kept_indices) kept.push_back(all[i]);
    return kept;
}

inline InferResult run_infer(RunOptions opt, LmBackend* backend = nullptr,
                             Embedder* embedder = nullptr) {
    TaskSpec task = load_task(opt.task_path);
    auto test = load_examples(opt.test_path);
    auto gt = opt.gt_path.empty() ? std::vector<Example>{}
                                  : load_examples(opt.gt_path);

    bool needs_store = false;
    for (size_t n : opt.n_psd)
        if (n > 0) needs_store = true;
    std::vector<PseudoDemonstration> store;
    if (needs_store) {
        if (opt.store_path.empty() || !fs::exists(opt.store_path))
            throw ConfigError("infer: n_psd > 0 requires an existing store");
        store = load_psd_store(opt.store_path);
    }

    RunLock lock(opt.out_dir, opt.take_lock);

    std::unique_ptr<LmBackend> owned;
    if (!backend) {
        owned = detail::make_backend(opt, task, detail::load_truth_examples(opt));
        backend = owned.get();
    }
    std::unique_ptr<Embedder> owned_emb;
    if (!embedder) {
        owned_emb = std::make_unique<MockEmbedder>(opt.embed_dim, opt.seed);
        embedder = owned_emb.get();
    }

    json cfgj;
    cfgj["mode"] = "infer";
    cfgj["n_gt"] = std::min(opt.n_gt, gt.size());
    json sweep = json::array();
    for (size_t n : opt.n_psd) sweep.push_back(n);
    cfgj["n_psd"] = sweep;
    cfgj["keep_fraction"] = opt.annotate.keep_fraction;
    cfgj["resample_per_query"] = opt.resample_per_query;
    cfgj["seed"] = opt.seed;
    RunManifest manifest = RunManifest::start(opt.out_dir, cfgj,
                                              backend->identity());

    auto pool = filter_store_globally(store, opt.annotate.keep_fraction);
    DemoSet gt_demos = detail::gt_demo_set(gt, opt.n_gt);
    EmbeddingCache cache;

    InferResult out;
    std::vector<MetricRow> curve;
    std::map<std::string, std::string> golds;
    for (const auto& e : test)
        if (e.gold) golds[e.id] = *e.gold;

    for (size_t n_psd : opt.n_psd) {
        DemoSet demos;
        if (!opt.resample_per_query)
            demos = build_inference_demos(gt_demos, pool, n_psd, task,
                                          *embedder, cache, opt.seed);
        std::vector<LmResponse> responses = parallel_map<LmResponse>(
            test.size(), opt.annotate.max_inflight, [&](size_t i) {
                if (opt.resample_per_query) {
                    return semi_supervised_infer(
                        test[i], gt_demos, pool, n_psd, task, *backend,
                        *embedder, cache, mix_seed(opt.seed, i),
                        opt.annotate.retries);
                }
                return infer_one(test[i], demos, task, *backend,
                                 opt.annotate.retries);
            });

        std::string path = opt.out_dir + "/results_npsd" +
                           std::to_string(n_psd) + ".jsonl";
        std::ofstream f(path, std::ios::trunc);
        std::vector<ResultRow> rows;
        for (size_t i = 0; i < test.size(); ++i) {
            json j;
            j["example_id"] = test[i].id;
            j["prediction"] = responses[i].prediction;
            if (responses[i].rationale) j["rationale"] = *responses[i].rationale;
            if (responses[i].verbalized_confidence)
                j["confidence"] = *responses[i].verbalized_confidence;
            std::string prompt =
                opt.resample_per_query
                    ? std::string("per-query")
                    : render_prompt(task, demos, test[i].input);
            j["prompt_hash"] = hex_digest(prompt);
            j["n_gt"] = gt_demos.demos.size();
            j["n_psd"] = n_psd;
            f << j.dump() << "\n";
            rows.push_back({test[i].id, responses[i].prediction});
        }
        out.result_paths.push_back(path);

        if (!golds.empty()) {
            RunSummary s = summarize_run(rows, golds, task);
            curve.push_back({manifest.run_id, gt_demos.demos.size(), n_psd,
                             scorer_name(opt.annotate.scorer), s.metric, s.mean});
        }
    }

    out.curve_csv_path = opt.out_dir + "/curve.csv";
    write_file(out.curve_csv_path, metrics_csv(curve));
    manifest.finalize(opt.out_dir, {{"result_files", out.result_paths.size()},
                                    {"test_examples", test.size()}});
    return out;
}

// ── eval ────────────────────────────────────────────────────────────

inline RunSummary run_eval(const RunOptions& opt) {
    TaskSpec task = load_task(opt.task_path);
    auto test = load_examples(opt.test_path);
    std::map<std::string, std::string> golds;
    for (const auto& e : test)
        if (e.gold) golds[e.id] = *e.gold;

    std::ifstream f(opt.results_path);
    if (!f) throw ConfigError("cannot open results: " + opt.results_path);
    std::vector<ResultRow> rows;
    size_t k_gt = 0, k_psd = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        rows.push_back({j.at("example_id").get<std::string>(),
                        j.at("prediction").get<std::string>()});
        k_gt = j.value("n_gt", 0);
        k_psd = j.value("n_psd", 0);
    }

    RunSummary s = summarize_run(rows, golds, task);
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        std::vector<MetricRow> out_rows;
        out_rows.push_back({hex_digest(opt.results_path), k_gt, k_psd,
                            scorer_name(opt.annotate.scorer), s.metric, s.mean});
        for (const auto& [bucket, v] : s.per_bucket)
            out_rows.push_back({hex_digest(opt.results_path), k_gt, k_psd,
                                scorer_name(opt.annotate.scorer),
                                s.metric + ":" + bucket, v});
        write_file(opt.out_dir + "/metrics.csv", metrics_csv(out_rows));
    }
    return s;
}

// ── utility: store digest (for determinism checks) ──────────────────

inline std::string file_digest(const std::string& path) {
    return hex_digest(read_file(path));
}

}  // namespace semiicl
