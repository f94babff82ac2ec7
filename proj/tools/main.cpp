// semiicl — pseudo-demonstration pipeline CLI.
//
// Subcommands: simfixture, generate, iterpsd, infer, eval.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semiicl/harness.hpp"
#include "semiicl/remote_lm.hpp"

using namespace semiicl;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string backend = "sim";
    std::uint64_t seed = 0;
    int max_inflight = 1;
};

void apply_config_file(const GlobalArgs& g, RunOptions& opt) {
    opt.seed = g.seed;
    opt.annotate.max_inflight = g.max_inflight;
    opt.backend = (g.backend == "remote") ? BackendKind::remote : BackendKind::sim;

    if (g.config_path.empty()) return;
    json cfg = json::parse(read_file(g.config_path));
    if (cfg.contains("confidence")) {
        const auto& c = cfg["confidence"];
        if (c.contains("scorer"))
            opt.annotate.scorer = scorer_from_name(c["scorer"].get<std::string>());
        opt.annotate.keep_fraction =
            c.value("keep_fraction", opt.annotate.keep_fraction);
    }
    if (cfg.contains("annotate")) {
        const auto& a = cfg["annotate"];
        opt.annotate.chunk_size = a.value("chunk_size", opt.annotate.chunk_size);
        opt.annotate.epsilon = a.value("epsilon", opt.annotate.epsilon);
        opt.annotate.kappa = a.value("kappa", opt.annotate.kappa);
        opt.annotate.retries = a.value("retries", opt.annotate.retries);
        opt.annotate.self_consistency_samples =
            a.value("self_consistency_samples",
                    opt.annotate.self_consistency_samples);
        opt.annotate.sampling_temperature =
            a.value("sampling_temperature", opt.annotate.sampling_temperature);
        opt.annotate.literal_dissimilar_sampler =
            a.value("literal_dissimilar_sampler", false);
        if (a.contains("fixed_lambda"))
            opt.annotate.fixed_lambda = a["fixed_lambda"].get<double>();
    }
    if (cfg.contains("sim")) {
        const auto& s = cfg["sim"];
        opt.sim_cfg.p0 = s.value("p0", opt.sim_cfg.p0);
        opt.sim_cfg.gain = s.value("gain", opt.sim_cfg.gain);
        opt.sim_cfg.wrong_penalty =
            s.value("wrong_penalty", opt.sim_cfg.wrong_penalty);
        opt.sim_cfg.conf_noise = s.value("conf_noise", opt.sim_cfg.conf_noise);
        opt.sim_cfg.p_max = s.value("p_max", opt.sim_cfg.p_max);
        opt.sim_cfg.difficulty_spread =
            s.value("difficulty_spread", opt.sim_cfg.difficulty_spread);
    }
    if (cfg.contains("backend")) {
        const auto& b = cfg["backend"];
        opt.backend_cfg.base_url = b.value("base_url", std::string{});
        opt.backend_cfg.model = b.value("model", std::string{});
        opt.backend_cfg.api_key_env = b.value("api_key_env", std::string{});
        opt.backend_cfg.temperature = b.value("temperature", 0.0);
        opt.backend_cfg.max_tokens = b.value("max_tokens", 1024);
        opt.backend_cfg.logprobs = b.value("logprobs", false);
        opt.backend_cfg.retry.attempts = b.value("retry_attempts", 3);
        opt.backend_cfg.retry.backoff_ms = b.value("retry_backoff_ms", 200);
    }
}

std::unique_ptr<LmBackend> maybe_remote(const RunOptions& opt) {
    if (opt.backend != BackendKind::remote) return nullptr;
    BackendConfig cfg = opt.backend_cfg;
    cfg.kind = BackendKind::remote;
    cfg.max_inflight = opt.annotate.max_inflight;
    return std::make_unique<RemoteLm>(cfg, opt.out_dir + "/transcript.jsonl");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised in-context learning pipeline"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON config file");
    app.add_option("--seed", g.seed, "run seed");
    app.add_option("--backend", g.backend, "sim or remote")
        ->check(CLI::IsMember({"sim", "remote"}));
    app.add_option("--max-inflight", g.max_inflight, "max concurrent requests")
        ->check(CLI::PositiveNumber);

    // simfixture
    auto* fix = app.add_subcommand("simfixture", "generate a synthetic dataset");
    FixtureOptions fopt;
    std::string fix_out, fix_family = "classification";
    fix->add_option("--out", fix_out, "output directory")->required();
    fix->add_option("--size", fopt.pool_size, "unlabeled pool size");
    fix->add_option("--gt", fopt.n_gt, "ground-truth demo count");
    fix->add_option("--test", fopt.n_test, "test set size");
    fix->add_option("--labels", fopt.n_labels, "label count (classification)");
    fix->add_option("--clusters", fopt.n_clusters,
                    "embedding cluster count (default: one per label)");
    fix->add_option("--family", fix_family, "task family")
        ->check(CLI::IsMember({"classification", "translation", "freeform"}));

    // shared run flags
    RunOptions opt;
    auto add_run_flags = [&](CLI::App* cmd, bool needs_pool) {
        cmd->add_option("--task", opt.task_path, "task spec JSON")->required();
        cmd->add_option("--gt", opt.gt_path, "ground-truth demos JSONL");
        if (needs_pool)
            cmd->add_option("--pool", opt.pool_path, "unlabeled pool JSONL")
                ->required();
        cmd->add_option("--test", opt.test_path, "test split JSONL");
        cmd->add_option("--out", opt.out_dir, "output directory")->required();
        cmd->add_option("--n-gt", opt.n_gt, "ground-truth demos to use");
        cmd->add_option("--scorer",
                        [&](const std::vector<std::string>& v) {
                            opt.annotate.scorer = scorer_from_name(v[0]);
                            return true;
                        },
                        "confidence scorer");
        cmd->add_option("--keep-fraction", opt.annotate.keep_fraction,
                        "percentile filter keep fraction");
        cmd->add_flag("--take-lock", opt.take_lock,
                      "take over a stale run lock");
    };

    auto* gen = app.add_subcommand("generate",
                                   "single-pass pseudo-demonstration generation");
    add_run_flags(gen, true);
    gen->add_option("--max-examples", opt.max_examples,
                    "annotate at most N examples (resume later)");

    auto* iter = app.add_subcommand("iterpsd",
                                    "iterative pseudo-demonstration generation");
    add_run_flags(iter, true);
    double iter_eps = 0.8;
    iter->add_option("--chunk-size", opt.annotate.chunk_size, "chunk size K");
    iter->add_option("--epsilon", iter_eps, "random sample ratio");
    iter->add_option("--kappa", opt.annotate.kappa,
                     "max self-fed demos (0 = unlimited)");
    iter->add_option("--max-chunks", opt.max_chunks,
                     "annotate at most N chunks (resume later)");
    iter->add_flag("--literal-dissimilar",
                   opt.annotate.literal_dissimilar_sampler,
                   "ablation: rank similarity picks by min-similarity");

    auto* inf = app.add_subcommand("infer", "semi-supervised inference");
    add_run_flags(inf, false);
    std::string sweep = "0";
    inf->add_option("--store", opt.store_path, "pseudo-demo store JSONL");
    inf->add_option("--n-psd", sweep, "pseudo-demo counts, comma separated");
    inf->add_flag("--resample-per-query", opt.resample_per_query,
                  "resample the demo set for every test query");

    auto* ev = app.add_subcommand("eval", "evaluate an inference results file");
    ev->add_option("--task", opt.task_path, "task spec JSON")->required();
    ev->add_option("--test", opt.test_path, "test split JSONL")->required();
    ev->add_option("--results", opt.results_path, "results JSONL")->required();
    ev->add_option("--out", opt.out_dir, "output directory for metrics.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fix) {
            fopt.family = family_from_name(fix_family);
            fopt.seed = g.seed;
            Fixture fx = make_fixture(fopt);
            save_fixture(fx, fix_out);
            std::printf("fixture: %zu gt, %zu pool, %zu test -> %s\n",
                        fx.gt.size(), fx.pool.size(), fx.test.size(),
                        fix_out.c_str());
            return 0;
        }

        apply_config_file(g, opt);

        if (*gen) {
            auto remote = maybe_remote(opt);
            auto res = run_generate(opt, remote.get());
            std::printf("generate: %zu annotated, %zu skipped -> %s\n",
                        res.annotated, res.skipped, res.store_path.c_str());
        } else if (*iter) {
            if (iter_eps < 0.0 || iter_eps > 1.0)
                throw ConfigError("epsilon must be in [0,1]");
            opt.annotate.epsilon = iter_eps;
            auto remote = maybe_remote(opt);
            auto res = run_iterpsd(opt, remote.get());
            std::printf("iterpsd: %zu total annotations over %d iterations -> %s\n",
                        res.annotated, res.iterations, res.store_path.c_str());
        } else if (*inf) {
            opt.n_psd.clear();
            for (const auto& tok : split_words(replace_all(sweep, ",", " ")))
                opt.n_psd.push_back(std::stoul(tok));
            if (opt.n_psd.empty()) opt.n_psd.push_back(0);
            auto remote = maybe_remote(opt);
            auto res = run_infer(opt, remote.get());
            for (const auto& p : res.result_paths)
                std::printf("infer: wrote %s\n", p.c_str());
            std::printf("infer: curve -> %s\n", res.curve_csv_path.c_str());
        } else if (*ev) {
            RunSummary s = run_eval(opt);
            std::printf("%s over %zu examples: %.4f\n", s.metric.c_str(), s.n,
                        s.mean);
            for (const auto& [bucket, v] : s.per_bucket)
                std::printf("  %s: %.4f\n", bucket.c_str(), v);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
