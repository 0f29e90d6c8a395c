// Command-line front end: run experiments, baselines, evaluations, plots.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "s3m/s3m.hpp"

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::string env;
    std::optional<std::uint64_t> seed;
    std::optional<int> repetitions;
    std::optional<int> iterations;
    std::optional<int> threads;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config_path, "experiment config file (key = value)");
        app->add_option("-e,--env", env, "domain when no config is given: rotating_mab, malfunction_mab, cheat_mab, maze");
        app->add_option("-s,--seed", seed, "override the master seed");
        app->add_option("-r,--repetitions", repetitions, "override the repetition count");
        app->add_option("-i,--iterations", iterations, "override max_iterations");
        app->add_option("-j,--threads", threads, "worker threads for repetitions");
    }

    s3m::ExperimentConfig load() const {
        try {
            s3m::ExperimentConfig c;
            if (!config_path.empty()) {
                c = s3m::load_experiment_config(config_path);
            } else {
                c = s3m::default_experiment(env.empty() ? s3m::EnvKind::rotating_mab : s3m::parse_env_kind(env));
            }
            if (seed) c.seed = *seed;
            if (repetitions) c.repetitions = *repetitions;
            if (iterations) c.max_iterations = *iterations;
            if (threads) c.threads = *threads;
            c.validate();
            return c;
        } catch (const s3m::Error& e) {
            throw ConfigError(e.what());
        }
    }
};

void print_summary(const s3m::RunArtifacts& art, std::ostream& out) {
    out << art.method << " on " << s3m::to_string(art.config.env.kind) << ", " << art.repetitions.size()
        << " repetitions\n";
    for (const auto& rep : art.repetitions) {
        out << "  rep " << rep.repetition << ": ";
        if (!rep.records.empty()) {
            const auto& last = rep.records.back();
            out << "final policy " << last.policy_mean << " +/- " << last.policy_std;
            if (art.method == "s3m") out << ", " << last.clusters << " clusters, " << last.mealy_states << " states";
            if (art.config.env.kind == s3m::EnvKind::maze) out << ", goal rate " << last.goal_rate;
        }
        if (rep.error) out << " FAILED: " << *rep.error;
        out << '\n';
    }
    if (art.optimal) out << "  optimal " << *art.optimal << '\n';
}

s3m::RunArtifacts run_method(const s3m::ExperimentConfig& cfg, bool baseline, const std::string& out_dir) {
    s3m::RunArtifacts art = baseline ? s3m::run_baseline_rmax(cfg) : s3m::run_s3m(cfg);
    art.optimal = s3m::evaluate_oracle(cfg.env, cfg.gamma, 10000, cfg.horizon, s3m::derive_seed(cfg.seed, {~0ull}))
                      .mean_per_step;
    const std::string dir = out_dir.empty() ? (cfg.output_dir.empty() ? "out" : cfg.output_dir) : out_dir;
    s3m::write_artifacts(art, dir);
    print_summary(art, std::cout);
    std::cout << "artifacts written to " << dir << '\n';
    return art;
}

void print_eval(const s3m::EvalResult& r) {
    std::printf("mean_per_step %.6f\nstd %.6f\nsuccess_rate %.4f\ntrials %zu\n", r.mean_per_step, r.std_per_step,
                r.success_rate(), r.returns.size());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"S3M: learn regular decision processes from traces and plan on them"};
    app.require_subcommand(1);

    Common run_opts, base_opts, eval_opts, oracle_opts, sample_opts;
    std::string run_out, base_out;

    auto* run = app.add_subcommand("run", "run the sample / cluster / learn / plan loop");
    run_opts.attach(run);
    run->add_option("-o,--out", run_out, "output directory (default: output_dir from config, else ./out)");

    auto* base = app.add_subcommand("baseline", "run the R-max baseline with the same budget");
    base_opts.attach(base);
    base->add_option("-o,--out", base_out, "output directory");

    std::string machine_path, labels_path;
    std::optional<int> eval_trials;
    auto* eval = app.add_subcommand("eval", "evaluate a saved machine and label table with UCT");
    eval_opts.attach(eval);
    eval->add_option("-m,--machine", machine_path, "machine file")->required();
    eval->add_option("-l,--labels", labels_path, "label table file")->required();
    eval->add_option("-t,--trials", eval_trials, "evaluation trials");

    std::optional<int> oracle_trials;
    auto* oracle = app.add_subcommand("oracle", "evaluate the ground-truth machine with value iteration");
    oracle_opts.attach(oracle);
    oracle->add_option("-t,--trials", oracle_trials, "evaluation trials (default 10000)");

    int sample_episodes = 100;
    bool sample_smart = false;
    std::string sample_out;
    auto* sample = app.add_subcommand("sample", "write sampled traces as CSV");
    sample_opts.attach(sample);
    sample->add_option("-n,--episodes", sample_episodes, "episodes");
    sample->add_flag("--smart", sample_smart, "use the Q-learning sampler instead of pure exploration");
    sample->add_option("-o,--out", sample_out, "CSV file (default stdout)");

    std::vector<std::string> plot_csv, plot_names;
    std::string plot_out, plot_title = "policy reward per iteration";
    std::optional<double> plot_optimal;
    auto* plot = app.add_subcommand("plot", "turn result CSVs into an SVG plot");
    plot->add_option("csv", plot_csv, "result CSV files")->required();
    plot->add_option("-n,--names", plot_names, "series names, comma separated (default: file names)")->delimiter(',');
    plot->add_option("-o,--out", plot_out, "SVG file")->required();
    plot->add_option("--optimal", plot_optimal, "optimal value line");
    plot->add_option("--title", plot_title, "plot title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*run) {
            run_method(run_opts.load(), false, run_out);
        } else if (*base) {
            run_method(base_opts.load(), true, base_out);
        } else if (*eval) {
            const auto cfg = eval_opts.load();
            std::ifstream min(machine_path), lin(labels_path);
            if (!min) throw s3m::Error("io-error", "cannot open " + machine_path);
            if (!lin) throw s3m::Error("io-error", "cannot open " + labels_path);
            s3m::MealyModel model(s3m::deserialize_mealy(min), s3m::deserialize_labels(lin));
            print_eval(s3m::evaluate_machine(cfg.env, model, cfg.uct, eval_trials.value_or(cfg.eval_trials), cfg.horizon,
                                             cfg.seed));
        } else if (*oracle) {
            const auto cfg = oracle_opts.load();
            print_eval(s3m::evaluate_oracle(cfg.env, cfg.gamma, oracle_trials.value_or(10000), cfg.horizon, cfg.seed));
        } else if (*sample) {
            const auto cfg = sample_opts.load();
            const std::uint32_t na = cfg.env.num_actions();
            s3m::SampleStats stats(na);
            s3m::QTable q(na, cfg.q);
            s3m::SampleSet s = sample_smart ? s3m::sample_smart(cfg.env, sample_episodes, cfg.horizon, stats, q, cfg.seed)
                                            : s3m::sample_pure(cfg.env, sample_episodes, cfg.horizon, stats, cfg.seed);
            if (sample_out.empty()) {
                s3m::write_traces_csv(s, std::cout);
            } else {
                std::ofstream out(sample_out);
                if (!out) throw s3m::Error("io-error", "cannot write " + sample_out);
                s3m::write_traces_csv(s, out);
            }
        } else if (*plot) {
            std::vector<s3m::PlotSeries> series;
            for (std::size_t i = 0; i < plot_csv.size(); ++i) {
                std::ifstream in(plot_csv[i]);
                if (!in) throw s3m::Error("io-error", "cannot open " + plot_csv[i]);
                series.push_back({i < plot_names.size() ? plot_names[i] : plot_csv[i], s3m::read_csv(in)});
            }
            std::ofstream out(plot_out);
            if (!out || !(out << s3m::plot_svg(series, plot_optimal, plot_title)))
                throw s3m::Error("io-error", "cannot write " + plot_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
