#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "s3m/clustering.hpp"
#include "s3m/core.hpp"
#include "s3m/distribution.hpp"
#include "s3m/envs.hpp"
#include "s3m/mealy.hpp"
#include "s3m/mealy_learn.hpp"
#include "s3m/planning.hpp"
#include "s3m/rng.hpp"
#include "s3m/sampling.hpp"

namespace s3m {

struct ExperimentConfig {
    EnvConfig env;
    SamplerKind sampler = SamplerKind::smart;
    std::uint64_t min_samples = 10;
    std::vector<double> epsilons{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
    double lambda = 1.0;
    int max_iterations = 15;
    int episodes = 200;  // per iteration
    int horizon = 10;    // sampling and evaluation episodes
    int eval_trials = 50;
    int repetitions = 5;
    UctParams uct;
    RmaxParams rmax;
    QParams q;
    double gamma = 0.95;
    std::uint64_t seed = 0;
    std::string output_dir;
    int threads = 0;  // 0: one per repetition, capped by the hardware

    void validate() const {
        auto bad = [](const std::string& m) { throw Error("invalid-config", m); };
        env.validate();
        if (min_samples < 1) bad("min_samples must be at least 1");
        if (epsilons.empty()) bad("epsilons must be non-empty");
        for (double e : epsilons)
            if (!(e >= 0.0) || !std::isfinite(e)) bad("epsilons must be finite and non-negative");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be finite and non-negative");
        if (max_iterations < 0) bad("max_iterations must be non-negative");
        if (episodes < 1) bad("episodes must be at least 1");
        if (horizon < 1) bad("horizon must be at least 1");
        if (eval_trials < 1) bad("eval_trials must be at least 1");
        if (repetitions < 1) bad("repetitions must be at least 1");
        if (uct.iterations < 1) bad("uct_iterations must be at least 1");
        if (!(uct.c >= 0.0)) bad("uct_c must be non-negative");
        if (rmax.known_threshold < 1) bad("rmax_k must be at least 1");
        if (!(rmax.tol > 0.0)) bad("rmax_tol must be positive");
        if (threads < 0) bad("threads must be non-negative");
        try {
            Discount{gamma};
            QTable(1, q);
        } catch (const Error& e) {
            bad(e.what());
        }
    }
};

/// Defaults for a domain: MAB horizon 10 with 200 episodes per iteration,
/// maze horizon 15 with 300.
inline ExperimentConfig default_experiment(EnvKind kind) {
    ExperimentConfig c;
    c.env = default_config(kind);
    if (kind == EnvKind::maze) {
        c.horizon = 15;
        c.episodes = 300;
    }
    c.env.episode_horizon = c.horizon;
    c.uct.depth = c.horizon;
    return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T x{};
    in >> x;
    if (!in || !(in >> std::ws).eof()) throw Error("invalid-config", key + ": cannot parse '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("invalid-config", key + ": expected a boolean, got '" + v + "'");
}

inline Cell parse_cell(const std::string& key, const std::string& v) {
    auto parts = split_list(v);
    if (parts.size() != 2) throw Error("invalid-config", key + ": expected x,y");
    return Cell{parse_number<int>(key, parts[0]), parse_number<int>(key, parts[1])};
}

} // namespace detail

/// Flat `key = value` text, one entry per line, `#` comments. `env` picks
/// the domain defaults, every other key overrides one field. Unknown or
/// repeated keys are errors.
inline ExperimentConfig parse_experiment_config(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("invalid-config", "line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw Error("invalid-config", "line " + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw Error("invalid-config", "line " + std::to_string(lineno) + ": duplicate key " + key);
    }

    ExperimentConfig c = default_experiment(kv.count("env") ? parse_env_kind(kv["env"]) : EnvKind::rotating_mab);
    bool horizon_set = false, depth_set = false;
    for (const auto& [key, v] : kv) {
        using detail::parse_number;
        if (key == "env") continue;
        else if (key == "win_probs") {
            c.env.win_probs.clear();
            for (const auto& p : detail::split_list(v)) c.env.win_probs.push_back(parse_number<double>(key, p));
        } else if (key == "malfunction_k") c.env.malfunction_k = parse_number<int>(key, v);
        else if (key == "broken_arm") c.env.broken_arm = parse_number<std::uint32_t>(key, v);
        else if (key == "cheat_sequence") {
            c.env.cheat_sequence.clear();
            for (const auto& a : detail::split_list(v)) c.env.cheat_sequence.push_back(ActionId{parse_number<std::uint32_t>(key, a)});
        } else if (key == "grid_size") c.env.grid_size = parse_number<int>(key, v);
        else if (key == "start") c.env.start = detail::parse_cell(key, v);
        else if (key == "goal") c.env.goal = detail::parse_cell(key, v);
        else if (key == "slip_prob") c.env.slip_prob = parse_number<double>(key, v);
        else if (key == "rotate_every") c.env.rotate_every = parse_number<int>(key, v);
        else if (key == "rotation") c.env.rotation = detail::parse_bool(key, v);
        else if (key == "sampler") {
            if (v == "pure") c.sampler = SamplerKind::pure;
            else if (v == "smart") c.sampler = SamplerKind::smart;
            else throw Error("invalid-config", "sampler must be pure or smart");
        } else if (key == "min_samples") c.min_samples = parse_number<std::uint64_t>(key, v);
        else if (key == "epsilons") {
            c.epsilons.clear();
            for (const auto& e : detail::split_list(v)) c.epsilons.push_back(parse_number<double>(key, e));
        } else if (key == "lambda") c.lambda = parse_number<double>(key, v);
        else if (key == "max_iterations") c.max_iterations = parse_number<int>(key, v);
        else if (key == "episodes") c.episodes = parse_number<int>(key, v);
        else if (key == "horizon") {
            c.horizon = parse_number<int>(key, v);
            horizon_set = true;
        } else if (key == "eval_trials") c.eval_trials = parse_number<int>(key, v);
        else if (key == "repetitions") c.repetitions = parse_number<int>(key, v);
        else if (key == "uct_iterations") c.uct.iterations = parse_number<int>(key, v);
        else if (key == "uct_c") c.uct.c = parse_number<double>(key, v);
        else if (key == "uct_depth") {
            c.uct.depth = parse_number<int>(key, v);
            depth_set = true;
        } else if (key == "rmax_k") c.rmax.known_threshold = parse_number<std::uint64_t>(key, v);
        else if (key == "rmax_r_max") c.rmax.r_max = parse_number<double>(key, v);
        else if (key == "rmax_tol") c.rmax.tol = parse_number<double>(key, v);
        else if (key == "q_alpha") c.q.alpha = parse_number<double>(key, v);
        else if (key == "q_epsilon") c.q.epsilon = parse_number<double>(key, v);
        else if (key == "gamma") c.gamma = parse_number<double>(key, v);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
        else if (key == "output_dir") c.output_dir = v;
        else if (key == "threads") c.threads = parse_number<int>(key, v);
        else throw Error("invalid-config", "unknown key " + key);
    }
    if (horizon_set) c.env.episode_horizon = c.horizon;
    if (horizon_set && !depth_set) c.uct.depth = c.horizon;
    c.q.gamma = c.uct.gamma = c.rmax.gamma = c.gamma;
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot open " + path);
    return parse_experiment_config(in);
}

/// Writes `c` back in the format parse_experiment_config reads.
inline std::string format_experiment_config(const ExperimentConfig& c) {
    std::ostringstream o;
    o << std::setprecision(17);
    auto list = [&](const auto& xs, auto f) {
        for (std::size_t i = 0; i < xs.size(); ++i) o << (i ? "," : "") << f(xs[i]);
    };
    o << "env = " << to_string(c.env.kind) << '\n';
    o << "win_probs = ";
    list(c.env.win_probs, [](double p) { return p; });
    o << "\nmalfunction_k = " << c.env.malfunction_k << "\nbroken_arm = " << c.env.broken_arm << "\ncheat_sequence = ";
    list(c.env.cheat_sequence, [](ActionId a) { return a.value; });
    o << "\ngrid_size = " << c.env.grid_size << "\nstart = " << c.env.start.x << ',' << c.env.start.y
      << "\ngoal = " << c.env.goal.x << ',' << c.env.goal.y << "\nslip_prob = " << c.env.slip_prob
      << "\nrotate_every = " << c.env.rotate_every << "\nrotation = " << (c.env.rotation ? "true" : "false")
      << "\nsampler = " << (c.sampler == SamplerKind::pure ? "pure" : "smart") << "\nmin_samples = " << c.min_samples
      << "\nepsilons = ";
    list(c.epsilons, [](double e) { return e; });
    o << "\nlambda = " << c.lambda << "\nmax_iterations = " << c.max_iterations << "\nepisodes = " << c.episodes
      << "\nhorizon = " << c.horizon << "\neval_trials = " << c.eval_trials << "\nrepetitions = " << c.repetitions
      << "\nuct_iterations = " << c.uct.iterations << "\nuct_c = " << c.uct.c << "\nuct_depth = " << c.uct.depth
      << "\nrmax_k = " << c.rmax.known_threshold << "\nrmax_r_max = " << c.rmax.r_max << "\nrmax_tol = " << c.rmax.tol
      << "\nq_alpha = " << c.q.alpha << "\nq_epsilon = " << c.q.epsilon << "\ngamma = " << c.gamma
      << "\nseed = " << c.seed << "\nthreads = " << c.threads << '\n';
    if (!c.output_dir.empty()) o << "output_dir = " << c.output_dir << '\n';
    return o.str();
}

// ---------------------------------------------------------------------------
// Label tables on disk: one label per line,
//   <id> <width> <mask> c|p <k> (<assignment> <reward> <count-or-prob>){k}
// `c` lines keep the empirical counts (and so the weight), `p` lines only
// the probabilities.

inline std::string serialize_labels(const LabelTable& labels) {
    std::ostringstream o;
    o << std::setprecision(17);
    for (const auto& [id, d] : labels) {
        o << id << ' ' << d.width() << ' ' << d.mask() << ' ' << (d.empirical() ? 'c' : 'p') << ' ' << d.support_size();
        if (d.empirical())
            for (const auto& [out, n] : d.counts()) o << ' ' << out.assignment << ' ' << out.reward << ' ' << n;
        else
            for (const auto& [out, p] : d.probs()) o << ' ' << out.assignment << ' ' << out.reward << ' ' << p;
        o << '\n';
    }
    return o.str();
}

inline LabelTable deserialize_labels(std::istream& in) {
    LabelTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        LabelId id;
        unsigned width;
        std::uint64_t mask;
        char kind;
        std::size_t k;
        if (!(ls >> id >> width >> mask >> kind >> k) || (kind != 'c' && kind != 'p'))
            throw ParseError(lineno, "malformed label header");
        try {
            if (kind == 'c') {
                std::map<Outcome, std::uint64_t> counts;
                for (std::size_t i = 0; i < k; ++i) {
                    Outcome o;
                    std::uint64_t n;
                    if (!(ls >> o.assignment >> o.reward >> n)) throw ParseError(lineno, "truncated outcome list");
                    counts[o] += n;
                }
                if (!t.emplace(id, OutcomeDistribution::from_counts(width, mask, counts)).second)
                    throw ParseError(lineno, "duplicate label " + std::to_string(id));
            } else {
                std::map<Outcome, double> probs;
                for (std::size_t i = 0; i < k; ++i) {
                    Outcome o;
                    double p;
                    if (!(ls >> o.assignment >> o.reward >> p)) throw ParseError(lineno, "truncated outcome list");
                    probs[o] += p;
                }
                if (!t.emplace(id, OutcomeDistribution::from_probabilities(width, mask, probs)).second)
                    throw ParseError(lineno, "duplicate label " + std::to_string(id));
            }
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return t;
}

inline LabelTable deserialize_labels(const std::string& text) {
    std::istringstream in(text);
    return deserialize_labels(in);
}

// ---------------------------------------------------------------------------
// Traces as CSV: episode,t,action,reward,obs. Row t=0 carries the initial
// observation with action -1 and reward 0; row t>0 the t-th step.

inline void write_traces_csv(const SampleSet& sample, std::ostream& out) {
    out << "episode,t,action,reward,obs\n" << std::setprecision(17);
    for (std::size_t e = 0; e < sample.traces.size(); ++e) {
        const Trace& tr = sample.traces[e];
        out << e << ",0,-1,0," << tr.initial_obs.to_string() << '\n';
        for (std::size_t t = 0; t < tr.steps.size(); ++t)
            out << e << ',' << t + 1 << ',' << tr.steps[t].action.value << ',' << tr.steps[t].reward << ','
                << tr.steps[t].next_obs.to_string() << '\n';
    }
}

inline SampleSet read_traces_csv(std::istream& in) {
    SampleSet s;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line) || detail::trim(line) != "episode,t,action,reward,obs")
        throw ParseError(1, "expected header episode,t,action,reward,obs");
    ++lineno;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(detail::trim(cell));
        if (f.size() != 5) throw ParseError(lineno, "expected 5 fields");
        try {
            const auto ep = detail::parse_number<std::size_t>("episode", f[0]);
            const auto t = detail::parse_number<std::size_t>("t", f[1]);
            const Observation obs = Observation::parse(f[4]);
            if (t == 0) {
                if (ep != s.traces.size()) throw ParseError(lineno, "episodes must be consecutive from 0");
                s.traces.push_back(Trace{obs, {}});
                continue;
            }
            if (s.traces.empty() || ep + 1 != s.traces.size() || t != s.traces.back().steps.size() + 1)
                throw ParseError(lineno, "rows must be ordered by episode then t");
            const auto a = detail::parse_number<std::uint32_t>("action", f[2]);
            s.traces.back().steps.push_back(Step{ActionId{a}, detail::parse_number<double>("reward", f[3]), obs});
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return s;
}

// ---------------------------------------------------------------------------

struct IterationRecord {
    int repetition = 0;
    int iteration = 0;
    std::uint64_t clusters = 0;
    std::uint64_t mealy_states = 0;
    double loss = 0.0;
    double policy_mean = 0.0;
    double policy_std = 0.0;
    double sampling_avg_reward = 0.0;  // mean total reward per sampling episode
    double goal_rate = 0.0;            // not part of the CSV

    friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct RepetitionResult {
    int repetition = 0;
    std::vector<IterationRecord> records;
    std::optional<std::string> error;
    std::optional<MealyMachine> machine;
    LabelTable labels;
    std::size_t training_steps = 0;
    std::size_t sample_traces = 0;
};

struct RunArtifacts {
    std::string method;  // "s3m" or "rmax"
    ExperimentConfig config;
    std::vector<RepetitionResult> repetitions;
    std::optional<double> optimal;

    std::vector<IterationRecord> records() const {
        std::vector<IterationRecord> out;
        for (const auto& r : repetitions) out.insert(out.end(), r.records.begin(), r.records.end());
        return out;
    }
};

/// Seed derivation: repetition r uses derive_seed(master, {r}); inside it,
/// iteration i samples with derive_seed(rep, {i, 0}) and evaluates with
/// derive_seed(rep, {i, 1}). Episode-level seeds are split further by the
/// sampler and evaluate_policy.
inline std::uint64_t repetition_seed(std::uint64_t master, int r) {
    return derive_seed(master, {static_cast<std::uint64_t>(r)});
}

namespace detail {

template <class Body>
std::vector<RepetitionResult> run_repetitions(const ExperimentConfig& cfg, Body&& body) {
    std::vector<RepetitionResult> out(static_cast<std::size_t>(cfg.repetitions));
    unsigned workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(cfg.repetitions));
    std::atomic<int> next{0};
    auto work = [&] {
        for (int r; (r = next.fetch_add(1)) < cfg.repetitions;) {
            RepetitionResult& res = out[static_cast<std::size_t>(r)];
            res.repetition = r;
            try {
                body(r, res);
            } catch (const std::exception& e) {
                res.error = e.what();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

} // namespace detail

/// Evaluates a machine with UCT over `trials` fresh episodes.
inline EvalResult evaluate_machine(const EnvConfig& env, const MealyModel& model, const UctParams& uct, int trials,
                                   int horizon, std::uint64_t seed) {
    return evaluate_policy(env, [&](int) { return UctAgent(model, uct, horizon); }, trials, horizon, seed);
}

/// Oracle: value iteration on the ground-truth product MDP, then the
/// greedy policy played in the real environment.
inline EvalResult evaluate_oracle(const EnvConfig& env, double gamma, int trials, int horizon, std::uint64_t seed) {
    GroundTruth gt = ground_truth_mealy(env);
    MealyModel model(gt.machine, gt.labels);
    auto [state, obs] = reset(env, 0);
    (void)state;
    ProductMdp mdp = build_product_mdp(model, obs);
    ValueIterationResult vi = value_iteration(mdp.mdp, Discount{gamma}, 1e-9);
    return evaluate_policy(env, [&](int) { return ProductPolicyAgent(model, mdp, vi.policy); }, trials, horizon, seed);
}

/// The sample-cluster-learn-plan loop, once per repetition.
inline RunArtifacts run_s3m(const ExperimentConfig& cfg) {
    cfg.validate();
    RunArtifacts art;
    art.method = "s3m";
    art.config = cfg;
    const std::uint32_t na = cfg.env.num_actions();
    art.repetitions = detail::run_repetitions(cfg, [&](int r, RepetitionResult& res) {
        const std::uint64_t rep = repetition_seed(cfg.seed, r);
        SampleSet sample;
        std::optional<MealyMachine> machine;
        SamplerState ss{SampleStats(na), QTable(na, cfg.q)};
        for (int it = 0; it < cfg.max_iterations; ++it) {
            const std::uint64_t s_seed = derive_seed(rep, {static_cast<std::uint64_t>(it), 0});
            const MealyMachine* m = machine ? &*machine : nullptr;
            SampleSet batch = cfg.sampler == SamplerKind::pure
                                  ? sample_pure(cfg.env, cfg.episodes, cfg.horizon, ss.stats, s_seed, m)
                                  : sample_smart(cfg.env, cfg.episodes, cfg.horizon, ss.stats, ss.q, s_seed, m);
            res.training_steps += batch.total_steps();
            sample.append(batch);

            BaseSplit split = base_distributions(sample, cfg.min_samples);
            ClusteredModel clustering = select_model(split, cfg.epsilons, sample, cfg.lambda, cfg.min_samples);
            PrefixTree tree = build_prefix_tree(label_traces(sample, clustering), na);
            machine = edsm_learn(tree);
            res.labels = clustering.label_table();
            ss = rekey_stats(ss.stats, ss.q);

            MealyModel model(*machine, res.labels);
            UctParams uct = cfg.uct;
            uct.gamma = cfg.gamma;
            EvalResult ev = evaluate_machine(cfg.env, model, uct, cfg.eval_trials, cfg.horizon,
                                             derive_seed(rep, {static_cast<std::uint64_t>(it), 1}));
            IterationRecord rec;
            rec.repetition = r;
            rec.iteration = it;
            rec.clusters = clustering.clusters.size();
            rec.mealy_states = machine->num_states();
            rec.loss = clustering.loss;
            rec.policy_mean = ev.mean_per_step;
            rec.policy_std = ev.std_per_step;
            rec.sampling_avg_reward = batch.total_reward() / static_cast<double>(batch.traces.size());
            rec.goal_rate = ev.success_rate();
            res.records.push_back(rec);
        }
        res.machine = machine;
        res.sample_traces = sample.traces.size();
    });
    return art;
}

/// R-max on raw observations with the same per-iteration episode budget
/// and seeds; after each iteration its greedy policy is evaluated without
/// learning. Cluster, state and loss columns are 0.
inline RunArtifacts run_baseline_rmax(const ExperimentConfig& cfg) {
    cfg.validate();
    RunArtifacts art;
    art.method = "rmax";
    art.config = cfg;
    const std::uint32_t na = cfg.env.num_actions();
    art.repetitions = detail::run_repetitions(cfg, [&](int r, RepetitionResult& res) {
        const std::uint64_t rep = repetition_seed(cfg.seed, r);
        RmaxParams rp = cfg.rmax;
        rp.gamma = cfg.gamma;
        RmaxModel model(na, rp);
        for (int it = 0; it < cfg.max_iterations; ++it) {
            const std::uint64_t s_seed = derive_seed(rep, {static_cast<std::uint64_t>(it), 0});
            double total = 0.0;
            for (int e = 0; e < cfg.episodes; ++e) {
                auto [state, obs] = reset(cfg.env, derive_seed(s_seed, {static_cast<std::uint64_t>(e), 0}));
                for (int t = 0; t < cfg.horizon && !state.done(); ++t) {
                    const Observation cur = state.observation();
                    const ActionId a = model.act(cur);
                    const StepResult sr = env_step(state, a);
                    model.update(cur, a, sr.reward, sr.obs, sr.done);
                    total += sr.reward;
                    ++res.training_steps;
                }
            }
            EvalResult ev = evaluate_policy(
                cfg.env, [&](int) { return RmaxGreedyAgent(model); }, cfg.eval_trials, cfg.horizon,
                derive_seed(rep, {static_cast<std::uint64_t>(it), 1}));
            IterationRecord rec;
            rec.repetition = r;
            rec.iteration = it;
            rec.policy_mean = ev.mean_per_step;
            rec.policy_std = ev.std_per_step;
            rec.sampling_avg_reward = total / static_cast<double>(cfg.episodes);
            rec.goal_rate = ev.success_rate();
            res.records.push_back(rec);
        }
    });
    return art;
}

// ---------------------------------------------------------------------------

inline const char* csv_header() {
    return "repetition,iteration,clusters,mealy_states,loss,policy_mean,policy_std,sampling_avg_reward";
}

inline void write_csv(const std::vector<IterationRecord>& rows, std::ostream& out) {
    out << csv_header() << '\n';
    char buf[64];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    for (const auto& r : rows)
        out << r.repetition << ',' << r.iteration << ',' << r.clusters << ',' << r.mealy_states << ',' << num(r.loss)
            << ',' << num(r.policy_mean) << ',' << num(r.policy_std) << ',' << num(r.sampling_avg_reward) << '\n';
}

inline std::vector<IterationRecord> read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != csv_header()) throw ParseError(1, "unexpected CSV header");
    std::vector<IterationRecord> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 8) throw ParseError(lineno, "expected 8 fields");
        auto real = [&](const std::string& s) {
            char* end = nullptr;
            const double x = std::strtod(s.c_str(), &end);
            if (end == s.c_str() || *end != '\0') throw ParseError(lineno, "bad number '" + s + "'");
            return x;
        };
        try {
            IterationRecord r;
            r.repetition = detail::parse_number<int>("repetition", f[0]);
            r.iteration = detail::parse_number<int>("iteration", f[1]);
            r.clusters = detail::parse_number<std::uint64_t>("clusters", f[2]);
            r.mealy_states = detail::parse_number<std::uint64_t>("mealy_states", f[3]);
            r.loss = real(f[4]);
            r.policy_mean = real(f[5]);
            r.policy_std = real(f[6]);
            r.sampling_avg_reward = real(f[7]);
            rows.push_back(r);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return rows;
}

inline void emit_csv(const RunArtifacts& art, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("io-error", "cannot write " + path);
    write_csv(art.records(), out);
    if (!out) throw Error("io-error", "write failed for " + path);
}

struct IterationSummary {
    int iteration = 0;
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample std across repetitions
};

/// Mean and std of policy_mean per iteration, across repetitions.
inline std::vector<IterationSummary> summarize(const std::vector<IterationRecord>& rows) {
    std::map<int, std::vector<double>> by_iter;
    for (const auto& r : rows) by_iter[r.iteration].push_back(r.policy_mean);
    std::vector<IterationSummary> out;
    for (const auto& [it, xs] : by_iter) {
        IterationSummary s;
        s.iteration = it;
        s.n = xs.size();
        for (double x : xs) s.mean += x;
        s.mean /= static_cast<double>(xs.size());
        if (xs.size() > 1) {
            double ss = 0.0;
            for (double x : xs) ss += (x - s.mean) * (x - s.mean);
            s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        }
        out.push_back(s);
    }
    return out;
}

inline void write_summary(const std::vector<IterationRecord>& rows, std::ostream& out) {
    out << "iteration,n,mean,std\n";
    char buf[128];
    for (const auto& s : summarize(rows)) {
        std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g\n", s.iteration, s.n, s.mean, s.std);
        out << buf;
    }
}

struct PlotSeries {
    std::string name;
    std::vector<IterationRecord> rows;
};

/// Per-iteration mean policy reward with std error bars for each series,
/// plus an optional dashed optimal line. Plain SVG.
inline std::string plot_svg(const std::vector<PlotSeries>& series, std::optional<double> optimal,
                            const std::string& title = "policy reward per iteration") {
    const double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    int max_iter = 0;
    double ymax = optimal.value_or(0.0), ymin = 0.0;
    std::vector<std::vector<IterationSummary>> sums;
    for (const auto& s : series) {
        sums.push_back(summarize(s.rows));
        for (const auto& p : sums.back()) {
            max_iter = std::max(max_iter, p.iteration);
            ymax = std::max(ymax, p.mean + p.std);
            ymin = std::min(ymin, p.mean - p.std);
        }
    }
    if (ymax <= ymin) ymax = ymin + 1.0;
    ymax += 0.05 * (ymax - ymin);
    auto x = [&](double it) { return L + (max_iter ? it / max_iter : 0.5) * (W - L - R); };
    auto y = [&](double v) { return T + (ymax - v) / (ymax - ymin) * (H - T - B); };

    std::ostringstream o;
    o << std::fixed << std::setprecision(2);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = ymin + (ymax - ymin) * i / 4.0;
        o << "<text x=\"" << L - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
    }
    for (int it = 0; it <= max_iter; ++it)
        o << "<text x=\"" << x(it) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << it << "</text>\n";
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">iteration</text>\n";
    if (optimal) {
        o << "<line x1=\"" << L << "\" y1=\"" << y(*optimal) << "\" x2=\"" << W - R << "\" y2=\"" << y(*optimal)
          << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
        o << "<text x=\"" << W - R << "\" y=\"" << y(*optimal) - 4 << "\" text-anchor=\"end\" fill=\"gray\">optimal</text>\n";
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* c = colors[k % 5];
        std::ostringstream pts;
        pts << std::fixed << std::setprecision(2);
        for (const auto& p : sums[k]) {
            pts << x(p.iteration) << ',' << y(p.mean) << ' ';
            o << "<line x1=\"" << x(p.iteration) << "\" y1=\"" << y(p.mean - p.std) << "\" x2=\"" << x(p.iteration)
              << "\" y2=\"" << y(p.mean + p.std) << "\" stroke=\"" << c << "\"/>\n";
            o << "<circle cx=\"" << x(p.iteration) << "\" cy=\"" << y(p.mean) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
        }
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"" << pts.str() << "\"/>\n";
        o << "<text x=\"" << L + 10 << "\" y=\"" << T + 14 * (k + 1) << "\" fill=\"" << c << "\">" << series[k].name
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline void emit_plot(const RunArtifacts& art, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("io-error", "cannot write " + path);
    out << plot_svg({PlotSeries{art.method, art.records()}}, art.optimal, to_string(art.config.env.kind));
    if (!out) throw Error("io-error", "write failed for " + path);
}

/// Writes <prefix>.csv, <prefix>_summary.csv, <prefix>.svg and, per
/// repetition with a machine, <prefix>_rep<r>.mealy / .labels into `dir`.
/// Failed repetitions get <prefix>_rep<r>.error.
inline void write_artifacts(const RunArtifacts& art, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("io-error", "cannot create " + dir + ": " + ec.message());
    const fs::path base = fs::path(dir) / art.method;
    emit_csv(art, base.string() + ".csv");
    emit_plot(art, base.string() + ".svg");
    auto write = [](const std::string& path, const std::string& text) {
        std::ofstream out(path);
        if (!out || !(out << text)) throw Error("io-error", "cannot write " + path);
    };
    std::ostringstream summary;
    write_summary(art.records(), summary);
    write(base.string() + "_summary.csv", summary.str());
    for (const auto& rep : art.repetitions) {
        const std::string stem = base.string() + "_rep" + std::to_string(rep.repetition);
        if (rep.machine) {
            write(stem + ".mealy", serialize_mealy(*rep.machine));
            write(stem + ".labels", serialize_labels(rep.labels));
        }
        if (rep.error) write(stem + ".error", *rep.error + "\n");
    }
}

} // namespace s3m
