// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
// and exits non-zero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "s3m/s3m.hpp"

using namespace s3m;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome5 {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(int n, const std::string& name, const std::function<Outcome5()>& check) {
    Outcome5 r;
    try {
        r = check();
    } catch (const std::exception& e) {
        r = {false, std::string("exception: ") + e.what()};
    }
    if (!r.pass) ++failures;
    std::printf("%s criterion %d (%s): %s\n", r.pass ? "PASS" : "FAIL", n, name.c_str(), r.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double final_mean(const RunArtifacts& art) {
    double s = 0.0;
    for (const auto& rep : art.repetitions) {
        if (rep.error || rep.records.empty()) throw Error("run-failed", rep.error.value_or("no records"));
        s += rep.records.back().policy_mean;
    }
    return s / static_cast<double>(art.repetitions.size());
}

std::string csv_of(const RunArtifacts& art) {
    std::ostringstream o;
    write_csv(art.records(), o);
    return o.str();
}

// Shared between criteria so the expensive runs happen once.
std::optional<double> rotating_oracle;
std::optional<RunArtifacts> rotating_s3m;

double oracle_mean(const EnvConfig& env) {
    return evaluate_oracle(env, 0.95, 10000, 10, 2024).mean_per_step;
}

Outcome5 oracle_optimality() {
    const auto t0 = Clock::now();
    auto cfg = rotating_mab_config();
    auto gt = ground_truth_mealy(cfg);
    MealyModel model(gt.machine, gt.labels);
    auto mdp = build_product_mdp(model, reset(cfg, 0).second);
    auto vi = value_iteration(mdp.mdp, Discount{0.95}, 1e-9);
    // The hot arm is the one the pending offset maps to probability 0.9.
    bool hot = true;
    for (std::size_t s = 0; s < mdp.states.size(); ++s) {
        const auto& st = mdp.states[s];
        const std::uint32_t offset = (st.machine_state + static_cast<std::uint32_t>(st.obs.bits())) % 2;
        hot = hot && vi.policy[s].value == offset;
    }
    rotating_oracle = oracle_mean(cfg);
    const double sec = seconds_since(t0);
    const bool pass = hot && std::abs(*rotating_oracle - 0.90) <= 0.02 && sec < 10.0;
    return {pass, std::string("hot-arm policy ") + (hot ? "yes" : "no") + ", mean " + fmt("%.4f", *rotating_oracle) +
                      ", " + fmt("%.2f", sec) + " s"};
}

Outcome5 near_optimality() {
    const auto t0 = Clock::now();
    if (!rotating_oracle) rotating_oracle = oracle_mean(rotating_mab_config());
    rotating_s3m = run_s3m(default_experiment(EnvKind::rotating_mab));
    const double sec = seconds_since(t0);
    const double bar = 0.85 * *rotating_oracle;
    int ok = 0;
    std::string finals;
    for (const auto& rep : rotating_s3m->repetitions) {
        if (rep.error) throw Error("run-failed", *rep.error);
        const double v = rep.records.back().policy_mean;
        ok += v >= bar;
        finals += fmt(" %.3f", v);
    }
    return {ok >= 4 && sec < 600.0, std::to_string(ok) + "/5 reps >= " + fmt("%.4f", bar) + " (finals" + finals + "), " +
                                        fmt("%.1f", sec) + " s"};
}

Outcome5 baseline_separation() {
    std::string detail;
    bool pass = true;
    for (auto kind : {EnvKind::rotating_mab, EnvKind::cheat_mab}) {
        const auto cfg = default_experiment(kind);
        const RunArtifacts s3m = kind == EnvKind::rotating_mab && rotating_s3m ? *rotating_s3m : run_s3m(cfg);
        const RunArtifacts rmax = run_baseline_rmax(cfg);
        const double a = final_mean(s3m), b = final_mean(rmax);
        pass = pass && a - b >= 0.1;
        detail += to_string(kind) + " s3m " + fmt("%.3f", a) + " vs rmax " + fmt("%.3f", b) + "; ";
    }
    return {pass, detail};
}

Outcome5 structure_recovery() {
    std::string detail;
    bool pass = true;
    struct Case {
        EnvKind kind;
        int episodes;
        std::size_t states;
    };
    for (const Case c : {Case{EnvKind::rotating_mab, 500, 2}, Case{EnvKind::cheat_mab, 500, 4}, Case{EnvKind::maze, 100000, 12}}) {
        const auto t0 = Clock::now();
        const auto cfg = default_config(c.kind);
        const int horizon = c.kind == EnvKind::maze ? 15 : 10;
        const auto gt = ground_truth_mealy(cfg);
        SampleStats stats(cfg.num_actions());
        const auto sample = sample_pure(cfg, c.episodes, horizon, stats, 77);
        std::vector<LabeledSequence> seqs;
        for (const auto& t : sample.traces) {
            LabeledSequence ls;
            ls.inputs = input_symbols(t);
            ls.labels = mealy_run(gt.machine, ls.inputs);
            seqs.push_back(std::move(ls));
        }
        const auto m = edsm_learn(build_prefix_tree(seqs, cfg.num_actions()));

        // Fresh inputs: random-action episodes of length 12 (shorter only if
        // the maze goal ends the episode).
        int mismatches = 0;
        for (std::uint64_t k = 0; k < 10000; ++k) {
            Rng g(derive_seed(4242, {k, 1}));
            auto ep = run_episode(cfg, derive_seed(4242, {k, 0}), 12, [&](const Observation&, int) {
                return ActionId{static_cast<std::uint32_t>(uniform_index(g, cfg.num_actions()))};
            });
            const auto in = input_symbols(ep.trace);
            try {
                mismatches += mealy_run(m, in) != mealy_run(gt.machine, in);
            } catch (const UndefinedTransition&) {
                ++mismatches;
            }
        }
        const double sec = seconds_since(t0);
        const bool ok = mismatches == 0 && m.num_states() == c.states && sec < 60.0;
        pass = pass && ok;
        detail += to_string(c.kind) + " " + std::to_string(m.num_states()) + " states, " + std::to_string(mismatches) +
                  " mismatches, " + fmt("%.2f", sec) + " s; ";
    }
    return {pass, detail};
}

Outcome5 clustering_oracle() {
    // 20 contexts: the initial observation carries the context index in
    // bits 1..5, bit 0 flips on a win. Contexts 0..9 win with 0.05, the
    // rest with 0.95.
    const unsigned width = 6;
    const int contexts = 20, per_context = 500;
    Rng g(5150);
    SampleSet sample;
    std::vector<std::uint64_t> wins(contexts, 0);
    for (int c = 0; c < contexts; ++c) {
        const double p = c < 10 ? 0.05 : 0.95;
        const Observation start(static_cast<std::uint64_t>(c) << 1, width);
        for (int i = 0; i < per_context; ++i) {
            const bool won = uniform01(g) < p;
            wins[static_cast<std::size_t>(c)] += won;
            sample.traces.push_back(Trace{start, {Step{ActionId{0}, won ? 1.0 : 0.0, start.with(1, won ? 1 : 0)}}});
            sample.seeds.push_back(0);
        }
    }
    const ExperimentConfig defaults;
    const auto split = base_distributions(sample, defaults.min_samples);
    const auto model = select_model(split, defaults.epsilons, sample, defaults.lambda, defaults.min_samples);

    // Brute-force oracle: the 2-partition of contexts with the highest
    // pooled Bernoulli likelihood.
    auto nll = [&](std::uint64_t w, std::uint64_t n) {
        double s = 0.0;
        if (w > 0) s -= static_cast<double>(w) * std::log(static_cast<double>(w) / static_cast<double>(n));
        if (w < n) s -= static_cast<double>(n - w) * std::log(static_cast<double>(n - w) / static_cast<double>(n));
        return s;
    };
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_mask = 0;
    for (std::uint32_t mask = 1; mask < (1u << (contexts - 1)); ++mask) {
        std::uint64_t w[2] = {0, 0}, n[2] = {0, 0};
        for (int c = 0; c < contexts; ++c) {
            const int side = (mask >> c) & 1u;
            w[side] += wins[static_cast<std::size_t>(c)];
            n[side] += per_context;
        }
        const double v = nll(w[0], n[0]) + nll(w[1], n[1]);
        if (v < best) {
            best = v;
            best_mask = mask;
        }
    }

    bool pass = model.clusters.size() == 2;
    std::string detail = std::to_string(model.clusters.size()) + " clusters";
    if (pass) {
        // Same partition as the oracle, and means near the truth.
        for (int c = 0; c < contexts; ++c) {
            const HistoryKey key{InputSymbol{Observation(static_cast<std::uint64_t>(c) << 1, width), ActionId{0}}};
            const auto lc = model.label_of(key);
            const auto l0 = model.label_of(HistoryKey{InputSymbol{Observation(0, width), ActionId{0}}});
            const bool same_model = lc == l0;
            const bool same_oracle = ((best_mask >> c) & 1u) == (best_mask & 1u);
            pass = pass && lc && same_model == same_oracle;
        }
        for (const auto& cl : model.clusters) {
            const double mean = cl.dist.expected_reward();
            const double truth = mean < 0.5 ? 0.05 : 0.95;
            pass = pass && std::abs(mean - truth) <= 0.03;
            detail += fmt(", mean %.4f", mean);
        }
        detail += pass ? ", partition matches brute-force oracle" : ", mismatch";
    }
    return {pass, detail};
}

Outcome5 property_suites() {
    Rng g(606);
    std::vector<std::string> broken;

    // Normalisation: exploration policy, empirical distributions, product rows.
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::uint64_t> c(2 + uniform_index(g, 4));
        for (auto& x : c) x = uniform_index(g, 50);
        auto p = exploration_policy(c);
        if (std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) > 1e-9) broken.push_back("exploration policy");
        std::map<s3m::Outcome, std::uint64_t> counts;
        for (int k = 0; k < 4; ++k) counts[s3m::Outcome{g() & 3, static_cast<double>(uniform_index(g, 2))}] += 1 + uniform_index(g, 9);
        auto d = OutcomeDistribution::from_counts(2, 3, counts);
        double s = 0.0;
        for (const auto& [o, pr] : d.probs()) s += pr;
        if (std::abs(s - 1.0) > 1e-9) broken.push_back("distribution");
    }
    for (auto kind : {EnvKind::rotating_mab, EnvKind::malfunction_mab, EnvKind::cheat_mab, EnvKind::maze}) {
        auto cfg = default_config(kind);
        auto gt = ground_truth_mealy(cfg);
        MealyModel model(gt.machine, gt.labels);
        auto pm = build_product_mdp(model, reset(cfg, 0).second);
        for (const auto& row : pm.mdp.next)
            for (const auto& out : row) {
                double s = 0.0;
                for (const auto& [n, pr] : out) s += pr;
                if (std::abs(s - 1.0) > 1e-9) broken.push_back("product row");
            }
    }

    // Weight and count conservation under random merge orders.
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<OutcomeDistribution> pool;
        std::map<s3m::Outcome, std::uint64_t> pooled;
        const std::size_t n = 2 + uniform_index(g, 6);
        for (std::size_t i = 0; i < n; ++i) {
            std::map<s3m::Outcome, std::uint64_t> c;
            c[s3m::Outcome{g() & 1, 0.0}] += 1 + uniform_index(g, 20);
            for (const auto& [o, k] : c) pooled[o] += k;
            pool.push_back(OutcomeDistribution::from_counts(1, 1, c));
        }
        while (pool.size() > 1) {
            const std::size_t i = uniform_index(g, pool.size());
            std::size_t j = uniform_index(g, pool.size() - 1);
            if (j >= i) ++j;
            auto m = OutcomeDistribution::merge(pool[i], pool[j]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(std::max(i, j)));
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(std::min(i, j)));
            pool.push_back(std::move(m));
        }
        if (pool[0].counts() != pooled) broken.push_back("merge conservation");
    }

    // KL non-negativity and identity of indiscernibles.
    for (int trial = 0; trial < 1000; ++trial) {
        std::map<s3m::Outcome, double> a, b;
        const double pa = 0.01 + 0.98 * uniform01(g), pb = 0.01 + 0.98 * uniform01(g);
        a[s3m::Outcome{0, 0.0}] = pa;
        a[s3m::Outcome{1, 1.0}] = 1.0 - pa;
        b[s3m::Outcome{0, 0.0}] = pb;
        b[s3m::Outcome{1, 1.0}] = 1.0 - pb;
        auto da = OutcomeDistribution::from_probabilities(1, 1, a);
        auto db = OutcomeDistribution::from_probabilities(1, 1, b);
        if (*kl_divergence(da, db) < 0.0 || *kl_divergence(da, da) != 0.0) broken.push_back("kl");
        if (pa != pb && *kl_divergence(da, db) <= 0.0) broken.push_back("kl identity");
    }

    // EDSM consistency on 1000 random training sets.
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<LabeledSequence> seqs;
        const std::size_t count = 1 + uniform_index(g, 15);
        const std::uint64_t labels = 1 + uniform_index(g, 3);
        // Labels are a function of the full prefix, so the set is consistent.
        std::map<std::vector<InputSymbol>, LabelId> fn;
        for (std::size_t k = 0; k < count; ++k) {
            LabeledSequence ls;
            const std::size_t len = 1 + uniform_index(g, 8);
            for (std::size_t i = 0; i < len; ++i) {
                ls.inputs.push_back(InputSymbol{Observation(uniform_index(g, 2), 1), ActionId{static_cast<std::uint32_t>(uniform_index(g, 2))}});
                auto [it, fresh] = fn.try_emplace(ls.inputs, static_cast<LabelId>(uniform_index(g, labels)));
                ls.labels.push_back(it->second);
            }
            seqs.push_back(std::move(ls));
        }
        if (!consistency_check(edsm_learn(build_prefix_tree(seqs, 2)), seqs)) broken.push_back("edsm consistency");
    }

    // Serialisation round-trips.
    for (auto kind : {EnvKind::rotating_mab, EnvKind::cheat_mab, EnvKind::maze}) {
        auto gt = ground_truth_mealy(default_config(kind));
        if (deserialize_mealy(serialize_mealy(gt.machine)) != gt.machine) broken.push_back("mealy round-trip");
        auto labels = deserialize_labels(serialize_labels(gt.labels));
        for (const auto& [id, d] : gt.labels)
            if (labels.at(id).probs() != d.probs()) broken.push_back("label round-trip");
    }
    {
        std::vector<IterationRecord> rows(3);
        for (auto& r : rows) r.policy_mean = uniform01(g), r.loss = uniform01(g) * 100.0;
        std::stringstream s;
        write_csv(rows, s);
        auto back = read_csv(s);
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (!(back[i] == rows[i])) broken.push_back("csv round-trip");
    }

    // Seed determinism of whole runs.
    ExperimentConfig c = default_experiment(EnvKind::cheat_mab);
    c.max_iterations = 3;
    c.episodes = 60;
    c.eval_trials = 10;
    c.seed = 31337;
    if (csv_of(run_s3m(c)) != csv_of(run_s3m(c))) broken.push_back("s3m determinism");
    if (csv_of(run_baseline_rmax(c)) != csv_of(run_baseline_rmax(c))) broken.push_back("rmax determinism");

    std::string detail = broken.empty() ? "normalisation, merge conservation, KL, EDSM consistency, round-trips, "
                                          "determinism all hold"
                                        : "broken:";
    for (std::size_t i = 0; i < broken.size() && i < 5; ++i) detail += " " + broken[i];
    return {broken.empty(), detail};
}

Outcome5 maze_sanity() {
    // Markovian ablation: R-max against the VI-optimal goal rate.
    ExperimentConfig still = default_experiment(EnvKind::maze);
    still.env.rotation = false;
    const double optimal = evaluate_oracle(still.env, still.gamma, 10000, still.horizon, 99).success_rate();
    const RunArtifacts rstill = run_baseline_rmax(still);
    double rate = 0.0;
    for (const auto& rep : rstill.repetitions) rate += rep.records.back().goal_rate;
    rate /= static_cast<double>(rstill.repetitions.size());
    const bool ablation = rate >= 0.95 * optimal;

    // Rotating maze: S3M against R-max, repetition by repetition.
    const ExperimentConfig rot = default_experiment(EnvKind::maze);
    const RunArtifacts s = run_s3m(rot), r = run_baseline_rmax(rot);
    int wins = 0;
    std::string pairs;
    for (std::size_t i = 0; i < s.repetitions.size(); ++i) {
        if (s.repetitions[i].error) throw Error("run-failed", *s.repetitions[i].error);
        const double a = s.repetitions[i].records.back().goal_rate, b = r.repetitions[i].records.back().goal_rate;
        wins += a >= b;
        pairs += fmt(" %.2f", a) + fmt("/%.2f", b);
    }
    return {ablation && wins >= 4, "static maze rmax goal rate " + fmt("%.3f", rate) + " vs optimal " +
                                       fmt("%.3f", optimal) + "; rotating maze s3m/rmax" + pairs + " -> " +
                                       std::to_string(wins) + "/5"};
}

} // namespace

int main() {
    report(1, "oracle optimality", oracle_optimality);
    report(2, "near-optimality on the rotating bandit", near_optimality);
    report(3, "separation from R-max", baseline_separation);
    report(4, "structure recovery", structure_recovery);
    report(5, "clustering oracle equivalence", clustering_oracle);
    report(6, "property suites", property_suites);
    report(7, "maze sanity", maze_sanity);
    std::printf("%d of 7 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
