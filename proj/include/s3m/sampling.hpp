#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "s3m/core.hpp"
#include "s3m/envs.hpp"
#include "s3m/mealy.hpp"
#include "s3m/rng.hpp"

namespace s3m {

/// State used by the samplers: the observation alone before any machine
/// has been learned, the (observation, machine state) product afterwards.
struct StateKey {
    Observation obs;
    std::int64_t machine_state = -1;
    friend auto operator<=>(const StateKey&, const StateKey&) = default;
};

/// Follows a learned machine along an episode so the samplers can key on
/// the product state. Unreadable symbols leave the machine state unchanged.
class StateTracker {
public:
    explicit StateTracker(const MealyMachine* machine = nullptr) : machine_(machine) {}

    void reset(const Observation& obs) {
        obs_ = obs;
        state_ = machine_ ? machine_->initial_state() : 0;
    }

    void advance(ActionId a, const Observation& next) {
        if (machine_)
            if (auto tr = mealy_step(*machine_, state_, InputSymbol{obs_, a})) state_ = tr->next;
        obs_ = next;
    }

    StateKey key() const { return StateKey{obs_, machine_ ? static_cast<std::int64_t>(state_) : -1}; }
    const MealyMachine* machine() const noexcept { return machine_; }

private:
    const MealyMachine* machine_;
    Observation obs_;
    StateIndex state_ = 0;
};

/// Visit counts n(a, s).
class SampleStats {
public:
    explicit SampleStats(std::uint32_t num_actions) : num_actions_(num_actions) {}

    void add(const StateKey& s, ActionId a) {
        auto& row = counts_.try_emplace(s, num_actions_, 0).first->second;
        ++row.at(a.value);
        ++total_;
    }

    /// Per-action counts for `s` (all zero if never visited).
    std::vector<std::uint64_t> counts(const StateKey& s) const {
        auto it = counts_.find(s);
        return it == counts_.end() ? std::vector<std::uint64_t>(num_actions_, 0) : it->second;
    }

    std::uint64_t total() const noexcept { return total_; }
    std::uint32_t num_actions() const noexcept { return num_actions_; }
    std::size_t num_keys() const noexcept { return counts_.size(); }

    /// Pointwise sum, for combining statistics gathered by parallel episodes.
    void merge(const SampleStats& other) {
        for (const auto& [s, row] : other.counts_) {
            auto& mine = counts_.try_emplace(s, num_actions_, 0).first->second;
            for (std::size_t a = 0; a < row.size(); ++a) mine[a] += row[a];
        }
        total_ += other.total_;
    }

private:
    std::uint32_t num_actions_;
    std::map<StateKey, std::vector<std::uint64_t>> counts_;
    std::uint64_t total_ = 0;
};

/// P(a|s) proportional to f(a,s) = 1 - n(a,s) / sum_a n(a,s). Unvisited
/// states get the uniform distribution. For a state where a single action
/// holds every count, f vanishes only for that action.
inline std::vector<double> exploration_policy(const std::vector<std::uint64_t>& counts) {
    const std::size_t n = counts.size();
    if (n == 0) throw Error("invalid-argument", "exploration policy needs at least one action");
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
    std::vector<double> p(n, 1.0 / static_cast<double>(n));
    if (total == 0.0 || n == 1) return p;
    double norm = 0.0;
    for (std::size_t a = 0; a < n; ++a) norm += (p[a] = 1.0 - static_cast<double>(counts[a]) / total);
    for (double& x : p) x /= norm;
    return p;
}

inline std::vector<double> exploration_policy(const SampleStats& stats, const StateKey& s) {
    return exploration_policy(stats.counts(s));
}

struct QParams {
    double alpha = 0.1;
    double epsilon = 0.1;
    double gamma = 0.95;
};

class QTable {
public:
    QTable(std::uint32_t num_actions, QParams params) : num_actions_(num_actions), params_(params) {
        if (!(params.alpha > 0.0 && params.alpha <= 1.0)) throw Error("invalid-config", "alpha must lie in (0, 1]");
        if (!(params.epsilon >= 0.0 && params.epsilon <= 1.0)) throw Error("invalid-config", "epsilon must lie in [0, 1]");
        Discount{params.gamma};
    }

    double value(const StateKey& s, ActionId a) const {
        auto it = values_.find(s);
        return it == values_.end() ? 0.0 : it->second.at(a.value);
    }

    double max_value(const StateKey& s) const {
        auto it = values_.find(s);
        if (it == values_.end()) return 0.0;
        double m = it->second[0];
        for (double v : it->second) m = std::max(m, v);
        return m;
    }

    /// argmax_a Q(s, a); the lowest action index wins ties.
    ActionId greedy(const StateKey& s) const {
        auto it = values_.find(s);
        if (it == values_.end()) return ActionId{0};
        std::uint32_t best = 0;
        for (std::uint32_t a = 1; a < num_actions_; ++a)
            if (it->second[a] > it->second[best]) best = a;
        return ActionId{best};
    }

    double& at(const StateKey& s, ActionId a) { return values_.try_emplace(s, num_actions_, 0.0).first->second.at(a.value); }

    const QParams& params() const noexcept { return params_; }
    std::uint32_t num_actions() const noexcept { return num_actions_; }
    std::size_t num_keys() const noexcept { return values_.size(); }

private:
    std::uint32_t num_actions_;
    QParams params_;
    std::map<StateKey, std::vector<double>> values_;
};

/// Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)); a terminal
/// successor contributes no future value.
inline void q_update(QTable& q, const StateKey& s, ActionId a, double r, const StateKey& next, bool terminal = false) {
    const double future = terminal ? 0.0 : q.max_value(next);
    double& v = q.at(s, a);
    v += q.params().alpha * (r + q.params().gamma * future - v);
}

/// Greedy with probability 1 - epsilon, otherwise a draw from the
/// exploration policy.
template <class Urbg>
ActionId smart_sample_step(const QTable& q, const SampleStats& stats, const StateKey& s, Urbg& g) {
    if (uniform01(g) >= q.params().epsilon) return q.greedy(s);
    return ActionId{static_cast<std::uint32_t>(sample_index(g, exploration_policy(stats, s)))};
}

struct SampleSet {
    std::vector<Trace> traces;
    std::vector<std::uint64_t> seeds;

    std::size_t total_steps() const {
        std::size_t n = 0;
        for (const auto& t : traces) n += t.size();
        return n;
    }

    double total_reward() const {
        double r = 0.0;
        for (const auto& t : traces)
            for (const auto& s : t.steps) r += s.reward;
        return r;
    }

    void append(const SampleSet& other) {
        traces.insert(traces.end(), other.traces.begin(), other.traces.end());
        seeds.insert(seeds.end(), other.seeds.begin(), other.seeds.end());
    }
};

enum class SamplerKind { pure, smart };

namespace detail {

template <class Choose, class Learn>
SampleSet run_sampler(const EnvConfig& env, int episodes, int horizon, std::uint64_t seed, const MealyMachine* machine,
                      SampleStats& stats, Choose&& choose, Learn&& learn) {
    if (episodes < 1) throw Error("invalid-argument", "episodes must be at least 1");
    SampleSet out;
    StateTracker tracker(machine);
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t env_seed = derive_seed(seed, {static_cast<std::uint64_t>(e), 0});
        Rng agent(derive_seed(seed, {static_cast<std::uint64_t>(e), 1}));
        auto [state, obs] = reset(env, env_seed);
        Trace trace{obs, {}};
        tracker.reset(obs);
        for (int t = 0; t < horizon && !state.done(); ++t) {
            const StateKey s = tracker.key();
            const ActionId a = choose(s, agent);
            StepResult r = env_step(state, a);
            stats.add(s, a);
            tracker.advance(a, r.obs);
            learn(s, a, r.reward, tracker.key(), r.done);
            trace.steps.push_back(Step{a, r.reward, r.obs});
        }
        out.traces.push_back(std::move(trace));
        out.seeds.push_back(env_seed);
    }
    return out;
}

} // namespace detail

/// Pure exploration: every action drawn from the exploration policy.
inline SampleSet sample_pure(const EnvConfig& env, int episodes, int horizon, SampleStats& stats, std::uint64_t seed,
                             const MealyMachine* machine = nullptr) {
    return detail::run_sampler(
        env, episodes, horizon, seed, machine, stats,
        [&](const StateKey& s, Rng& g) {
            return ActionId{static_cast<std::uint32_t>(sample_index(g, exploration_policy(stats, s)))};
        },
        [](const StateKey&, ActionId, double, const StateKey&, bool) {});
}

/// Smart sampling: epsilon-greedy Q-learning whose exploratory moves use
/// the exploration policy.
inline SampleSet sample_smart(const EnvConfig& env, int episodes, int horizon, SampleStats& stats, QTable& q,
                              std::uint64_t seed, const MealyMachine* machine = nullptr) {
    return detail::run_sampler(
        env, episodes, horizon, seed, machine, stats,
        [&](const StateKey& s, Rng& g) { return smart_sample_step(q, stats, s, g); },
        [&](const StateKey& s, ActionId a, double r, const StateKey& next, bool done) { q_update(q, s, a, r, next, done); });
}

/// Fresh statistics for a new product state space. Old counts and
/// Q-values are discarded, not projected.
struct SamplerState {
    SampleStats stats;
    QTable q;
};

inline SamplerState rekey_stats(const SampleStats& stats, const QTable& q) {
    return SamplerState{SampleStats(stats.num_actions()), QTable(q.num_actions(), q.params())};
}

} // namespace s3m
