#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include "s3m/core.hpp"
#include "s3m/distribution.hpp"
#include "s3m/envs.hpp"
#include "s3m/mealy.hpp"
#include "s3m/rng.hpp"

namespace s3m {

/// A label's outcomes flattened for fast sampling.
struct CompiledLabel {
    std::uint64_t mask = 0;
    std::vector<Outcome> outcomes;
    std::vector<double> probs;
    double expected_reward = 0.0;
    std::uint64_t weight = 0;

    static CompiledLabel from(const OutcomeDistribution& d) {
        CompiledLabel c;
        c.mask = d.mask();
        c.weight = d.weight();
        for (const auto& [o, p] : d.probs()) {
            c.outcomes.push_back(o);
            c.probs.push_back(p);
        }
        c.expected_reward = d.expected_reward();
        return c;
    }

    /// Stay put with reward 0.
    static CompiledLabel self_loop() {
        CompiledLabel c;
        c.outcomes.push_back(Outcome{0, 0.0});
        c.probs.push_back(1.0);
        return c;
    }
};

/// (observation, machine state): the product state the planners work in.
struct ProductState {
    Observation obs;
    StateIndex machine_state = 0;
    friend auto operator<=>(const ProductState&, const ProductState&) = default;
};

/// A Mealy machine plus label table used as a generative model. Symbols the
/// machine cannot read fall back to staying in the current machine state
/// with the heaviest label the machine emits for the same (observation,
/// action) anywhere; if it emits none, a reward-0 self-loop.
class MealyModel {
public:
    struct Resolved {
        StateIndex next;
        const CompiledLabel* label;
    };

    MealyModel(MealyMachine machine, const LabelTable& labels) : machine_(std::move(machine)) {
        std::map<LabelId, std::size_t> slot;
        for (const auto& [id, d] : labels) {
            slot[id] = compiled_.size();
            compiled_.push_back(CompiledLabel::from(d));
        }
        compiled_.push_back(CompiledLabel::self_loop());
        self_loop_ = compiled_.size() - 1;

        label_slots_ = slot;
        auto slot_of = [&](LabelId l) {
            auto it = slot.find(l);
            if (it == slot.end()) throw Error("missing-label", "label " + std::to_string(l) + " has no distribution");
            return it->second;
        };
        for (const auto& row : machine_.rows())
            for (const auto& [sym, tr] : row) {
                const std::size_t s = slot_of(tr.label);
                auto [it, fresh] = fallback_.try_emplace(sym, s);
                if (!fresh) {
                    const auto& cur = compiled_[it->second];
                    if (compiled_[s].weight > cur.weight || (compiled_[s].weight == cur.weight && s < it->second))
                        it->second = s;
                }
            }

        dense_ = machine_.obs_width() <= 16;
        if (dense_) {
            const std::size_t per_state = (std::size_t{1} << machine_.obs_width()) * machine_.num_actions();
            table_.assign(machine_.num_states() * per_state, Entry{});
            for (std::size_t q = 0; q < machine_.num_states(); ++q)
                for (const auto& [sym, tr] : machine_.row(static_cast<StateIndex>(q)))
                    table_[q * per_state + sym.obs.bits() * machine_.num_actions() + sym.action.value] =
                        Entry{static_cast<std::int64_t>(tr.next), slot_of(tr.label)};
        }
    }

    const MealyMachine& machine() const noexcept { return machine_; }
    std::uint32_t num_actions() const noexcept { return machine_.num_actions(); }

    Resolved resolve(StateIndex q, const Observation& obs, ActionId a) const {
        if (dense_) {
            const std::size_t per_state = (std::size_t{1} << machine_.obs_width()) * machine_.num_actions();
            const Entry& e = table_[q * per_state + obs.bits() * machine_.num_actions() + a.value];
            if (e.next >= 0) return {static_cast<StateIndex>(e.next), &compiled_[e.label]};
        } else if (auto tr = mealy_step(machine_, q, InputSymbol{obs, a})) {
            return {tr->next, &compiled_[label_slots_.at(tr->label)]};
        }
        auto it = fallback_.find(InputSymbol{obs, a});
        return {q, &compiled_[it == fallback_.end() ? self_loop_ : it->second]};
    }

    /// Draws one transition: next product state and reward.
    template <class Urbg>
    std::pair<ProductState, double> sample(const ProductState& s, ActionId a, Urbg& g) const {
        const Resolved r = resolve(s.machine_state, s.obs, a);
        const std::size_t i = sample_index(g, r.label->probs);
        const Outcome& o = r.label->outcomes[i];
        return {ProductState{s.obs.with(r.label->mask, o.assignment), r.next}, o.reward};
    }

    ProductState initial(const Observation& obs) const { return ProductState{obs, machine_.initial_state()}; }

private:
    struct Entry {
        std::int64_t next = -1;
        std::size_t label = 0;
    };

    MealyMachine machine_;
    std::vector<CompiledLabel> compiled_;
    std::map<LabelId, std::size_t> label_slots_;
    std::size_t self_loop_ = 0;
    std::map<InputSymbol, std::size_t> fallback_;
    bool dense_ = false;
    std::vector<Entry> table_;
};

/// Tabular MDP: next[s][a] lists (successor, probability).
struct ExplicitMdp {
    std::size_t num_states = 0;
    std::uint32_t num_actions = 0;
    std::vector<std::vector<std::vector<std::pair<std::size_t, double>>>> next;
    std::vector<std::vector<double>> reward;
};

struct ProductMdp {
    std::vector<ProductState> states;  // states[0] is the initial state
    std::map<ProductState, std::size_t> index;
    ExplicitMdp mdp;
    // Affected mask of the label behind each (state, action) row.
    std::vector<std::vector<std::uint64_t>> row_mask;
};

/// Explicit product of a machine with the observation space reachable
/// from `initial_obs` (breadth-first closure under every label's outcomes).
inline ProductMdp build_product_mdp(const MealyModel& model, const Observation& initial_obs) {
    ProductMdp out;
    const std::uint32_t na = model.num_actions();
    out.mdp.num_actions = na;
    auto intern = [&](const ProductState& s) {
        auto [it, fresh] = out.index.try_emplace(s, out.states.size());
        if (fresh) out.states.push_back(s);
        return it->second;
    };
    intern(model.initial(initial_obs));
    for (std::size_t head = 0; head < out.states.size(); ++head) {
        const ProductState s = out.states[head];
        std::vector<std::vector<std::pair<std::size_t, double>>> rows(na);
        std::vector<double> rewards(na, 0.0);
        std::vector<std::uint64_t> masks(na, 0);
        for (std::uint32_t a = 0; a < na; ++a) {
            const auto r = model.resolve(s.machine_state, s.obs, ActionId{a});
            std::map<std::size_t, double> merged;
            for (std::size_t i = 0; i < r.label->outcomes.size(); ++i) {
                const ProductState n{s.obs.with(r.label->mask, r.label->outcomes[i].assignment), r.next};
                merged[intern(n)] += r.label->probs[i];
            }
            rows[a].assign(merged.begin(), merged.end());
            rewards[a] = r.label->expected_reward;
            masks[a] = r.label->mask;
        }
        out.mdp.next.push_back(std::move(rows));
        out.mdp.reward.push_back(std::move(rewards));
        out.row_mask.push_back(std::move(masks));
    }
    out.mdp.num_states = out.states.size();
    return out;
}

struct ValueIterationResult {
    std::vector<double> values;
    std::vector<ActionId> policy;
    std::vector<double> residuals;  // sup-norm Bellman residual per sweep
};

inline double q_value(const ExplicitMdp& mdp, const std::vector<double>& v, std::size_t s, std::uint32_t a, double gamma) {
    double q = mdp.reward[s][a];
    for (const auto& [n, p] : mdp.next[s][a]) q += gamma * p * v[n];
    return q;
}

/// Synchronous Bellman backups until the sup-norm residual drops below
/// `tol`; greedy policy with the lowest action index on ties.
inline ValueIterationResult value_iteration(const ExplicitMdp& mdp, Discount cfg, double tol,
                                            std::size_t max_sweeps = 1'000'000) {
    if (!(tol > 0.0)) throw Error("invalid-argument", "tolerance must be positive");
    const double gamma = cfg.gamma();
    ValueIterationResult out;
    out.values.assign(mdp.num_states, 0.0);
    std::vector<double> next(mdp.num_states);
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double residual = 0.0;
        for (std::size_t s = 0; s < mdp.num_states; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::uint32_t a = 0; a < mdp.num_actions; ++a) best = std::max(best, q_value(mdp, out.values, s, a, gamma));
            next[s] = mdp.num_actions ? best : 0.0;
            residual = std::max(residual, std::abs(next[s] - out.values[s]));
        }
        out.values.swap(next);
        out.residuals.push_back(residual);
        if (residual < tol) break;
    }
    out.policy.assign(mdp.num_states, ActionId{0});
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::uint32_t a = 0; a < mdp.num_actions; ++a) {
            const double q = q_value(mdp, out.values, s, a, gamma);
            if (q > best + 1e-12) {
                best = q;
                out.policy[s] = ActionId{a};
            }
        }
    }
    return out;
}

struct UctParams {
    int iterations = 500;
    double c = std::sqrt(2.0);
    int depth = 10;
    double gamma = 0.95;
};

namespace detail {

class UctTree {
public:
    UctTree(const MealyModel& model, const UctParams& p) : model_(model), p_(p), na_(model.num_actions()) {}

    template <class Urbg>
    ActionId plan(const ProductState& root, Urbg& g) {
        nodes_.clear();
        nodes_.push_back(Node(root, na_));
        for (int i = 0; i < p_.iterations; ++i) simulate(0, p_.depth, g);
        const Node& r = nodes_[0];
        std::uint32_t best = 0;
        bool any = false;
        for (std::uint32_t a = 0; a < na_; ++a) {
            if (r.visits[a] == 0) continue;
            if (!any || r.value[a] > r.value[best]) best = a;
            any = true;
        }
        return ActionId{best};
    }

    const auto& root_visits() const { return nodes_.at(0).visits; }
    const auto& root_values() const { return nodes_.at(0).value; }

private:
    struct Node {
        Node(ProductState s, std::uint32_t na) : state(s), visits(na, 0), value(na, 0.0) {}
        ProductState state;
        std::uint64_t total = 0;
        std::vector<std::uint64_t> visits;
        std::vector<double> value;  // running mean of discounted returns
        std::map<std::pair<std::uint32_t, ProductState>, std::size_t> children;
    };

    template <class Urbg>
    double simulate(std::size_t idx, int depth, Urbg& g) {
        if (depth <= 0) return 0.0;
        const std::uint32_t a = select(nodes_[idx]);
        auto [next, reward] = model_.sample(nodes_[idx].state, ActionId{a}, g);
        double ret;
        auto key = std::make_pair(a, next);
        auto it = nodes_[idx].children.find(key);
        if (it != nodes_[idx].children.end()) {
            ret = reward + p_.gamma * simulate(it->second, depth - 1, g);
        } else {
            const std::size_t child = nodes_.size();
            nodes_[idx].children.emplace(key, child);
            nodes_.push_back(Node(next, na_));
            ret = reward + p_.gamma * rollout(next, depth - 1, g);
        }
        Node& n = nodes_[idx];
        ++n.total;
        ++n.visits[a];
        n.value[a] += (ret - n.value[a]) / static_cast<double>(n.visits[a]);
        return ret;
    }

    std::uint32_t select(const Node& n) const {
        for (std::uint32_t a = 0; a < na_; ++a)
            if (n.visits[a] == 0) return a;
        const double log_n = std::log(static_cast<double>(n.total));
        std::uint32_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::uint32_t a = 0; a < na_; ++a) {
            const double score = n.value[a] + p_.c * std::sqrt(log_n / static_cast<double>(n.visits[a]));
            if (score > best_score) {
                best_score = score;
                best = a;
            }
        }
        return best;
    }

    template <class Urbg>
    double rollout(ProductState s, int depth, Urbg& g) const {
        double ret = 0.0, w = 1.0;
        for (int d = 0; d < depth; ++d) {
            const ActionId a{static_cast<std::uint32_t>(uniform_index(g, na_))};
            auto [next, reward] = model_.sample(s, a, g);
            ret += w * reward;
            w *= p_.gamma;
            s = next;
        }
        return ret;
    }

    const MealyModel& model_;
    const UctParams& p_;
    std::uint32_t na_;
    std::vector<Node> nodes_;
};

} // namespace detail

/// UCT over the machine used as a generative model, fresh tree per call.
/// Unvisited actions are tried first (lowest index); afterwards UCB1.
/// Returns the root action with the best mean return.
template <class Urbg>
ActionId uct_plan(const MealyModel& model, const ProductState& root, const UctParams& params, Urbg& g) {
    if (params.iterations < 1) throw Error("invalid-argument", "UCT needs at least one iteration");
    detail::UctTree tree(model, params);
    return tree.plan(root, g);
}

struct RmaxParams {
    std::uint64_t known_threshold = 10;
    double r_max = 1.0;
    double gamma = 0.95;
    double tol = 1e-4;
};

/// R-max on raw observations: pairs seen fewer than K times are assumed to
/// lead to a fictitious absorbing state paying r_max forever; known pairs
/// use their empirical transitions and mean reward, frozen at K visits.
class RmaxModel {
public:
    RmaxModel(std::uint32_t num_actions, RmaxParams params) : na_(num_actions), p_(params) { Discount{params.gamma}; }

    void update(const Observation& o, ActionId a, double r, const Observation& next, bool terminal = false) {
        const std::size_t s = intern(o);
        const std::size_t n = intern(next);
        if (terminal) terminal_[n] = true;
        Pair& pr = pairs_[s][a.value];
        if (pr.count >= p_.known_threshold) return;
        ++pr.count;
        pr.reward_sum += r;
        ++pr.next_counts[n];
        if (pr.count == p_.known_threshold) dirty_ = true;
    }

    bool known(const Observation& o, ActionId a) const {
        auto it = ids_.find(o);
        return it != ids_.end() && pairs_[it->second][a.value].count >= p_.known_threshold;
    }

    std::uint64_t visits(const Observation& o, ActionId a) const {
        auto it = ids_.find(o);
        return it == ids_.end() ? 0 : pairs_[it->second][a.value].count;
    }

    /// Optimistic MDP: observed observations plus a final fictitious state.
    ExplicitMdp optimistic_mdp() const {
        ExplicitMdp m;
        const std::size_t ns = observations_.size();
        const std::size_t fict = ns;
        m.num_states = ns + 1;
        m.num_actions = na_;
        m.next.resize(ns + 1, std::vector<std::vector<std::pair<std::size_t, double>>>(na_));
        m.reward.resize(ns + 1, std::vector<double>(na_, 0.0));
        for (std::size_t s = 0; s < ns; ++s)
            for (std::uint32_t a = 0; a < na_; ++a) {
                const Pair& pr = pairs_[s][a];
                if (terminal_[s]) {
                    m.next[s][a] = {{s, 1.0}};
                } else if (pr.count >= p_.known_threshold) {
                    const double c = static_cast<double>(pr.count);
                    for (const auto& [n, k] : pr.next_counts) m.next[s][a].emplace_back(n, static_cast<double>(k) / c);
                    m.reward[s][a] = pr.reward_sum / c;
                } else {
                    m.next[s][a] = {{fict, 1.0}};
                    m.reward[s][a] = p_.r_max;
                }
            }
        for (std::uint32_t a = 0; a < na_; ++a) {
            m.next[fict][a] = {{fict, 1.0}};
            m.reward[fict][a] = p_.r_max;
        }
        return m;
    }

    /// Value of observation `o` under the optimistic model.
    double value(const Observation& o) {
        replan();
        auto it = ids_.find(o);
        return it == ids_.end() ? p_.r_max / (1.0 - p_.gamma) : solution_.values[it->second];
    }

    /// Greedy action of the optimistic model; unseen observations behave
    /// as fully unknown (action 0).
    ActionId act(const Observation& o) {
        replan();
        auto it = ids_.find(o);
        return it == ids_.end() ? ActionId{0} : solution_.policy[it->second];
    }

    const RmaxParams& params() const noexcept { return p_; }

private:
    struct Pair {
        std::uint64_t count = 0;
        double reward_sum = 0.0;
        std::map<std::size_t, std::uint64_t> next_counts;
    };

    std::size_t intern(const Observation& o) {
        auto [it, fresh] = ids_.try_emplace(o, observations_.size());
        if (fresh) {
            observations_.push_back(o);
            pairs_.emplace_back(na_);
            terminal_.push_back(false);
            dirty_ = true;
        }
        return it->second;
    }

    void replan() {
        if (!dirty_) return;
        solution_ = value_iteration(optimistic_mdp(), Discount{p_.gamma}, p_.tol);
        dirty_ = false;
    }

    std::uint32_t na_;
    RmaxParams p_;
    std::map<Observation, std::size_t> ids_;
    std::vector<Observation> observations_;
    std::vector<std::vector<Pair>> pairs_;
    std::vector<bool> terminal_;
    bool dirty_ = true;
    ValueIterationResult solution_;
};

inline ActionId rmax_act(RmaxModel& model, const Observation& o) { return model.act(o); }
inline void rmax_update(RmaxModel& model, const Observation& o, ActionId a, double r, const Observation& next,
                        bool terminal = false) {
    model.update(o, a, r, next, terminal);
}

struct EvalResult {
    double mean_per_step = 0.0;
    double std_per_step = 0.0;  // across trials, of each trial's per-step mean
    std::vector<double> returns;  // undiscounted total reward per trial
    std::vector<int> lengths;
    std::size_t total_steps = 0;

    /// Fraction of trials that collected any reward (for the maze: reached
    /// the goal within the horizon).
    double success_rate() const {
        if (returns.empty()) return 0.0;
        std::size_t k = 0;
        for (double r : returns) k += r > 0.0;
        return static_cast<double>(k) / static_cast<double>(returns.size());
    }
};

/// Runs `trials` fresh episodes of at most `horizon` steps. `make_agent(trial)`
/// returns an object with `begin(obs)`, `act(obs, t, rng)` and
/// `observe(obs, action, reward, next)`.
template <class MakeAgent>
EvalResult evaluate_policy(const EnvConfig& env, MakeAgent&& make_agent, int trials, int horizon, std::uint64_t seed) {
    if (trials < 1) throw Error("invalid-argument", "trials must be at least 1");
    EvalResult out;
    double total_reward = 0.0;
    std::vector<double> per_step;
    for (int t = 0; t < trials; ++t) {
        auto agent = make_agent(t);
        Rng g(derive_seed(seed, {static_cast<std::uint64_t>(t), 1}));
        auto [state, obs] = reset(env, derive_seed(seed, {static_cast<std::uint64_t>(t), 0}));
        agent.begin(obs);
        double ret = 0.0;
        int steps = 0;
        for (; steps < horizon && !state.done(); ++steps) {
            const Observation cur = state.observation();
            const ActionId a = agent.act(cur, steps, g);
            const StepResult r = env_step(state, a);
            agent.observe(cur, a, r.reward, r.obs);
            ret += r.reward;
        }
        out.returns.push_back(ret);
        out.lengths.push_back(steps);
        out.total_steps += static_cast<std::size_t>(steps);
        total_reward += ret;
        per_step.push_back(steps ? ret / steps : 0.0);
    }
    out.mean_per_step = out.total_steps ? total_reward / static_cast<double>(out.total_steps) : 0.0;
    if (per_step.size() > 1) {
        double m = 0.0;
        for (double x : per_step) m += x;
        m /= static_cast<double>(per_step.size());
        double ss = 0.0;
        for (double x : per_step) ss += (x - m) * (x - m);
        out.std_per_step = std::sqrt(ss / static_cast<double>(per_step.size() - 1));
    }
    return out;
}

/// Acts with UCT on a machine, tracking the machine state along the episode.
class UctAgent {
public:
    UctAgent(const MealyModel& model, UctParams params, int horizon) : model_(&model), p_(params), horizon_(horizon) {}

    void begin(const Observation& obs) { state_ = model_->initial(obs); }

    template <class Urbg>
    ActionId act(const Observation& obs, int t, Urbg& g) {
        state_.obs = obs;
        UctParams p = p_;
        p.depth = std::max(1, std::min(p_.depth, horizon_ - t));
        return uct_plan(*model_, state_, p, g);
    }

    void observe(const Observation& obs, ActionId a, double, const Observation& next) {
        state_ = ProductState{next, model_->resolve(state_.machine_state, obs, a).next};
    }

private:
    const MealyModel* model_;
    UctParams p_;
    int horizon_;
    ProductState state_;
};

/// Follows a precomputed product-MDP policy; unknown product states play
/// action 0.
class ProductPolicyAgent {
public:
    ProductPolicyAgent(const MealyModel& model, const ProductMdp& mdp, const std::vector<ActionId>& policy)
        : model_(&model), mdp_(&mdp), policy_(&policy) {}

    void begin(const Observation& obs) { state_ = model_->initial(obs); }

    template <class Urbg>
    ActionId act(const Observation& obs, int, Urbg&) {
        state_.obs = obs;
        auto it = mdp_->index.find(state_);
        return it == mdp_->index.end() ? ActionId{0} : (*policy_)[it->second];
    }

    void observe(const Observation& obs, ActionId a, double, const Observation& next) {
        state_ = ProductState{next, model_->resolve(state_.machine_state, obs, a).next};
    }

private:
    const MealyModel* model_;
    const ProductMdp* mdp_;
    const std::vector<ActionId>* policy_;
    ProductState state_;
};

/// Greedy policy of an R-max model, without further learning.
class RmaxGreedyAgent {
public:
    explicit RmaxGreedyAgent(RmaxModel& model) : model_(&model) {}
    void begin(const Observation&) {}
    template <class Urbg>
    ActionId act(const Observation& obs, int, Urbg&) {
        return model_->act(obs);
    }
    void observe(const Observation&, ActionId, double, const Observation&) {}

private:
    RmaxModel* model_;
};

/// Plays a fixed action.
struct ConstantAgent {
    ActionId action;
    void begin(const Observation&) {}
    template <class Urbg>
    ActionId act(const Observation&, int, Urbg&) {
        return action;
    }
    void observe(const Observation&, ActionId, double, const Observation&) {}
};

} // namespace s3m
