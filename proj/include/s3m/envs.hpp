#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "s3m/core.hpp"
#include "s3m/distribution.hpp"
#include "s3m/mealy.hpp"
#include "s3m/rng.hpp"

namespace s3m {

enum class EnvKind { rotating_mab, malfunction_mab, cheat_mab, maze };

inline std::string to_string(EnvKind k) {
    switch (k) {
    case EnvKind::rotating_mab: return "rotating_mab";
    case EnvKind::malfunction_mab: return "malfunction_mab";
    case EnvKind::cheat_mab: return "cheat_mab";
    case EnvKind::maze: return "maze";
    }
    return "?";
}

inline EnvKind parse_env_kind(const std::string& s) {
    if (s == "rotating_mab") return EnvKind::rotating_mab;
    if (s == "malfunction_mab") return EnvKind::malfunction_mab;
    if (s == "cheat_mab") return EnvKind::cheat_mab;
    if (s == "maze") return EnvKind::maze;
    throw Error("invalid-config", "unknown environment kind '" + s + "'");
}

struct Cell {
    int x = 0;
    int y = 0;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Maze actions, clockwise so that a rotation by k quarter turns maps
/// action a to (a + k) mod 4.
enum MazeAction : std::uint32_t { up = 0, right = 1, down = 2, left = 3 };

struct EnvConfig {
    EnvKind kind = EnvKind::rotating_mab;
    std::vector<double> win_probs{0.9, 0.2};
    // malfunction_mab: arm `broken_arm` loses for one pull after every
    // `malfunction_k` pulls.
    int malfunction_k = 3;
    std::uint32_t broken_arm = 0;
    // cheat_mab: consecutive action pattern that unlocks certain wins.
    std::vector<ActionId> cheat_sequence{ActionId{1}, ActionId{1}, ActionId{0}};
    // maze
    int grid_size = 4;
    Cell start{0, 0};
    Cell goal{3, 2};
    double slip_prob = 0.1;
    int rotate_every = 3;
    bool rotation = true;

    int episode_horizon = 10;
    std::uint64_t seed = 0;

    bool is_mab() const noexcept { return kind != EnvKind::maze; }

    std::uint32_t num_actions() const { return is_mab() ? static_cast<std::uint32_t>(win_probs.size()) : 4u; }

    /// Bits per maze coordinate.
    unsigned coord_bits() const {
        unsigned b = 1;
        while ((1 << b) < grid_size) ++b;
        return b;
    }

    unsigned obs_width() const { return is_mab() ? 1u : 2 * coord_bits(); }

    PropositionSet propositions() const {
        if (is_mab()) return PropositionSet({"won"});
        std::vector<std::string> names;
        for (unsigned i = 0; i < coord_bits(); ++i) names.push_back("x" + std::to_string(i));
        for (unsigned i = 0; i < coord_bits(); ++i) names.push_back("y" + std::to_string(i));
        return PropositionSet(std::move(names));
    }

    Observation encode(Cell c) const {
        const unsigned b = coord_bits();
        return Observation(static_cast<std::uint64_t>(c.x) | (static_cast<std::uint64_t>(c.y) << b), obs_width());
    }

    Cell decode(const Observation& o) const {
        const unsigned b = coord_bits();
        const std::uint64_t m = (std::uint64_t{1} << b) - 1;
        return Cell{static_cast<int>(o.bits() & m), static_cast<int>((o.bits() >> b) & m)};
    }

    bool in_grid(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < grid_size && c.y < grid_size; }

    void validate() const {
        auto bad = [](const std::string& m) { throw Error("invalid-config", m); };
        if (episode_horizon < 1) bad("episode_horizon must be positive");
        if (is_mab()) {
            if (win_probs.size() < 2) bad("bandits need at least two arms");
            for (double p : win_probs)
                if (!(p >= 0.0 && p <= 1.0)) bad("win probabilities must lie in [0, 1]");
        }
        if (kind == EnvKind::malfunction_mab) {
            if (malfunction_k < 1) bad("malfunction_k must be positive");
            if (broken_arm >= win_probs.size()) bad("broken_arm out of range");
        }
        if (kind == EnvKind::cheat_mab) {
            if (cheat_sequence.empty()) bad("cheat_sequence must be non-empty");
            for (auto a : cheat_sequence)
                if (a.value >= win_probs.size()) bad("cheat_sequence action out of range");
        }
        if (kind == EnvKind::maze) {
            if (grid_size < 2 || grid_size > 1 << 16) bad("grid_size must be in [2, 65536]");
            if (!in_grid(start) || !in_grid(goal)) bad("start and goal must lie inside the grid");
            if (start == goal) bad("start and goal must differ");
            if (!(slip_prob >= 0.0 && slip_prob <= 1.0)) bad("slip_prob must lie in [0, 1]");
            if (rotate_every < 1) bad("rotate_every must be positive");
        }
    }
};

inline EnvConfig rotating_mab_config() { return EnvConfig{}; }

inline EnvConfig malfunction_mab_config() {
    EnvConfig c;
    c.kind = EnvKind::malfunction_mab;
    c.win_probs = {0.8, 0.2};
    return c;
}

inline EnvConfig cheat_mab_config() {
    EnvConfig c;
    c.kind = EnvKind::cheat_mab;
    c.win_probs = {0.2, 0.2};
    return c;
}

inline EnvConfig maze_config() {
    EnvConfig c;
    c.kind = EnvKind::maze;
    c.win_probs.clear();
    c.episode_horizon = 15;
    return c;
}

inline EnvConfig default_config(EnvKind k) {
    switch (k) {
    case EnvKind::rotating_mab: return rotating_mab_config();
    case EnvKind::malfunction_mab: return malfunction_mab_config();
    case EnvKind::cheat_mab: return cheat_mab_config();
    case EnvKind::maze: return maze_config();
    }
    return {};
}

namespace detail {

/// Longest proper prefix of `seq` that is also a suffix of seq[0..j) + a,
/// i.e. the KMP automaton for consecutive-pattern matching.
inline std::size_t pattern_advance(const std::vector<ActionId>& seq, std::size_t matched, ActionId a) {
    std::vector<ActionId> window(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(matched));
    window.push_back(a);
    for (std::size_t len = std::min(window.size(), seq.size()); len > 0; --len)
        if (std::equal(window.end() - static_cast<std::ptrdiff_t>(len), window.end(), seq.begin())) return len;
    return 0;
}

inline Cell move(Cell c, std::uint32_t dir) {
    switch (dir) {
    case MazeAction::up: return {c.x, c.y + 1};
    case MazeAction::right: return {c.x + 1, c.y};
    case MazeAction::down: return {c.x, c.y - 1};
    default: return {c.x - 1, c.y};
    }
}

} // namespace detail

/// Quarter turns of the maze orientation after `actions_taken` actions.
inline std::uint32_t maze_orientation(const EnvConfig& cfg, std::uint64_t actions_taken) {
    if (!cfg.rotation) return 0;
    return static_cast<std::uint32_t>((actions_taken / static_cast<std::uint64_t>(cfg.rotate_every)) % 4);
}

/// Direction an intended maze action resolves to under an orientation
/// (clockwise quarter turns).
inline std::uint32_t resolve_direction(std::uint32_t intended, std::uint32_t orientation) {
    return (intended + orientation) % 4;
}

/// Position after moving in `dir`; walls leave the agent in place.
inline Cell maze_move(const EnvConfig& cfg, Cell c, std::uint32_t dir) {
    Cell n = detail::move(c, dir);
    return cfg.in_grid(n) ? n : c;
}

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
};

/// Hidden simulator state plus its own RNG stream. Nothing here is visible
/// to the agent beyond the returned observations.
class EnvState {
public:
    const EnvConfig& config() const noexcept { return cfg_; }
    const Observation& observation() const noexcept { return obs_; }
    bool done() const noexcept { return done_; }
    std::uint64_t steps_taken() const noexcept { return steps_; }

private:
    friend std::pair<EnvState, Observation> reset(const EnvConfig&, std::uint64_t);
    template <class Urbg>
    friend StepResult env_step(EnvState&, ActionId, Urbg&);
    friend StepResult env_step(EnvState&, ActionId);

    EnvConfig cfg_;
    Rng rng_;
    Observation obs_;
    bool done_ = false;
    std::uint64_t steps_ = 0;
    // rotating_mab
    std::size_t offset_ = 0;
    // malfunction_mab
    int broken_pulls_ = 0;
    // cheat_mab
    std::size_t matched_ = 0;
    bool unlocked_ = false;
    // maze
    Cell pos_;
};

inline std::pair<EnvState, Observation> reset(const EnvConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EnvState s;
    s.cfg_ = cfg;
    s.rng_.seed(seed);
    s.pos_ = cfg.start;
    s.obs_ = cfg.is_mab() ? Observation(0, 1) : cfg.encode(cfg.start);
    Observation first = s.obs_;
    return {std::move(s), first};
}

inline std::pair<EnvState, Observation> reset(const EnvConfig& cfg) { return reset(cfg, cfg.seed); }

/// Advances the simulator with draws from `g` instead of the state's own
/// stream (tests use this to force outcomes).
template <class Urbg>
StepResult env_step(EnvState& s, ActionId a, Urbg& g) {
    const EnvConfig& cfg = s.cfg_;
    if (s.done_) throw Error("episode-finished", "cannot step a finished episode");
    if (a.value >= cfg.num_actions()) throw Error("invalid-action", "action " + std::to_string(a.value) + " out of range");
    const double u = uniform01(g);
    StepResult r;

    if (cfg.is_mab()) {
        double p = cfg.win_probs[a.value];
        switch (cfg.kind) {
        case EnvKind::rotating_mab: p = cfg.win_probs[(a.value + s.offset_) % cfg.win_probs.size()]; break;
        case EnvKind::malfunction_mab:
            if (a.value == cfg.broken_arm) {
                if (s.broken_pulls_ == cfg.malfunction_k) {
                    p = 0.0;
                    s.broken_pulls_ = 0;
                } else {
                    ++s.broken_pulls_;
                }
            }
            break;
        case EnvKind::cheat_mab:
            if (s.unlocked_) p = 1.0;
            else if ((s.matched_ = detail::pattern_advance(cfg.cheat_sequence, s.matched_, a)) == cfg.cheat_sequence.size())
                s.unlocked_ = true;
            break;
        case EnvKind::maze: break;
        }
        const bool won = u < p;
        if (won && cfg.kind == EnvKind::rotating_mab) s.offset_ = (s.offset_ + 1) % cfg.win_probs.size();
        r.obs = Observation(won ? 1 : 0, 1);
        r.reward = won ? 1.0 : 0.0;
    } else {
        const std::uint32_t dir = resolve_direction(a.value, maze_orientation(cfg, s.steps_));
        const std::uint32_t actual = u < 1.0 - cfg.slip_prob ? dir : (dir + 2) % 4;
        s.pos_ = maze_move(cfg, s.pos_, actual);
        r.obs = cfg.encode(s.pos_);
        if (s.pos_ == cfg.goal) {
            r.reward = 1.0;
            s.done_ = true;
        }
    }
    ++s.steps_;
    s.obs_ = r.obs;
    r.done = s.done_;
    return r;
}

inline StepResult env_step(EnvState& s, ActionId a) { return env_step(s, a, s.rng_); }

struct EpisodeOutcome {
    Trace trace;
    double total_reward = 0.0;
    bool reached_goal = false;
};

/// Runs one episode of at most `horizon` steps; `policy(obs, t)` picks actions.
template <class Policy>
EpisodeOutcome run_episode(const EnvConfig& cfg, std::uint64_t seed, int horizon, Policy&& policy) {
    auto [state, obs] = reset(cfg, seed);
    EpisodeOutcome out;
    out.trace.initial_obs = obs;
    for (int t = 0; t < horizon && !state.done(); ++t) {
        ActionId a = policy(state.observation(), t);
        StepResult r = env_step(state, a);
        out.trace.steps.push_back(Step{a, r.reward, r.obs});
        out.total_reward += r.reward;
    }
    out.reached_goal = cfg.kind == EnvKind::maze && state.done();
    return out;
}

/// Hand-built machine reproducing a domain's dynamics, with the table that
/// gives each output label its outcome distribution.
struct GroundTruth {
    MealyMachine machine;
    LabelTable labels;
};

namespace detail {

/// Assigns dense label ids to distinct distributions.
class LabelInterner {
public:
    LabelId intern(const OutcomeDistribution& d) {
        Key key{d.mask(), {}};
        for (const auto& [o, p] : d.probs()) key.second.emplace_back(o.assignment, o.reward, p);
        auto [it, fresh] = ids_.try_emplace(key, static_cast<LabelId>(table_.size()));
        if (fresh) table_.emplace(it->second, d);
        return it->second;
    }
    LabelTable take() && { return std::move(table_); }

private:
    using Key = std::pair<std::uint64_t, std::vector<std::tuple<std::uint64_t, double, double>>>;
    std::map<Key, LabelId> ids_;
    LabelTable table_;
};

inline OutcomeDistribution bernoulli_win(double p) {
    std::map<Outcome, double> probs;
    if (p > 0.0) probs[Outcome{1, 1.0}] = p;
    if (p < 1.0) probs[Outcome{0, 0.0}] = 1.0 - p;
    return OutcomeDistribution::from_probabilities(1, 1, probs);
}

} // namespace detail

/// Ground-truth machine for `cfg`. A machine state summarises the history
/// *before* the observation carried in the next input symbol, so e.g. the
/// rotating bandit's state is the rotation offset not yet counting a win
/// reported by the current observation.
inline GroundTruth ground_truth_mealy(const EnvConfig& cfg) {
    cfg.validate();
    detail::LabelInterner labels;
    const std::uint32_t na = cfg.num_actions();
    const unsigned width = cfg.obs_width();

    switch (cfg.kind) {
    case EnvKind::rotating_mab: {
        const std::size_t n = cfg.win_probs.size();
        MealyBuilder b(n, width, na);
        for (std::size_t q = 0; q < n; ++q)
            for (std::uint64_t won = 0; won < 2; ++won)
                for (std::uint32_t a = 0; a < na; ++a) {
                    const std::size_t off = (q + won) % n;
                    LabelId l = labels.intern(detail::bernoulli_win(cfg.win_probs[(a + off) % n]));
                    b.set(static_cast<StateIndex>(q), {Observation(won, 1), ActionId{a}}, static_cast<StateIndex>(off), l);
                }
        return {std::move(b).build(), std::move(labels).take()};
    }
    case EnvKind::malfunction_mab: {
        // State c = pulls of the broken arm since its last malfunction.
        const int k = cfg.malfunction_k;
        MealyBuilder b(static_cast<std::size_t>(k) + 1, width, na);
        for (int c = 0; c <= k; ++c)
            for (std::uint64_t won = 0; won < 2; ++won)
                for (std::uint32_t a = 0; a < na; ++a) {
                    int next = c;
                    double p = cfg.win_probs[a];
                    if (a == cfg.broken_arm) {
                        if (c == k) {
                            p = 0.0;
                            next = 0;
                        } else {
                            next = c + 1;
                        }
                    }
                    b.set(static_cast<StateIndex>(c), {Observation(won, 1), ActionId{a}}, static_cast<StateIndex>(next),
                          labels.intern(detail::bernoulli_win(p)));
                }
        return {std::move(b).build(), std::move(labels).take()};
    }
    case EnvKind::cheat_mab: {
        // States 0..L-1 = pattern prefix matched so far, L = unlocked.
        const std::size_t L = cfg.cheat_sequence.size();
        MealyBuilder b(L + 1, width, na);
        for (std::size_t j = 0; j <= L; ++j)
            for (std::uint64_t won = 0; won < 2; ++won)
                for (std::uint32_t a = 0; a < na; ++a) {
                    const InputSymbol sym{Observation(won, 1), ActionId{a}};
                    if (j == L) {
                        b.set(static_cast<StateIndex>(j), sym, static_cast<StateIndex>(L), labels.intern(detail::bernoulli_win(1.0)));
                    } else {
                        std::size_t next = detail::pattern_advance(cfg.cheat_sequence, j, ActionId{a});
                        b.set(static_cast<StateIndex>(j), sym, static_cast<StateIndex>(next),
                              labels.intern(detail::bernoulli_win(cfg.win_probs[a])));
                    }
                }
        return {std::move(b).build(), std::move(labels).take()};
    }
    case EnvKind::maze: {
        // State = actions taken, modulo one full revolution.
        const std::size_t period = cfg.rotation ? static_cast<std::size_t>(cfg.rotate_every) * 4 : 1;
        const std::uint64_t full = Observation(0, width).full_mask();
        MealyBuilder b(period, width, na);
        for (std::size_t c = 0; c < period; ++c)
            for (int x = 0; x < cfg.grid_size; ++x)
                for (int y = 0; y < cfg.grid_size; ++y)
                    for (std::uint32_t a = 0; a < na; ++a) {
                        const Cell here{x, y};
                        std::map<Outcome, double> probs;
                        if (here == cfg.goal) {
                            probs[Outcome{cfg.encode(here).bits(), 0.0}] = 1.0;
                        } else {
                            const std::uint32_t dir = resolve_direction(a, maze_orientation(cfg, c));
                            for (auto [d, p] : {std::pair{dir, 1.0 - cfg.slip_prob}, std::pair{(dir + 2) % 4, cfg.slip_prob}}) {
                                if (p <= 0.0) continue;
                                const Cell to = maze_move(cfg, here, d);
                                probs[Outcome{cfg.encode(to).bits(), to == cfg.goal ? 1.0 : 0.0}] += p;
                            }
                        }
                        b.set(static_cast<StateIndex>(c), {cfg.encode(here), ActionId{a}},
                              static_cast<StateIndex>((c + 1) % period),
                              labels.intern(OutcomeDistribution::from_probabilities(width, full, probs)));
                    }
        return {std::move(b).build(), std::move(labels).take()};
    }
    }
    throw Error("invalid-config", "unknown environment kind");
}

} // namespace s3m
