#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "s3m/envs.hpp"

using namespace s3m;

namespace {

// Draws that make uniform01 return 0 (always below p) or just under 1.
struct Fixed {
    using result_type = std::uint64_t;
    std::uint64_t v;
    static constexpr std::uint64_t min() { return 0; }
    static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }
    std::uint64_t operator()() { return v; }
};

Fixed force_low() { return Fixed{0}; }
Fixed force_high() { return Fixed{~std::uint64_t{0}}; }

/// Exact value of always pulling arm 0 for `horizon` steps, by dynamic
/// programming over the rotation offset.
double always_arm0_value(const EnvConfig& cfg, int horizon) {
    const std::size_t n = cfg.win_probs.size();
    std::vector<double> dist(n, 0.0);
    dist[0] = 1.0;
    double total = 0.0;
    for (int t = 0; t < horizon; ++t) {
        std::vector<double> next(n, 0.0);
        for (std::size_t off = 0; off < n; ++off) {
            const double p = cfg.win_probs[off % n];
            total += dist[off] * p;
            next[(off + 1) % n] += dist[off] * p;
            next[off] += dist[off] * (1.0 - p);
        }
        dist = next;
    }
    return total / horizon;
}

} // namespace

TEST(Envs, ResetObservations) {
    EXPECT_EQ(reset(rotating_mab_config(), 1).second, Observation(0, 1));
    EXPECT_EQ(reset(cheat_mab_config(), 1).second, Observation(0, 1));
    auto maze = maze_config();
    auto o = reset(maze, 1).second;
    EXPECT_EQ(o.width(), 4u);
    EXPECT_EQ(maze.decode(o), maze.start);
}

TEST(Envs, RotatingWinAdvancesOffset) {
    auto cfg = rotating_mab_config();
    auto [s, o] = reset(cfg, 0);
    auto lo = force_low();
    auto r = env_step(s, ActionId{0}, lo);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_EQ(r.obs, Observation(1, 1));
    // After one win arm 0 behaves like 0.2 and arm 1 like 0.9, so a draw
    // of 0.5 wins only on arm 1.
    Fixed mid{std::uint64_t{1} << 63};
    EnvState copy = s;
    EXPECT_EQ(env_step(s, ActionId{0}, mid).reward, 0.0);
    EXPECT_EQ(env_step(copy, ActionId{1}, mid).reward, 1.0);
}

TEST(Envs, RejectsBadActionsAndFinishedEpisodes) {
    auto [s, o] = reset(rotating_mab_config(), 0);
    EXPECT_THROW(env_step(s, ActionId{2}), Error);

    auto maze = maze_config();
    maze.start = {3, 1};
    maze.rotation = false;
    maze.slip_prob = 0.0;
    auto [m, mo] = reset(maze, 0);
    auto r = env_step(m, ActionId{MazeAction::up});
    EXPECT_TRUE(r.done);
    EXPECT_EQ(r.reward, 1.0);
    try {
        env_step(m, ActionId{0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "episode-finished");
    }
}

TEST(Envs, InvalidConfigsRejected) {
    auto c = rotating_mab_config();
    c.win_probs = {0.5};
    EXPECT_THROW(reset(c, 0), Error);
    c.win_probs = {0.5, 1.5};
    EXPECT_THROW(reset(c, 0), Error);
    auto m = maze_config();
    m.goal = m.start;
    EXPECT_THROW(reset(m, 0), Error);
    m = maze_config();
    m.goal = {4, 0};
    EXPECT_THROW(reset(m, 0), Error);
    EXPECT_THROW(parse_env_kind("bandit"), Error);
}

TEST(Envs, CheatSequenceUnlocksCertainWins) {
    auto cfg = cheat_mab_config();
    auto [s, o] = reset(cfg, 0);
    auto hi = force_high();
    // Losing draws throughout; the pattern 1,1,0 unlocks, and only
    // afterwards does every pull win.
    for (ActionId a : {ActionId{0}, ActionId{1}, ActionId{1}, ActionId{0}}) EXPECT_EQ(env_step(s, a, hi).reward, 0.0);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(env_step(s, ActionId{static_cast<std::uint32_t>(i % 2)}, hi).reward, 1.0);
}

TEST(Envs, CheatPatternOverlapsAreTracked) {
    // 1,1,1,0 still contains 1,1,0 as a suffix.
    auto cfg = cheat_mab_config();
    auto [s, o] = reset(cfg, 0);
    auto hi = force_high();
    for (ActionId a : {ActionId{1}, ActionId{1}, ActionId{1}, ActionId{0}}) env_step(s, a, hi);
    EXPECT_EQ(env_step(s, ActionId{0}, hi).reward, 1.0);
}

TEST(Envs, MalfunctionLosesEveryKPlusFirstPull) {
    auto cfg = malfunction_mab_config();
    auto [s, o] = reset(cfg, 0);
    auto lo = force_low();
    std::vector<double> rewards;
    for (int i = 0; i < 8; ++i) rewards.push_back(env_step(s, ActionId{0}, lo).reward);
    EXPECT_EQ(rewards, (std::vector<double>{1, 1, 1, 0, 1, 1, 1, 0}));
}

TEST(Envs, MazeOrientationTable) {
    auto cfg = maze_config();
    EXPECT_EQ(maze_orientation(cfg, 0), 0u);
    EXPECT_EQ(maze_orientation(cfg, 2), 0u);
    EXPECT_EQ(maze_orientation(cfg, 3), 1u);
    EXPECT_EQ(maze_orientation(cfg, 11), 3u);
    EXPECT_EQ(maze_orientation(cfg, 12), 0u);
    EXPECT_EQ(resolve_direction(MazeAction::up, 1), MazeAction::right);
    EXPECT_EQ(resolve_direction(MazeAction::left, 1), MazeAction::up);
    EXPECT_EQ(resolve_direction(MazeAction::up, 2), MazeAction::down);
    cfg.rotation = false;
    EXPECT_EQ(maze_orientation(cfg, 7), 0u);
}

TEST(Envs, MazeRotatedMoveAndSlip) {
    auto cfg = maze_config();
    cfg.start = {1, 1};
    auto lo = force_low();
    auto hi = force_high();
    auto [s, o] = reset(cfg, 0);
    // Orientation 0 for the first three actions.
    env_step(s, ActionId{MazeAction::right}, lo);
    env_step(s, ActionId{MazeAction::left}, lo);
    env_step(s, ActionId{MazeAction::right}, lo);
    EXPECT_EQ(cfg.decode(s.observation()), (Cell{2, 1}));
    // Orientation 1 now: intended up resolves to right.
    env_step(s, ActionId{MazeAction::up}, lo);
    EXPECT_EQ(cfg.decode(s.observation()), (Cell{3, 1}));
    // A slip reverses the resolved direction: up -> right -> slips left.
    env_step(s, ActionId{MazeAction::up}, hi);
    EXPECT_EQ(cfg.decode(s.observation()), (Cell{2, 1}));
}

TEST(Envs, MazeWallsKeepPosition) {
    auto cfg = maze_config();
    cfg.rotation = false;
    cfg.slip_prob = 0.0;
    auto [s, o] = reset(cfg, 0);
    EXPECT_EQ(env_step(s, ActionId{MazeAction::down}).obs, o);
    EXPECT_EQ(env_step(s, ActionId{MazeAction::left}).obs, o);
    EXPECT_EQ(maze_move(cfg, Cell{3, 3}, MazeAction::up), (Cell{3, 3}));
}

TEST(Envs, MazeScriptedReplay) {
    // Fixed action script without slips; positions follow the rotation.
    auto cfg = maze_config();
    auto lo = force_low();
    auto [s, o] = reset(cfg, 0);
    const std::vector<std::uint32_t> script{MazeAction::up, MazeAction::up, MazeAction::right, MazeAction::up,
                                            MazeAction::up};
    // Steps 0..2 unrotated; steps 3..4 rotated once, so up resolves to right.
    const std::vector<Cell> expected{{0, 1}, {0, 2}, {1, 2}, {2, 2}, {3, 2}};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        auto r = env_step(s, ActionId{script[i]}, lo);
        EXPECT_EQ(cfg.decode(r.obs), expected[i]) << "step " << i;
    }
    EXPECT_TRUE(s.done());
}

TEST(Envs, SameSeedSameTrace) {
    for (auto kind : {EnvKind::rotating_mab, EnvKind::malfunction_mab, EnvKind::cheat_mab, EnvKind::maze}) {
        auto cfg = default_config(kind);
        auto policy = [&](const Observation&, int t) { return ActionId{static_cast<std::uint32_t>(t * 7 % 3 % cfg.num_actions())}; };
        auto a = run_episode(cfg, 42, 30, policy);
        auto b = run_episode(cfg, 42, 30, policy);
        EXPECT_EQ(a.trace, b.trace);
        EXPECT_EQ(a.total_reward, b.total_reward);
    }
}

TEST(GroundTruth, StateCounts) {
    EXPECT_EQ(ground_truth_mealy(rotating_mab_config()).machine.num_states(), 2u);
    EXPECT_EQ(ground_truth_mealy(cheat_mab_config()).machine.num_states(), 4u);
    EXPECT_EQ(ground_truth_mealy(maze_config()).machine.num_states(), 12u);
    for (int k : {1, 3, 5}) {
        auto c = malfunction_mab_config();
        c.malfunction_k = k;
        EXPECT_EQ(ground_truth_mealy(c).machine.num_states(), static_cast<std::size_t>(k) + 1);
    }
    auto m = maze_config();
    m.rotation = false;
    EXPECT_EQ(ground_truth_mealy(m).machine.num_states(), 1u);
}

TEST(GroundTruth, LabelsMatchSimulatedFrequencies) {
    // For random action prefixes, the label the ground-truth machine emits
    // must match the empirical next-outcome frequencies.
    Rng g(99);
    for (auto kind : {EnvKind::rotating_mab, EnvKind::malfunction_mab, EnvKind::cheat_mab, EnvKind::maze}) {
        auto cfg = default_config(kind);
        auto gt = ground_truth_mealy(cfg);
        for (int trial = 0; trial < 6; ++trial) {
            // A deterministic prefix keeps the hidden state identical
            // across replicas only when outcomes do not feed back; use a
            // forced-loss or forced-no-slip replay to build it.
            std::vector<ActionId> prefix;
            const std::size_t len = uniform_index(g, 6);
            for (std::size_t i = 0; i < len; ++i)
                prefix.push_back(ActionId{static_cast<std::uint32_t>(uniform_index(g, cfg.num_actions()))});
            const ActionId a{static_cast<std::uint32_t>(uniform_index(g, cfg.num_actions()))};

            // Replay the prefix with forced draws to get one concrete history.
            auto [s, o] = reset(cfg, 0);
            auto hi = force_high();
            auto lo = force_low();
            Trace t{o, {}};
            for (ActionId p : prefix) {
                if (s.done()) break;
                auto r = cfg.is_mab() ? env_step(s, p, hi) : env_step(s, p, lo);
                t.steps.push_back(Step{p, r.reward, r.obs});
            }
            if (s.done()) continue;
            auto syms = input_symbols(t);
            syms.push_back(InputSymbol{s.observation(), a});
            const LabelId label = mealy_run(gt.machine, syms).back();
            const auto& dist = gt.labels.at(label);

            // Empirical frequencies from the same hidden state.
            std::map<Outcome, double> freq;
            const int n = 20000;
            Rng draw(derive_seed(7, {static_cast<std::uint64_t>(trial)}));
            for (int i = 0; i < n; ++i) {
                EnvState copy = s;
                auto r = env_step(copy, a, draw);
                freq[dist.outcome_of(r.obs, r.reward)] += 1.0 / n;
            }
            for (const auto& [out, p] : dist.probs()) EXPECT_NEAR(freq[out], p, 0.02) << to_string(kind);
            for (const auto& [out, f] : freq) EXPECT_GT(dist.prob(out), 0.0) << to_string(kind);
        }
    }
}

TEST(Envs, ObservationAloneIsNotMarkov) {
    // Two histories ending in the same observation and action whose next
    // outcome distributions differ by total variation >= 0.5.
    auto cfg = rotating_mab_config();
    auto lo = force_low();
    auto hi = force_high();
    auto [a, oa] = reset(cfg, 0);
    env_step(a, ActionId{1}, hi);  // lose: offset stays 0
    auto [b, ob] = reset(cfg, 0);
    env_step(b, ActionId{0}, lo);  // win: offset 1
    env_step(b, ActionId{0}, hi);  // lose
    ASSERT_EQ(a.observation(), b.observation());
    const int n = 20000;
    double wins_a = 0, wins_b = 0;
    Rng g(5);
    for (int i = 0; i < n; ++i) {
        EnvState ca = a, cb = b;
        wins_a += env_step(ca, ActionId{0}, g).reward;
        wins_b += env_step(cb, ActionId{0}, g).reward;
    }
    EXPECT_GE(std::abs(wins_a - wins_b) / n, 0.5);
}

TEST(Envs, AlwaysArmZeroValue) {
    auto cfg = rotating_mab_config();
    const double exact = always_arm0_value(cfg, 10);
    EXPECT_NEAR(exact, 0.3793388, 1e-6);
    double total = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i)
        total += run_episode(cfg, derive_seed(3, {static_cast<std::uint64_t>(i)}), 10, [](const Observation&, int) {
                     return ActionId{0};
                 }).total_reward;
    EXPECT_NEAR(total / (10.0 * n), exact, 0.01);
}
