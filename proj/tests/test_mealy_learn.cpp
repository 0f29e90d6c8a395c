#include <gtest/gtest.h>

#include "s3m/envs.hpp"
#include "s3m/mealy_learn.hpp"
#include "s3m/sampling.hpp"

using namespace s3m;

namespace {

InputSymbol sym(std::uint64_t obs, std::uint32_t a) { return {Observation(obs, 1), ActionId{a}}; }

/// Every input sequence of length `depth` over 1-bit observations and
/// `na` actions, labelled by `label(prefix_length_minus_one, symbol)`.
template <class Label>
std::vector<LabeledSequence> complete(int depth, std::uint32_t na, Label&& label) {
    std::vector<LabeledSequence> out;
    const std::uint64_t per = 2 * na;
    std::uint64_t total = 1;
    for (int i = 0; i < depth; ++i) total *= per;
    for (std::uint64_t code = 0; code < total; ++code) {
        LabeledSequence ls;
        std::uint64_t c = code;
        for (int i = 0; i < depth; ++i) {
            const auto s = sym(c % 2, static_cast<std::uint32_t>((c / 2) % na));
            c /= per;
            ls.inputs.push_back(s);
            ls.labels.push_back(label(i, s, ls.inputs));
        }
        out.push_back(std::move(ls));
    }
    return out;
}

/// Labelled sequences produced by running random inputs through `m`.
std::vector<LabeledSequence> from_machine(const MealyMachine& m, Rng& g, std::size_t count, std::size_t max_len) {
    std::vector<LabeledSequence> out;
    for (std::size_t k = 0; k < count; ++k) {
        LabeledSequence ls;
        StateIndex s = m.initial_state();
        const std::size_t len = 1 + uniform_index(g, max_len);
        for (std::size_t i = 0; i < len && !m.row(s).empty(); ++i) {
            auto it = m.row(s).begin();
            std::advance(it, static_cast<long>(uniform_index(g, m.row(s).size())));
            ls.inputs.push_back(it->first);
            ls.labels.push_back(it->second.label);
            s = it->second.next;
        }
        out.push_back(std::move(ls));
    }
    return out;
}

MealyMachine random_complete_machine(Rng& g) {
    for (;;) {
        const std::size_t n = 1 + uniform_index(g, 5);
        const std::uint32_t na = 1 + static_cast<std::uint32_t>(uniform_index(g, 2));
        const std::uint64_t labels = 1 + uniform_index(g, 3);
        MealyBuilder b(n, 1, na);
        for (std::size_t s = 0; s < n; ++s)
            for (std::uint64_t o = 0; o < 2; ++o)
                for (std::uint32_t a = 0; a < na; ++a)
                    b.set(static_cast<StateIndex>(s), sym(o, a), static_cast<StateIndex>(uniform_index(g, n)),
                          static_cast<LabelId>(uniform_index(g, labels)));
        try {
            return std::move(b).build();
        } catch (const Error&) {
        }
    }
}

/// Ground-truth labelled sequences for an environment, sampled with pure
/// exploration.
std::vector<LabeledSequence> ground_truth_sequences(const EnvConfig& cfg, int episodes, int horizon, std::uint64_t seed) {
    auto gt = ground_truth_mealy(cfg);
    SampleStats stats(cfg.num_actions());
    auto sample = sample_pure(cfg, episodes, horizon, stats, seed);
    std::vector<LabeledSequence> out;
    for (const auto& t : sample.traces) {
        LabeledSequence ls;
        ls.inputs = input_symbols(t);
        ls.labels = mealy_run(gt.machine, ls.inputs);
        out.push_back(std::move(ls));
    }
    return out;
}

} // namespace

TEST(PrefixTree, SharesPrefixesAndCounts) {
    std::vector<LabeledSequence> seqs{{{sym(0, 0), sym(1, 0)}, {3, 4}}, {{sym(0, 0), sym(0, 1)}, {3, 5}}};
    auto t = build_prefix_tree(seqs);
    EXPECT_EQ(t.size(), 4u);
    EXPECT_EQ(t.node(0).edges.at(sym(0, 0)).count, 2u);
    EXPECT_EQ(t.num_actions(), 2u);
    // Breadth-first numbering: depths never decrease with the id.
    for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t.node(i - 1).depth, t.node(i).depth);
    EXPECT_NE(t.to_dot().find("n0 -> n1"), std::string::npos);
}

TEST(PrefixTree, RejectsConflictingLabels) {
    std::vector<LabeledSequence> seqs{{{sym(0, 0), sym(1, 0)}, {3, 4}}, {{sym(0, 0), sym(1, 0)}, {3, 6}}};
    try {
        build_prefix_tree(seqs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "label-conflict");
    }
    std::vector<LabeledSequence> bad{{{sym(0, 0)}, {}}};
    EXPECT_THROW(build_prefix_tree(bad), Error);
}

TEST(Edsm, IdenticalLabelsGiveOneState) {
    auto seqs = complete(4, 2, [](int, const InputSymbol&, const std::vector<InputSymbol>&) { return LabelId{7}; });
    auto m = edsm_learn(build_prefix_tree(seqs));
    EXPECT_EQ(m.num_states(), 1u);
    EXPECT_EQ(m.num_defined(), 4u);
    EXPECT_TRUE(consistency_check(m, seqs));
}

TEST(Edsm, ParityRecoversTwoStates) {
    auto seqs = complete(6, 1, [](int i, const InputSymbol&, const std::vector<InputSymbol>&) {
        return static_cast<LabelId>(i % 2);
    });
    auto m = edsm_learn(build_prefix_tree(seqs));
    EXPECT_EQ(m.num_states(), 2u);
    EXPECT_TRUE(consistency_check(m, seqs));
}

TEST(Edsm, ObservationToggleRecoversTwoStates) {
    // Label = number of 1-observations seen so far (including this one), mod 2.
    auto seqs = complete(6, 1, [](int, const InputSymbol&, const std::vector<InputSymbol>& prefix) {
        LabelId ones = 0;
        for (const auto& s : prefix) ones += static_cast<LabelId>(s.obs.bits());
        return ones % 2;
    });
    auto m = edsm_learn(build_prefix_tree(seqs));
    EXPECT_EQ(m.num_states(), 2u);
    EXPECT_TRUE(consistency_check(m, seqs));
}

TEST(Edsm, ConsistentWithEveryTrainingSet) {
    Rng g(21);
    for (int trial = 0; trial < 1000; ++trial) {
        auto truth = random_complete_machine(g);
        auto seqs = from_machine(truth, g, 1 + uniform_index(g, 30), 8);
        auto tree = build_prefix_tree(seqs, truth.num_actions());
        auto m = edsm_learn(tree);
        ASSERT_TRUE(consistency_check(m, seqs)) << "trial " << trial;
        EXPECT_LE(m.num_states(), tree.size());
        EXPECT_EQ(m.num_actions(), truth.num_actions());
    }
}

TEST(Edsm, CachedSearchMatchesReference) {
    Rng g(5);
    for (int trial = 0; trial < 300; ++trial) {
        auto truth = random_complete_machine(g);
        auto tree = build_prefix_tree(from_machine(truth, g, 1 + uniform_index(g, 60), 10), truth.num_actions());
        ASSERT_EQ(edsm_learn(tree), detail::edsm_learn_reference(tree)) << "trial " << trial;
    }
    auto tree = build_prefix_tree(ground_truth_sequences(cheat_mab_config(), 200, 10, 3));
    EXPECT_EQ(edsm_learn(tree), detail::edsm_learn_reference(tree));
}

TEST(Edsm, DenseSamplesNeverNeedMoreStatesThanTheTruth) {
    Rng g(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto truth = random_complete_machine(g);
        auto seqs = from_machine(truth, g, 400, 12);
        auto m = edsm_learn(build_prefix_tree(seqs, truth.num_actions()));
        EXPECT_TRUE(consistency_check(m, seqs));
        EXPECT_LE(m.num_states(), truth.num_states()) << "trial " << trial;
    }
}

TEST(Edsm, Deterministic) {
    auto seqs = ground_truth_sequences(rotating_mab_config(), 100, 10, 1);
    auto a = edsm_learn(build_prefix_tree(seqs));
    auto b = edsm_learn(build_prefix_tree(seqs));
    EXPECT_EQ(serialize_mealy(a), serialize_mealy(b));
}

TEST(Edsm, RotatingBanditFromGroundTruthLabels) {
    auto cfg = rotating_mab_config();
    auto seqs = ground_truth_sequences(cfg, 500, 10, 11);
    auto m = edsm_learn(build_prefix_tree(seqs, cfg.num_actions()));
    EXPECT_EQ(m.num_states(), 2u);
    EXPECT_TRUE(consistency_check(m, seqs));

    // Agrees with the truth on fresh random inputs.
    auto gt = ground_truth_mealy(cfg);
    Rng g(12);
    for (int k = 0; k < 1000; ++k) {
        std::vector<InputSymbol> in;
        for (int i = 0; i < 12; ++i) in.push_back(sym(uniform_index(g, 2), static_cast<std::uint32_t>(uniform_index(g, 2))));
        EXPECT_EQ(mealy_run(m, in), mealy_run(gt.machine, in));
    }
}

TEST(Edsm, EmptyTrainingSetGivesSingleState) {
    auto m = edsm_learn(build_prefix_tree({}, 2));
    EXPECT_EQ(m.num_states(), 1u);
    EXPECT_EQ(m.num_defined(), 0u);
}
