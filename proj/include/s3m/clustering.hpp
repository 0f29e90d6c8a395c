#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s3m/core.hpp"
#include "s3m/distribution.hpp"
#include "s3m/sampling.hpp"

namespace s3m {

/// Full input history o0 a1 o1 a2 ... on aN+1 ending in a pending action.
using HistoryKey = std::vector<InputSymbol>;
using ContextId = std::uint32_t;

/// Prefix trie over the input symbols of a sample. Every non-root node is a
/// history context h.(o,a) and carries the raw counts of what followed it.
class HistoryTrie {
public:
    struct Node {
        ContextId parent = 0;
        InputSymbol symbol{};
        std::map<InputSymbol, ContextId> children;
        // Keyed on the full next observation bits and the reward.
        std::map<Outcome, std::uint64_t> continuations;
        std::uint64_t affected = 0;
        std::uint64_t weight = 0;
    };

    explicit HistoryTrie(unsigned obs_width) : obs_width_(obs_width), nodes_(1) {}

    static HistoryTrie build(const SampleSet& sample) {
        unsigned width = 1;
        for (const auto& t : sample.traces) {
            width = t.initial_obs.width();
            break;
        }
        HistoryTrie trie(width);
        for (const auto& t : sample.traces) trie.add(t);
        return trie;
    }

    void add(const Trace& t) {
        ContextId node = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const InputSymbol sym{t.obs_at(i), t.steps[i].action};
            if (sym.obs.width() != obs_width_) throw Error("invalid-sample", "observation width mismatch in sample");
            node = child_or_insert(node, sym);
            Node& n = nodes_[node];
            const Observation& next = t.steps[i].next_obs;
            ++n.continuations[Outcome{next.bits(), t.steps[i].reward}];
            n.affected |= sym.obs.bits() ^ next.bits();
            ++n.weight;
        }
    }

    std::optional<ContextId> find(const HistoryKey& key) const {
        ContextId node = 0;
        for (const auto& sym : key) {
            auto c = child(node, sym);
            if (!c) return std::nullopt;
            node = *c;
        }
        if (node == 0) return std::nullopt;
        return node;
    }

    std::optional<ContextId> child(ContextId node, const InputSymbol& sym) const {
        const auto& ch = nodes_.at(node).children;
        auto it = ch.find(sym);
        if (it == ch.end()) return std::nullopt;
        return it->second;
    }

    HistoryKey key(ContextId id) const {
        HistoryKey k;
        for (ContextId n = id; n != 0; n = nodes_.at(n).parent) k.push_back(nodes_[n].symbol);
        std::reverse(k.begin(), k.end());
        return k;
    }

    const Node& node(ContextId id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t num_contexts() const noexcept { return nodes_.size() - 1; }
    unsigned obs_width() const noexcept { return obs_width_; }

    /// Empirical distribution of a context over its affected propositions.
    OutcomeDistribution distribution(ContextId id) const {
        const Node& n = nodes_.at(id);
        std::map<Outcome, std::uint64_t> counts;
        for (const auto& [o, c] : n.continuations) counts[Outcome{o.assignment & n.affected, o.reward}] += c;
        return OutcomeDistribution::from_counts(obs_width_, n.affected, counts);
    }

private:
    ContextId child_or_insert(ContextId node, const InputSymbol& sym) {
        auto [it, fresh] = nodes_[node].children.try_emplace(sym, static_cast<ContextId>(nodes_.size()));
        if (fresh) {
            Node n;
            n.parent = node;
            n.symbol = sym;
            nodes_.push_back(std::move(n));
        }
        return it->second;
    }

    unsigned obs_width_;
    std::vector<Node> nodes_;
};

/// Propositions that changed in at least one sampled continuation of `ctx`.
inline std::uint64_t affected_propositions(const HistoryTrie& trie, const HistoryKey& ctx) {
    auto id = trie.find(ctx);
    if (!id) throw Error("unknown-context", "history context never sampled");
    return trie.node(*id).affected;
}

inline std::uint64_t affected_propositions(const SampleSet& sample, const HistoryKey& ctx) {
    return affected_propositions(HistoryTrie::build(sample), ctx);
}

struct ContextDistribution {
    ContextId id = 0;
    Observation obs;  // observation the pending action is taken in
    OutcomeDistribution dist;
};

/// Contexts split by sample weight: at least `min_samples` go to `bases`.
struct BaseSplit {
    std::shared_ptr<const HistoryTrie> trie;
    std::vector<ContextDistribution> bases;
    std::vector<ContextDistribution> rare;
};

inline BaseSplit base_distributions(const SampleSet& sample, std::uint64_t min_samples) {
    if (min_samples < 1) throw Error("invalid-argument", "min_samples must be at least 1");
    auto trie = std::make_shared<HistoryTrie>(HistoryTrie::build(sample));
    BaseSplit out;
    for (ContextId id = 1; id < trie->size(); ++id) {
        ContextDistribution cd{id, trie->node(id).symbol.obs, trie->distribution(id)};
        (cd.dist.weight() >= min_samples ? out.bases : out.rare).push_back(std::move(cd));
    }
    out.trie = std::move(trie);
    return out;
}

struct Cluster {
    LabelId id = 0;
    OutcomeDistribution dist;
    std::vector<ContextId> members;  // sorted
};

/// Merges two clusters over the same propositions: weights add, the
/// distribution is the weight-averaged mixture, members are unioned.
inline Cluster merge_pair(const Cluster& a, const Cluster& b) {
    Cluster c;
    c.id = a.id;
    c.dist = OutcomeDistribution::merge(a.dist, b.dist);
    c.members.reserve(a.members.size() + b.members.size());
    std::merge(a.members.begin(), a.members.end(), b.members.begin(), b.members.end(), std::back_inserter(c.members));
    c.members.erase(std::unique(c.members.begin(), c.members.end()), c.members.end());
    return c;
}

/// A clustering of every sampled history context (the pair (Pi, Tr)).
struct ClusteredModel {
    std::vector<Cluster> clusters;  // clusters[i].id == i
    std::shared_ptr<const HistoryTrie> trie;
    std::vector<std::optional<LabelId>> assignment;  // by ContextId
    double epsilon = 0.0;
    double loss = std::numeric_limits<double>::infinity();

    std::optional<LabelId> label_of(ContextId id) const {
        return id < assignment.size() ? assignment[id] : std::nullopt;
    }

    std::optional<LabelId> label_of(const HistoryKey& key) const {
        auto id = trie->find(key);
        return id ? label_of(*id) : std::nullopt;
    }

    std::size_t support_sum() const {
        std::size_t s = 0;
        for (const auto& c : clusters) s += c.dist.support_size();
        return s;
    }

    LabelTable label_table() const {
        LabelTable t;
        for (const auto& c : clusters) t.emplace(c.id, c.dist);
        return t;
    }
};

namespace detail {

/// KL(P1 || P2) for a base-cluster pair, where P1 is the heavier side, if
/// the pair may merge under `epsilon`. Equal weights allow either side.
inline std::optional<double> base_merge_divergence(const Cluster& a, const Cluster& b, double epsilon,
                                                   std::uint64_t min_samples) {
    if (a.dist.mask() != b.dist.mask() || a.dist.width() != b.dist.width()) return std::nullopt;
    std::optional<double> best;
    auto consider = [&](const Cluster& heavy, const Cluster& light) {
        if (heavy.dist.weight() < light.dist.weight() || light.dist.weight() < min_samples) return;
        if (!heavy.dist.support_within(light.dist)) return;
        auto kl = kl_divergence(heavy.dist, light.dist);
        if (kl && *kl <= epsilon && (!best || *kl < *best)) best = kl;
    };
    consider(a, b);
    consider(b, a);
    return best;
}

} // namespace detail

/// One clustering pass at threshold `epsilon`:
///  1. greedily merge base clusters, always taking the eligible pair of
///     smallest divergence and re-evaluating after every merge;
///  2. attach each rare context to the surviving cluster over the same
///     propositions with the smallest well-defined KL(P || Q), falling back
///     to clusters over a superset of its propositions;
///  3. rare contexts with no target become singleton clusters.
inline ClusteredModel merge_round(const BaseSplit& split, double epsilon, std::uint64_t min_samples) {
    if (!(epsilon >= 0.0)) throw Error("invalid-argument", "epsilon must be non-negative");
    const std::size_t nb = split.bases.size();

    std::vector<Cluster> work;
    work.reserve(nb);
    for (std::size_t i = 0; i < nb; ++i)
        work.push_back(Cluster{static_cast<LabelId>(i), split.bases[i].dist, {split.bases[i].id}});
    std::vector<bool> alive(nb, true);

    // div[i][j] for i < j.
    std::vector<std::vector<std::optional<double>>> div(nb, std::vector<std::optional<double>>(nb));
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t j = i + 1; j < nb; ++j)
            div[i][j] = detail::base_merge_divergence(work[i], work[j], epsilon, min_samples);

    for (;;) {
        std::size_t bi = 0, bj = 0;
        std::optional<double> best;
        for (std::size_t i = 0; i < nb; ++i) {
            if (!alive[i]) continue;
            for (std::size_t j = i + 1; j < nb; ++j)
                if (alive[j] && div[i][j] && (!best || *div[i][j] < *best)) {
                    best = div[i][j];
                    bi = i;
                    bj = j;
                }
        }
        if (!best) break;
        work[bi] = merge_pair(work[bi], work[bj]);
        alive[bj] = false;
        for (std::size_t k = 0; k < nb; ++k) {
            if (!alive[k] || k == bi) continue;
            auto d = detail::base_merge_divergence(work[std::min(bi, k)], work[std::max(bi, k)], epsilon, min_samples);
            div[std::min(bi, k)][std::max(bi, k)] = d;
        }
    }

    std::vector<Cluster> survivors;
    for (std::size_t i = 0; i < nb; ++i)
        if (alive[i]) survivors.push_back(std::move(work[i]));
    const std::size_t ns = survivors.size();

    // Targets are chosen against the post-merge snapshot so the result does
    // not depend on the order rare contexts are visited in.
    std::vector<Cluster> singletons;
    std::vector<std::pair<std::size_t, Cluster>> attach;
    for (const auto& r : split.rare) {
        std::optional<std::size_t> target;
        std::optional<double> best;
        OutcomeDistribution chosen;
        for (int pass = 0; pass < 2 && !target; ++pass) {
            for (std::size_t k = 0; k < ns; ++k) {
                const auto& q = survivors[k].dist;
                if (q.width() != r.dist.width()) continue;
                const bool same = q.mask() == r.dist.mask();
                const bool superset = !same && (q.mask() & r.dist.mask()) == r.dist.mask();
                if (pass == 0 ? !same : !superset) continue;
                OutcomeDistribution p = same ? r.dist : r.dist.widened(q.mask(), r.obs);
                auto kl = kl_divergence(p, q);
                if (kl && (!best || *kl < *best)) {
                    best = kl;
                    target = k;
                    chosen = std::move(p);
                }
            }
        }
        if (target) attach.emplace_back(*target, Cluster{0, std::move(chosen), {r.id}});
        else singletons.push_back(Cluster{0, r.dist, {r.id}});
    }
    // Same as merge_pair one at a time, without re-merging member lists.
    for (auto& [k, c] : attach) {
        survivors[k].dist = OutcomeDistribution::merge(survivors[k].dist, c.dist);
        survivors[k].members.push_back(c.members.front());
    }
    for (auto& c : survivors) std::sort(c.members.begin(), c.members.end());

    std::vector<Cluster> all = std::move(survivors);
    for (auto& s : singletons) all.push_back(std::move(s));
    std::sort(all.begin(), all.end(), [](const Cluster& a, const Cluster& b) { return a.members.front() < b.members.front(); });

    ClusteredModel m;
    m.trie = split.trie;
    m.epsilon = epsilon;
    m.assignment.assign(split.trie ? split.trie->size() : 0, std::nullopt);
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i].id = static_cast<LabelId>(i);
        for (ContextId c : all[i].members) m.assignment[c] = all[i].id;
    }
    m.clusters = std::move(all);
    return m;
}

/// Log-probability of a trace under the clustering: the sum over steps of
/// log P(outcome | cluster of the prefix context). -infinity if an outcome
/// lies outside its cluster's support.
inline double trace_likelihood(const Trace& h, const ClusteredModel& model) {
    double ll = 0.0;
    ContextId node = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        auto next = model.trie->child(node, InputSymbol{h.obs_at(i), h.steps[i].action});
        if (!next) throw Error("unassigned-prefix", "trace prefix of length " + std::to_string(i + 1) + " not in model");
        node = *next;
        auto label = model.label_of(node);
        if (!label) throw Error("unassigned-prefix", "trace prefix of length " + std::to_string(i + 1) + " unassigned");
        const auto& dist = model.clusters.at(*label).dist;
        const double p = dist.prob(dist.outcome_of(h.steps[i].next_obs, h.steps[i].reward));
        if (p <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += std::log(p);
    }
    return ll;
}

/// Negative log-likelihood of the sample plus lambda * log(sum of cluster
/// support sizes). +infinity when some observed outcome has probability 0.
inline double model_loss(const ClusteredModel& model, const SampleSet& sample, double lambda) {
    if (!(lambda >= 0.0)) throw Error("invalid-argument", "lambda must be non-negative");
    double nll = 0.0;
    for (const auto& t : sample.traces) {
        const double ll = trace_likelihood(t, model);
        if (std::isinf(ll)) return std::numeric_limits<double>::infinity();
        nll -= ll;
    }
    const std::size_t supp = model.support_sum();
    return nll + (supp > 0 ? lambda * std::log(static_cast<double>(supp)) : 0.0);
}

/// Runs merge_round for every epsilon and keeps the lowest-loss model
/// (earliest epsilon on ties).
inline ClusteredModel select_model(const BaseSplit& split, const std::vector<double>& epsilons, const SampleSet& sample,
                                   double lambda, std::uint64_t min_samples) {
    if (epsilons.empty()) throw Error("invalid-argument", "epsilon grid must be non-empty");
    std::optional<ClusteredModel> best;
    for (double eps : epsilons) {
        ClusteredModel m = merge_round(split, eps, min_samples);
        m.loss = model_loss(m, sample, lambda);
        if (!best || m.loss < best->loss) best = std::move(m);
    }
    return std::move(*best);
}

/// Mealy training pair: the input symbols of a trace and, per position,
/// the cluster of the context ending there.
struct LabeledSequence {
    std::vector<InputSymbol> inputs;
    std::vector<LabelId> labels;
};

inline std::vector<LabeledSequence> label_traces(const SampleSet& sample, const ClusteredModel& model) {
    std::vector<LabeledSequence> out;
    out.reserve(sample.traces.size());
    for (const auto& t : sample.traces) {
        LabeledSequence ls;
        ContextId node = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const InputSymbol sym{t.obs_at(i), t.steps[i].action};
            auto next = model.trie->child(node, sym);
            if (!next || !model.label_of(*next))
                throw Error("unassigned-prefix", "trace prefix of length " + std::to_string(i + 1) + " unassigned");
            node = *next;
            ls.inputs.push_back(sym);
            ls.labels.push_back(*model.label_of(node));
        }
        out.push_back(std::move(ls));
    }
    return out;
}

/// One line per cluster: id, affected mask, weight, expected reward and
/// outcome probabilities as assignment/reward:prob.
inline std::string cluster_report(const ClusteredModel& model) {
    std::ostringstream out;
    out << "# epsilon=" << model.epsilon << " loss=" << model.loss << " clusters=" << model.clusters.size() << '\n';
    for (const auto& c : model.clusters) {
        const unsigned w = c.dist.width();
        out << c.id << ' ' << Observation(c.dist.mask(), w).to_string() << ' ' << c.dist.weight() << ' '
            << std::setprecision(6) << c.dist.expected_reward();
        for (const auto& [o, p] : c.dist.probs())
            out << ' ' << Observation(o.assignment, w).to_string() << '/' << o.reward << ':' << p;
        out << '\n';
    }
    return out.str();
}

} // namespace s3m
