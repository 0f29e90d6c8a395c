#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "s3m/clustering.hpp"
#include "s3m/core.hpp"
#include "s3m/mealy.hpp"

namespace s3m {

/// Prefix-tree transducer of the training sequences. Node 0 is the empty
/// history; nodes are numbered breadth-first with children in symbol order,
/// so lower ids are never deeper than higher ones.
class PrefixTree {
public:
    struct Edge {
        std::uint32_t child = 0;
        LabelId label = 0;
        std::uint64_t count = 0;
    };
    struct Node {
        std::uint32_t parent = 0;
        std::uint32_t depth = 0;
        std::map<InputSymbol, Edge> edges;
    };

    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    const Node& node(std::uint32_t i) const { return nodes_.at(i); }
    std::size_t size() const noexcept { return nodes_.size(); }
    unsigned obs_width() const noexcept { return obs_width_; }
    std::uint32_t num_actions() const noexcept { return num_actions_; }

    std::string to_dot() const {
        std::ostringstream out;
        out << "digraph prefix_tree {\n  node [shape=circle];\n";
        for (std::size_t n = 0; n < nodes_.size(); ++n)
            for (const auto& [sym, e] : nodes_[n].edges)
                out << "  n" << n << " -> n" << e.child << " [label=\"" << sym.obs.to_string() << '/' << sym.action.value
                    << " : " << e.label << " (" << e.count << ")\"];\n";
        out << "}\n";
        return out.str();
    }

private:
    friend PrefixTree build_prefix_tree(const std::vector<LabeledSequence>&, std::uint32_t);
    std::vector<Node> nodes_;
    unsigned obs_width_ = 1;
    std::uint32_t num_actions_ = 1;
};

/// One path per sequence, with shared prefixes and per-edge frequencies.
/// `num_actions` of 0 means "largest action seen + 1".
inline PrefixTree build_prefix_tree(const std::vector<LabeledSequence>& labeled, std::uint32_t num_actions = 0) {
    // Insertion-order tree first, renumbered breadth-first afterwards.
    std::vector<PrefixTree::Node> raw(1);
    std::optional<unsigned> width;
    std::uint32_t max_action = 0;
    for (const auto& seq : labeled) {
        if (seq.inputs.size() != seq.labels.size())
            throw Error("invalid-argument", "every input symbol needs exactly one label");
        std::uint32_t node = 0;
        for (std::size_t i = 0; i < seq.inputs.size(); ++i) {
            const InputSymbol& sym = seq.inputs[i];
            if (!width) width = sym.obs.width();
            if (sym.obs.width() != *width) throw Error("invalid-argument", "observation width mismatch");
            max_action = std::max(max_action, sym.action.value);
            auto it = raw[node].edges.find(sym);
            if (it == raw[node].edges.end()) {
                const auto child = static_cast<std::uint32_t>(raw.size());
                raw[node].edges.emplace(sym, PrefixTree::Edge{child, seq.labels[i], 1});
                PrefixTree::Node n;
                n.parent = node;
                n.depth = raw[node].depth + 1;
                raw.push_back(std::move(n));
                node = child;
            } else {
                if (it->second.label != seq.labels[i])
                    throw Error("label-conflict", "history prefix of length " + std::to_string(i + 1) +
                                                      " labelled both " + std::to_string(it->second.label) + " and " +
                                                      std::to_string(seq.labels[i]));
                ++it->second.count;
                node = it->second.child;
            }
        }
    }

    std::vector<std::uint32_t> order{0}, renum(raw.size(), 0);
    for (std::size_t head = 0; head < order.size(); ++head)
        for (const auto& [sym, e] : raw[order[head]].edges) {
            renum[e.child] = static_cast<std::uint32_t>(order.size());
            order.push_back(e.child);
        }

    PrefixTree tree;
    tree.nodes_.resize(raw.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& src = raw[order[i]];
        auto& dst = tree.nodes_[i];
        dst.parent = renum[src.parent];
        dst.depth = src.depth;
        for (const auto& [sym, e] : src.edges) dst.edges.emplace(sym, PrefixTree::Edge{renum[e.child], e.label, e.count});
    }
    tree.obs_width_ = width.value_or(1);
    tree.num_actions_ = num_actions ? num_actions : max_action + 1;
    if (max_action >= tree.num_actions_) throw Error("invalid-argument", "action exceeds num_actions");
    return tree;
}

namespace detail {

/// Hypothesis automaton over prefix-tree nodes. Merges are folds recorded
/// in an undo log, so candidate merges can be scored and rolled back.
class MergeState {
public:
    explicit MergeState(const PrefixTree& tree) : rep_(tree.size()), edges_(tree.size()) {
        for (std::uint32_t n = 0; n < tree.size(); ++n) {
            rep_[n] = n;
            edges_[n] = tree.node(n).edges;
        }
    }

    std::uint32_t find(std::uint32_t n) const {
        while (rep_[n] != n) n = rep_[n];
        return n;
    }

    const std::map<InputSymbol, PrefixTree::Edge>& edges(std::uint32_t n) const { return edges_[n]; }

    /// Folds the subtree of `blue` into `red`. Returns the evidence score,
    /// or nullopt on an output conflict. With `keep == false` the state is
    /// restored before returning.
    /// `visited` collects every node whose edges or representative the
    /// fold read; `touched` every node a kept merge modified.
    std::optional<std::uint64_t> merge(std::uint32_t red, std::uint32_t blue, bool keep,
                                       std::vector<std::uint32_t>* visited = nullptr,
                                       std::vector<std::uint32_t>* touched = nullptr) {
        const std::size_t mark = log_.size();
        std::uint64_t score = 0;
        visited_ = visited;
        const bool ok = fold(red, blue, score);
        visited_ = nullptr;
        if (ok && keep && touched)
            for (std::size_t i = mark; i < log_.size(); ++i) touched->push_back(log_[i].node);
        if (!ok || !keep) undo(mark);
        if (keep) log_.clear();
        if (!ok) return std::nullopt;
        return score;
    }

private:
    enum class Op { rep, add_edge, add_count };
    struct Entry {
        Op op;
        std::uint32_t node;
        InputSymbol sym;
        std::uint64_t value;
    };

    bool fold(std::uint32_t r, std::uint32_t b, std::uint64_t& score) {
        if (visited_) {
            visited_->push_back(r);
            visited_->push_back(b);
        }
        log_.push_back({Op::rep, b, {}, rep_[b]});
        rep_[b] = r;
        for (const auto& [sym, eb] : edges_[b]) {
            auto it = edges_[r].find(sym);
            if (it == edges_[r].end()) {
                edges_[r].emplace(sym, eb);
                log_.push_back({Op::add_edge, r, sym, 0});
                continue;
            }
            if (it->second.label != eb.label) return false;
            score += eb.count;
            it->second.count += eb.count;
            log_.push_back({Op::add_count, r, sym, eb.count});
            const std::uint32_t cr = find(it->second.child), cb = find(eb.child);
            if (cr == cb) {
                if (visited_) visited_->push_back(cr);
            } else if (!fold(cr, cb, score)) {
                return false;
            }
        }
        return true;
    }

    void undo(std::size_t mark) {
        while (log_.size() > mark) {
            const Entry& e = log_.back();
            switch (e.op) {
            case Op::rep: rep_[e.node] = static_cast<std::uint32_t>(e.value); break;
            case Op::add_edge: edges_[e.node].erase(e.sym); break;
            case Op::add_count: edges_[e.node].at(e.sym).count -= e.value; break;
            }
            log_.pop_back();
        }
    }

    std::vector<std::uint32_t> rep_;
    std::vector<std::map<InputSymbol, PrefixTree::Edge>> edges_;
    std::vector<Entry> log_;
    std::vector<std::uint32_t>* visited_ = nullptr;
};

} // namespace detail

namespace detail {

inline MealyMachine machine_from_reds(const PrefixTree& tree, const MergeState& st, const std::vector<std::uint32_t>& red) {
    std::vector<std::uint32_t> index(tree.size(), 0);
    for (std::size_t i = 0; i < red.size(); ++i) index[red[i]] = static_cast<std::uint32_t>(i);
    std::vector<MealyMachine::Row> rows(red.size());
    for (std::size_t i = 0; i < red.size(); ++i)
        for (const auto& [sym, e] : st.edges(red[i])) rows[i][sym] = Transition{index[st.find(e.child)], e.label};
    return MealyMachine(0, tree.obs_width(), tree.num_actions(), std::move(rows));
}

/// Straightforward red-blue loop that rescores every pair each round.
/// Kept as the reference the cached learner must agree with.
inline MealyMachine edsm_learn_reference(const PrefixTree& tree) {
    if (tree.size() == 0) throw Error("invalid-argument", "prefix tree is empty");
    MergeState st(tree);
    std::vector<std::uint32_t> red{0};
    std::vector<bool> is_red(tree.size(), false);
    is_red[0] = true;

    for (;;) {
        std::vector<std::uint32_t> blue;
        for (std::uint32_t r : red)
            for (const auto& [sym, e] : st.edges(r)) {
                const std::uint32_t c = st.find(e.child);
                if (!is_red[c]) blue.push_back(c);
            }
        if (blue.empty()) break;
        std::sort(blue.begin(), blue.end());
        blue.erase(std::unique(blue.begin(), blue.end()), blue.end());

        struct Candidate {
            std::uint64_t score;
            std::size_t red_index;
            std::uint32_t blue;
        };
        std::optional<Candidate> best;
        std::optional<std::uint32_t> promote;
        for (std::uint32_t b : blue) {
            bool mergeable = false;
            for (std::size_t ri = 0; ri < red.size(); ++ri) {
                auto score = st.merge(red[ri], b, false);
                if (!score) continue;
                mergeable = true;
                if (!best || *score > best->score || (*score == best->score && ri < best->red_index))
                    best = Candidate{*score, ri, b};
            }
            if (!mergeable) {
                promote = b;
                break;
            }
        }
        if (promote) {
            red.push_back(*promote);
            is_red[*promote] = true;
            continue;
        }
        st.merge(red[best->red_index], best->blue, true);
    }
    return machine_from_reds(tree, st, red);
}

} // namespace detail

/// Red-blue evidence-driven state merging. Each round scores every
/// (red, blue) pair by the number of label observations the fold
/// consolidates; the first blue node that conflicts with every red node is
/// promoted, otherwise the best-scoring merge is applied (ties: lowest red
/// index, then lowest blue id). The result is consistent with every
/// training label by construction and partial where data is missing.
///
/// Pair scores are cached. A fold's outcome depends only on the nodes it
/// read, so applying a merge invalidates exactly the cached pairs that read
/// a node the merge modified.
inline MealyMachine edsm_learn(const PrefixTree& tree) {
    if (tree.size() == 0) throw Error("invalid-argument", "prefix tree is empty");
    detail::MergeState st(tree);
    std::vector<std::uint32_t> red{0};
    std::vector<bool> is_red(tree.size(), false);
    is_red[0] = true;

    struct PairScore {
        bool valid = false;
        bool ok = false;
        std::uint64_t score = 0;
        std::uint32_t gen = 0;
    };
    struct BlueInfo {
        std::vector<PairScore> pairs;  // by red index
        bool mergeable = false;
        std::uint64_t best_score = 0;
        std::size_t best_red = 0;
    };
    struct Watch {
        std::uint32_t blue;
        std::uint32_t red_index;
        std::uint32_t gen;
    };
    std::map<std::uint32_t, BlueInfo> blues;
    std::set<std::uint32_t> dirty;
    std::vector<std::vector<Watch>> watchers(tree.size());
    std::vector<std::uint32_t> visited;

    auto add_blues_of = [&](std::uint32_t r) {
        for (const auto& [sym, e] : st.edges(r)) {
            const std::uint32_t c = st.find(e.child);
            if (is_red[c]) continue;
            auto [it, fresh] = blues.try_emplace(c);
            if (fresh) {
                it->second.pairs.resize(red.size());
                dirty.insert(c);
            }
        }
    };
    add_blues_of(0);

    for (;;) {
        for (std::uint32_t b : dirty) {
            auto it = blues.find(b);
            if (it == blues.end()) continue;
            BlueInfo& info = it->second;
            info.mergeable = false;
            for (std::size_t ri = 0; ri < red.size(); ++ri) {
                PairScore& p = info.pairs[ri];
                if (!p.valid) {
                    visited.clear();
                    auto score = st.merge(red[ri], b, false, &visited);
                    p.valid = true;
                    p.ok = score.has_value();
                    p.score = score.value_or(0);
                    ++p.gen;
                    std::sort(visited.begin(), visited.end());
                    visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
                    for (std::uint32_t x : visited)
                        watchers[x].push_back(Watch{b, static_cast<std::uint32_t>(ri), p.gen});
                }
                if (p.ok && (!info.mergeable || p.score > info.best_score)) {
                    info.mergeable = true;
                    info.best_score = p.score;
                    info.best_red = ri;
                }
            }
        }
        dirty.clear();
        if (blues.empty()) break;

        std::optional<std::uint32_t> promote, best;
        for (const auto& [b, info] : blues) {
            if (!info.mergeable) {
                promote = b;
                break;
            }
            if (!best) {
                best = b;
                continue;
            }
            const BlueInfo& cur = blues.at(*best);
            if (info.best_score > cur.best_score || (info.best_score == cur.best_score && info.best_red < cur.best_red))
                best = b;
        }

        if (promote) {
            const std::uint32_t b = *promote;
            blues.erase(b);
            red.push_back(b);
            is_red[b] = true;
            for (auto& [c, info] : blues) {
                info.pairs.emplace_back();
                dirty.insert(c);
            }
            add_blues_of(b);
            continue;
        }

        const std::uint32_t b = *best;
        const std::uint32_t r = red[blues.at(b).best_red];
        blues.erase(b);
        std::vector<std::uint32_t> touched;
        st.merge(r, b, true, nullptr, &touched);
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (std::uint32_t x : touched) {
            for (const Watch& w : watchers[x]) {
                auto it = blues.find(w.blue);
                if (it == blues.end()) continue;
                PairScore& p = it->second.pairs[w.red_index];
                if (p.valid && p.gen == w.gen) {
                    p.valid = false;
                    dirty.insert(w.blue);
                }
            }
            watchers[x].clear();
        }
        for (std::uint32_t x : touched)
            if (is_red[x]) add_blues_of(x);
    }
    return detail::machine_from_reds(tree, st, red);
}

/// True iff the machine reproduces every training label.
inline bool consistency_check(const MealyMachine& m, const std::vector<LabeledSequence>& labeled) {
    for (const auto& seq : labeled) {
        StateIndex s = m.initial_state();
        for (std::size_t i = 0; i < seq.inputs.size(); ++i) {
            auto tr = mealy_step(m, s, seq.inputs[i]);
            if (!tr || tr->label != seq.labels[i]) return false;
            s = tr->next;
        }
    }
    return true;
}

} // namespace s3m
