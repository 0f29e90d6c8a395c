#pragma once

#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "s3m/core.hpp"

namespace s3m {

struct Transition {
    StateIndex next = 0;
    LabelId label = 0;
    friend bool operator==(const Transition&, const Transition&) = default;
};

class UndefinedTransition : public Error {
public:
    UndefinedTransition(std::size_t position, StateIndex state, const InputSymbol& sym)
        : Error("undefined-transition", "no transition from state " + std::to_string(state) + " on " +
                                            sym.obs.to_string() + "/" + std::to_string(sym.action.value) +
                                            " at position " + std::to_string(position)),
          position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// Deterministic, possibly partial Mealy machine over (observation, action)
/// inputs emitting opaque label ids. Transitions and outputs are stored
/// together so they are always defined on the same (state, symbol) pairs.
/// Immutable once built; the constructor rejects dangling targets and
/// unreachable states.
class MealyMachine {
public:
    using Row = std::map<InputSymbol, Transition>;

    MealyMachine(StateIndex initial, unsigned obs_width, std::uint32_t num_actions, std::vector<Row> rows)
        : initial_(initial), obs_width_(obs_width), num_actions_(num_actions), rows_(std::move(rows)) {
        validate();
    }

    std::size_t num_states() const noexcept { return rows_.size(); }
    StateIndex initial_state() const noexcept { return initial_; }
    unsigned obs_width() const noexcept { return obs_width_; }
    std::uint32_t num_actions() const noexcept { return num_actions_; }
    const Row& row(StateIndex s) const { return rows_.at(s); }
    const std::vector<Row>& rows() const noexcept { return rows_; }

    std::size_t num_defined() const noexcept {
        std::size_t n = 0;
        for (const auto& r : rows_) n += r.size();
        return n;
    }

    friend bool operator==(const MealyMachine&, const MealyMachine&) = default;

private:
    void validate() const {
        if (rows_.empty()) throw Error("invalid-machine", "machine needs at least one state");
        if (initial_ >= rows_.size()) throw Error("invalid-machine", "initial state out of range");
        if (num_actions_ == 0) throw Error("invalid-machine", "machine needs at least one action");
        for (const auto& row : rows_)
            for (const auto& [sym, tr] : row) {
                if (tr.next >= rows_.size())
                    throw Error("invalid-machine", "transition target " + std::to_string(tr.next) + " out of range");
                if (sym.obs.width() != obs_width_) throw Error("invalid-machine", "observation width mismatch");
                if (sym.action.value >= num_actions_) throw Error("invalid-machine", "action out of range");
            }
        std::vector<bool> seen(rows_.size(), false);
        std::vector<StateIndex> stack{initial_};
        seen[initial_] = true;
        while (!stack.empty()) {
            StateIndex s = stack.back();
            stack.pop_back();
            for (const auto& [sym, tr] : rows_[s])
                if (!seen[tr.next]) {
                    seen[tr.next] = true;
                    stack.push_back(tr.next);
                }
        }
        for (std::size_t s = 0; s < seen.size(); ++s)
            if (!seen[s]) throw Error("invalid-machine", "state " + std::to_string(s) + " is unreachable");
    }

    StateIndex initial_;
    unsigned obs_width_;
    std::uint32_t num_actions_;
    std::vector<Row> rows_;
};

/// Accumulates transitions for a machine; `build` validates.
class MealyBuilder {
public:
    MealyBuilder(std::size_t num_states, unsigned obs_width, std::uint32_t num_actions, StateIndex initial = 0)
        : rows_(num_states), initial_(initial), obs_width_(obs_width), num_actions_(num_actions) {}

    MealyBuilder& set(StateIndex from, InputSymbol sym, StateIndex to, LabelId label) {
        rows_.at(from)[sym] = Transition{to, label};
        return *this;
    }

    MealyMachine build() && { return MealyMachine(initial_, obs_width_, num_actions_, std::move(rows_)); }

private:
    std::vector<MealyMachine::Row> rows_;
    StateIndex initial_;
    unsigned obs_width_;
    std::uint32_t num_actions_;
};

inline std::optional<Transition> mealy_step(const MealyMachine& m, StateIndex state, const InputSymbol& sym) {
    const auto& row = m.row(state);
    auto it = row.find(sym);
    if (it == row.end()) return std::nullopt;
    return it->second;
}

/// Output labels along `syms` from the initial state. Throws
/// UndefinedTransition naming the first position the machine cannot read.
inline std::vector<LabelId> mealy_run(const MealyMachine& m, const std::vector<InputSymbol>& syms) {
    std::vector<LabelId> out;
    out.reserve(syms.size());
    StateIndex s = m.initial_state();
    for (std::size_t i = 0; i < syms.size(); ++i) {
        auto tr = mealy_step(m, s, syms[i]);
        if (!tr) throw UndefinedTransition(i, s, syms[i]);
        out.push_back(tr->label);
        s = tr->next;
    }
    return out;
}

// Text format:
//   mealy <num_states> <initial> <obs_width> <num_actions>
//   <state> <obs-bits> <action> -> <next_state> <label>
inline std::string serialize_mealy(const MealyMachine& m) {
    std::ostringstream out;
    out << "mealy " << m.num_states() << ' ' << m.initial_state() << ' ' << m.obs_width() << ' ' << m.num_actions()
        << '\n';
    for (std::size_t s = 0; s < m.num_states(); ++s)
        for (const auto& [sym, tr] : m.row(static_cast<StateIndex>(s)))
            out << s << ' ' << sym.obs.to_string() << ' ' << sym.action.value << " -> " << tr.next << ' ' << tr.label
                << '\n';
    return out.str();
}

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("parse-error", "line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

inline MealyMachine deserialize_mealy(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            return true;
        }
        return false;
    };

    if (!next_line()) throw ParseError(lineno, "missing header");
    std::istringstream header(line);
    std::string magic;
    long long n = -1, init = -1, width = -1, actions = -1;
    if (!(header >> magic >> n >> init >> width >> actions) || magic != "mealy")
        throw ParseError(lineno, "expected 'mealy <num_states> <initial> <obs_width> <num_actions>'");
    if (n < 1 || init < 0 || init >= n || width < 1 || width > 64 || actions < 1)
        throw ParseError(lineno, "header values out of range");

    std::vector<MealyMachine::Row> rows(static_cast<std::size_t>(n));
    while (next_line()) {
        std::istringstream ls(line);
        long long from = -1, action = -1, to = -1, label = -1;
        std::string bits, arrow, extra;
        if (!(ls >> from >> bits >> action >> arrow >> to >> label) || arrow != "->" || (ls >> extra))
            throw ParseError(lineno, "expected '<state> <obs> <action> -> <next> <label>'");
        if (from < 0 || from >= n) throw ParseError(lineno, "source state out of range");
        if (to < 0 || to >= n) throw ParseError(lineno, "transition target out of range");
        if (action < 0 || action >= actions) throw ParseError(lineno, "action out of range");
        if (label < 0 || label > std::numeric_limits<LabelId>::max()) throw ParseError(lineno, "label out of range");
        if (bits.size() != static_cast<std::size_t>(width)) throw ParseError(lineno, "observation width mismatch");
        Observation obs;
        try {
            obs = Observation::parse(bits);
        } catch (const Error& e) {
            throw ParseError(lineno, e.what());
        }
        InputSymbol sym{obs, ActionId{static_cast<std::uint32_t>(action)}};
        auto& row = rows[static_cast<std::size_t>(from)];
        if (row.count(sym)) throw ParseError(lineno, "duplicate transition");
        row[sym] = Transition{static_cast<StateIndex>(to), static_cast<LabelId>(label)};
    }
    try {
        return MealyMachine(static_cast<StateIndex>(init), static_cast<unsigned>(width),
                            static_cast<std::uint32_t>(actions), std::move(rows));
    } catch (const Error& e) {
        throw ParseError(lineno, e.what());
    }
}

inline MealyMachine deserialize_mealy(const std::string& text) {
    std::istringstream in(text);
    return deserialize_mealy(in);
}

inline std::string export_dot(const MealyMachine& m) {
    std::ostringstream out;
    out << "digraph mealy {\n  rankdir=LR;\n  node [shape=circle];\n";
    out << "  start [shape=point];\n  start -> s" << m.initial_state() << ";\n";
    for (std::size_t s = 0; s < m.num_states(); ++s)
        for (const auto& [sym, tr] : m.row(static_cast<StateIndex>(s)))
            out << "  s" << s << " -> s" << tr.next << " [label=\"" << sym.obs.to_string() << '/'
                << sym.action.value << " : " << tr.label << "\"];\n";
    out << "}\n";
    return out.str();
}

} // namespace s3m
