#pragma once

#include <bit>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace s3m {

/// Base of every error thrown by the library. `kind()` names the failure
/// class (e.g. "undefined-transition", "parse-error") so callers and the CLI
/// can report it without string matching on the message.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

using LabelId = std::uint32_t;
using StateIndex = std::uint32_t;

/// Human-readable names for the Boolean propositions of a domain.
class PropositionSet {
public:
    explicit PropositionSet(std::vector<std::string> names) : names_(std::move(names)) {
        if (names_.empty()) throw Error("invalid-config", "proposition set must be non-empty");
        if (names_.size() > 64) throw Error("invalid-config", "at most 64 propositions are supported");
        std::set<std::string> seen(names_.begin(), names_.end());
        if (seen.size() != names_.size()) throw Error("invalid-config", "proposition names must be distinct");
    }
    std::size_t count() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

private:
    std::vector<std::string> names_;
};

/// Assignment to the domain's propositions. Bit i of `bits` holds
/// proposition i; bits at positions >= width are always zero.
///
/// Ordering is lexicographic on the bit string read from proposition 0
/// upwards (after width), which is what `to_string` prints.
class Observation {
public:
    constexpr Observation() = default;
    constexpr Observation(std::uint64_t bits, unsigned width) : bits_(bits), width_(width) {
        if (width == 0 || width > 64) throw Error("invalid-observation", "width must be in [1, 64]");
        if (width < 64 && (bits >> width) != 0) throw Error("invalid-observation", "bits set beyond width");
    }

    constexpr std::uint64_t bits() const noexcept { return bits_; }
    constexpr unsigned width() const noexcept { return width_; }
    constexpr bool test(unsigned i) const noexcept { return ((bits_ >> i) & 1u) != 0; }

    /// Mask with every proposition bit set.
    constexpr std::uint64_t full_mask() const noexcept {
        return width_ >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << width_) - 1);
    }

    /// Copy with the bits in `mask` replaced by those of `assignment`.
    constexpr Observation with(std::uint64_t mask, std::uint64_t assignment) const {
        return Observation((bits_ & ~mask) | (assignment & mask), width_);
    }

    std::string to_string() const {
        std::string s(width_, '0');
        for (unsigned i = 0; i < width_; ++i)
            if (test(i)) s[i] = '1';
        return s;
    }

    static Observation parse(std::string_view text) {
        if (text.empty() || text.size() > 64) throw Error("parse-error", "observation must have 1..64 bits");
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < text.size(); ++i) {
            if (text[i] == '1') bits |= std::uint64_t{1} << i;
            else if (text[i] != '0') throw Error("parse-error", "observation bits must be 0/1: " + std::string(text));
        }
        return Observation(bits, static_cast<unsigned>(text.size()));
    }

    friend constexpr bool operator==(const Observation&, const Observation&) = default;
    friend constexpr std::strong_ordering operator<=>(const Observation& a, const Observation& b) {
        if (a.width_ != b.width_) return a.width_ <=> b.width_;
        std::uint64_t diff = a.bits_ ^ b.bits_;
        if (diff == 0) return std::strong_ordering::equal;
        unsigned first = static_cast<unsigned>(std::countr_zero(diff));
        return a.test(first) ? std::strong_ordering::greater : std::strong_ordering::less;
    }

private:
    std::uint64_t bits_ = 0;
    unsigned width_ = 1;
};

struct ActionId {
    std::uint32_t value = 0;
    friend constexpr auto operator<=>(const ActionId&, const ActionId&) = default;
};

struct Step {
    ActionId action;
    double reward = 0.0;
    Observation next_obs;
    friend bool operator==(const Step&, const Step&) = default;
};

/// o0, a1, r1, o1, ..., ak, rk, ok.
struct Trace {
    Observation initial_obs;
    std::vector<Step> steps;

    /// Observation before step i (o_i), i in [0, steps.size()].
    const Observation& obs_at(std::size_t i) const { return i == 0 ? initial_obs : steps[i - 1].next_obs; }
    std::size_t size() const noexcept { return steps.size(); }
    friend bool operator==(const Trace&, const Trace&) = default;
};

/// Mealy input letter: the current observation paired with the action taken.
struct InputSymbol {
    Observation obs;
    ActionId action;
    friend constexpr auto operator<=>(const InputSymbol&, const InputSymbol&) = default;
    friend constexpr bool operator==(const InputSymbol&, const InputSymbol&) = default;
};

/// Input symbols (o0,a1), (o1,a2), ... of a trace.
inline std::vector<InputSymbol> input_symbols(const Trace& t) {
    std::vector<InputSymbol> out;
    out.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back({t.obs_at(i), t.steps[i].action});
    return out;
}

class Discount {
public:
    explicit Discount(double gamma) : gamma_(gamma) {
        if (!(gamma > 0.0 && gamma < 1.0)) throw Error("invalid-config", "discount must lie in (0, 1)");
    }
    double gamma() const noexcept { return gamma_; }

private:
    double gamma_;
};

/// Sum of gamma^i * rewards[i], i from 0.
inline double discounted_return(const std::vector<double>& rewards, Discount cfg) {
    double total = 0.0, weight = 1.0;
    for (double r : rewards) {
        total += weight * r;
        weight *= cfg.gamma();
    }
    return total;
}

} // namespace s3m
