#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "s3m/core.hpp"

namespace s3m {

/// One joint outcome of an action: the post-action assignment to the
/// affected propositions (bits outside the mask are zero) and the reward.
struct Outcome {
    std::uint64_t assignment = 0;
    double reward = 0.0;
    friend auto operator<=>(const Outcome&, const Outcome&) = default;
};

/// Distribution over Outcomes for a fixed set of affected propositions.
///
/// Empirical distributions carry raw counts and `probs == counts / weight`.
/// Analytic distributions (the ground-truth label tables) carry no counts
/// and a nominal weight of 1.
class OutcomeDistribution {
public:
    OutcomeDistribution() = default;

    static OutcomeDistribution from_counts(unsigned width, std::uint64_t mask,
                                           const std::map<Outcome, std::uint64_t>& counts) {
        OutcomeDistribution d;
        d.width_ = width;
        d.mask_ = mask;
        for (const auto& [o, c] : counts) {
            check_outcome(mask, o);
            if (c == 0) continue;
            d.counts_[o] += c;
            d.weight_ += c;
        }
        if (d.weight_ == 0) throw Error("invalid-distribution", "empirical distribution needs at least one sample");
        for (const auto& [o, c] : d.counts_)
            d.probs_[o] = static_cast<double>(c) / static_cast<double>(d.weight_);
        return d;
    }

    static OutcomeDistribution from_probabilities(unsigned width, std::uint64_t mask,
                                                  const std::map<Outcome, double>& probs) {
        OutcomeDistribution d;
        d.width_ = width;
        d.mask_ = mask;
        d.weight_ = 1;
        double total = 0.0;
        for (const auto& [o, p] : probs) {
            check_outcome(mask, o);
            if (!(p >= 0.0)) throw Error("invalid-distribution", "negative probability");
            if (p == 0.0) continue;
            d.probs_[o] += p;
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw Error("invalid-distribution", "probabilities must sum to 1");
        return d;
    }

    unsigned width() const noexcept { return width_; }
    std::uint64_t mask() const noexcept { return mask_; }
    std::uint64_t weight() const noexcept { return weight_; }
    const std::map<Outcome, double>& probs() const noexcept { return probs_; }
    const std::map<Outcome, std::uint64_t>& counts() const noexcept { return counts_; }
    bool empirical() const noexcept { return !counts_.empty(); }
    std::size_t support_size() const noexcept { return probs_.size(); }

    double prob(const Outcome& o) const {
        auto it = probs_.find(o);
        return it == probs_.end() ? 0.0 : it->second;
    }

    bool support_within(const OutcomeDistribution& other) const {
        for (const auto& [o, p] : probs_)
            if (other.prob(o) <= 0.0) return false;
        return true;
    }

    double expected_reward() const {
        double r = 0.0;
        for (const auto& [o, p] : probs_) r += p * o.reward;
        return r;
    }

    /// Weighted average of two distributions over the same propositions;
    /// weights add and raw counts are summed.
    static OutcomeDistribution merge(const OutcomeDistribution& a, const OutcomeDistribution& b) {
        if (a.mask_ != b.mask_ || a.width_ != b.width_)
            throw Error("mismatched-propositions", "cannot merge distributions over different propositions");
        OutcomeDistribution d;
        d.width_ = a.width_;
        d.mask_ = a.mask_;
        d.weight_ = a.weight_ + b.weight_;
        const double wa = static_cast<double>(a.weight_), wb = static_cast<double>(b.weight_);
        const double w = static_cast<double>(d.weight_);
        for (const auto& [o, p] : a.probs_) d.probs_[o] += wa * p / w;
        for (const auto& [o, p] : b.probs_) d.probs_[o] += wb * p / w;
        for (const auto& [o, c] : a.counts_) d.counts_[o] += c;
        for (const auto& [o, c] : b.counts_) d.counts_[o] += c;
        return d;
    }

    /// Re-expresses the distribution over a larger mask. Bits in
    /// `wider \ mask()` were never seen to change, so they take their value
    /// from `current` (the observation the action was taken in).
    OutcomeDistribution widened(std::uint64_t wider, const Observation& current) const {
        if ((wider & mask_) != mask_) throw Error("mismatched-propositions", "widened mask must contain the original");
        const std::uint64_t fixed = current.bits() & wider & ~mask_;
        OutcomeDistribution d;
        d.width_ = width_;
        d.mask_ = wider;
        d.weight_ = weight_;
        for (const auto& [o, p] : probs_) d.probs_[Outcome{o.assignment | fixed, o.reward}] += p;
        for (const auto& [o, c] : counts_) d.counts_[Outcome{o.assignment | fixed, o.reward}] += c;
        return d;
    }

    /// Outcome of a transition current -> next with reward r, seen through
    /// this distribution's mask.
    Outcome outcome_of(const Observation& next, double reward) const { return Outcome{next.bits() & mask_, reward}; }

    friend bool operator==(const OutcomeDistribution&, const OutcomeDistribution&) = default;

private:
    static void check_outcome(std::uint64_t mask, const Outcome& o) {
        if ((o.assignment & ~mask) != 0) throw Error("invalid-distribution", "outcome assigns bits outside the mask");
    }

    unsigned width_ = 1;
    std::uint64_t mask_ = 0;
    std::uint64_t weight_ = 0;
    std::map<Outcome, double> probs_;
    std::map<Outcome, std::uint64_t> counts_;
};

/// KL(p || q) in nats. nullopt when supp(p) is not inside supp(q).
inline std::optional<double> kl_divergence(const OutcomeDistribution& p, const OutcomeDistribution& q) {
    if (p.mask() != q.mask() || p.width() != q.width())
        throw Error("mismatched-propositions", "KL divergence needs distributions over the same propositions");
    double kl = 0.0;
    for (const auto& [o, pp] : p.probs()) {
        const double qq = q.prob(o);
        if (qq <= 0.0) return std::nullopt;
        kl += pp * std::log(pp / qq);
    }
    // Rounding can leave tiny negatives when p == q.
    return kl < 0.0 ? 0.0 : kl;
}

/// Label id -> outcome distribution; the Mealy output alphabet's meaning.
using LabelTable = std::map<LabelId, OutcomeDistribution>;

} // namespace s3m
