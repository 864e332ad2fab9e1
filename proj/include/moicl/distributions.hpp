#pragma once

#include <span>
#include <string>
#include <vector>

#include "moicl/errors.hpp"

namespace moicl {

// Probabilities are floored here before any log is taken, so a negatively
// weighted expert can never turn a zero probability into +/-inf.
inline constexpr double kProbabilityFloor = 1e-12;

// Clamp for non-positive weighted sums in mixture_combine; negative weights
// make the plain probability mixture undefined, the clamp keeps the output a
// valid distribution while preserving the order of positive entries.
inline constexpr double kMixtureEpsilon = 1e-12;

// Ordered verbalizer set. The label order is fixed for the lifetime of a run;
// every TokenDistribution over this vocabulary follows it.
class AnswerVocabulary {
public:
    explicit AnswerVocabulary(std::vector<std::string> labels);

    std::size_t size() const { return labels_.size(); }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    const std::vector<std::string>& labels() const { return labels_; }

    bool contains(const std::string& label) const;
    // Throws Error if the label is unknown.
    std::size_t index_of(const std::string& label) const;

    bool operator==(const AnswerVocabulary&) const = default;

private:
    std::vector<std::string> labels_;
};

// Normalized next-token distribution over a finite answer vocabulary, kept in
// the log domain. Invariants: logsumexp(logp) == 0 within 1e-9 and every
// entry is finite (see kProbabilityFloor).
class TokenDistribution {
public:
    // Normalizes raw log scores: logp = raw - logsumexp(raw).
    static TokenDistribution from_log_scores(std::span<const double> raw_scores);

    // Floors at kProbabilityFloor, takes logs, normalizes.
    static TokenDistribution from_probabilities(std::span<const double> probs);

    const std::vector<double>& logp() const { return logp_; }
    std::size_t size() const { return logp_.size(); }

    double prob(std::size_t i) const;
    std::vector<double> probabilities() const;

private:
    friend TokenDistribution log_normalize(std::span<const double>);
    explicit TokenDistribution(std::vector<double> logp) : logp_(std::move(logp)) {}
    std::vector<double> logp_;
};

// Per-expert mixing weights; entries may be negative (anti-experts).
using MixtureWeights = std::vector<double>;

// Stable log(sum(exp(xs))). Returns -inf for an all -inf input.
double log_sum_exp(std::span<const double> xs);

// raw -> raw - logsumexp(raw). Throws NonFiniteInput on NaN/inf entries and
// DimensionMismatch when fewer than two entries are given.
TokenDistribution log_normalize(std::span<const double> raw_scores);

// Log-domain product of experts:
//   p(y) proportional to exp(sum_i w_i * log p_i(y)).
TokenDistribution poe_combine(std::span<const double> weights,
                              std::span<const TokenDistribution> experts);

// Probability-domain mixture:
//   p(y) proportional to max(eps, sum_i w_i * p_i(y)).
TokenDistribution mixture_combine(std::span<const double> weights,
                                  std::span<const TokenDistribution> experts);

// Greedy decoding over the answer vocabulary; ties break to the lowest index.
std::size_t predict_label(const TokenDistribution& dist);

}  // namespace moicl
