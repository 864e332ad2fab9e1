#include "moicl/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace moicl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_all_finite(std::span<const double> xs, const char* op) {
    for (double x : xs) {
        if (!std::isfinite(x)) {
            throw NonFiniteInput(std::string(op) + ": input contains NaN or infinity");
        }
    }
}

}  // namespace

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> labels)
    : labels_(std::move(labels)) {
    if (labels_.size() < 2) {
        throw InvalidSpec("AnswerVocabulary: need at least 2 labels");
    }
    std::unordered_set<std::string> seen;
    for (const auto& l : labels_) {
        if (!seen.insert(l).second) {
            throw InvalidSpec("AnswerVocabulary: duplicate label '" + l + "'");
        }
    }
}

bool AnswerVocabulary::contains(const std::string& label) const {
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::size_t AnswerVocabulary::index_of(const std::string& label) const {
    const auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) {
        throw Error("AnswerVocabulary: unknown label '" + label + "'");
    }
    return static_cast<std::size_t>(it - labels_.begin());
}

double log_sum_exp(std::span<const double> xs) {
    double max = kNegInf;
    for (double x : xs) max = std::max(max, x);
    if (max == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double x : xs) sum += std::exp(x - max);
    return max + std::log(sum);
}

TokenDistribution TokenDistribution::from_log_scores(std::span<const double> raw_scores) {
    return log_normalize(raw_scores);
}

TokenDistribution TokenDistribution::from_probabilities(std::span<const double> probs) {
    require_all_finite(probs, "TokenDistribution::from_probabilities");
    std::vector<double> logp(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        logp[i] = std::log(std::max(probs[i], kProbabilityFloor));
    }
    return log_normalize(logp);
}

double TokenDistribution::prob(std::size_t i) const {
    return std::exp(logp_.at(i));
}

std::vector<double> TokenDistribution::probabilities() const {
    std::vector<double> p(logp_.size());
    for (std::size_t i = 0; i < logp_.size(); ++i) p[i] = std::exp(logp_[i]);
    return p;
}

TokenDistribution log_normalize(std::span<const double> raw_scores) {
    if (raw_scores.size() < 2) {
        throw DimensionMismatch("log_normalize: vocabulary size must be >= 2");
    }
    require_all_finite(raw_scores, "log_normalize");

    const double lse = log_sum_exp(raw_scores);
    std::vector<double> logp(raw_scores.size());
    const double log_floor = std::log(kProbabilityFloor);
    for (std::size_t i = 0; i < raw_scores.size(); ++i) {
        logp[i] = std::max(raw_scores[i] - lse, log_floor);
    }
    // Second pass keeps logsumexp(logp) == 0 exactly when the floor fired.
    const double correction = log_sum_exp(logp);
    for (double& v : logp) v -= correction;
    return TokenDistribution(std::move(logp));
}

namespace {

std::size_t check_combination_inputs(std::span<const double> weights,
                                     std::span<const TokenDistribution> experts) {
    if (weights.size() != experts.size() || experts.empty()) {
        throw DimensionMismatch("combine: need len(weights) == len(experts) >= 1");
    }
    require_all_finite(weights, "combine(weights)");
    const std::size_t vocab = experts[0].size();
    for (const auto& e : experts) {
        if (e.size() != vocab) {
            throw DimensionMismatch("combine: experts disagree on vocabulary size");
        }
    }
    return vocab;
}

}  // namespace

TokenDistribution poe_combine(std::span<const double> weights,
                              std::span<const TokenDistribution> experts) {
    const std::size_t vocab = check_combination_inputs(weights, experts);
    std::vector<double> scores(vocab, 0.0);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const auto& logp = experts[i].logp();
        for (std::size_t y = 0; y < vocab; ++y) {
            scores[y] += weights[i] * logp[y];
        }
    }
    for (double s : scores) {
        if (!std::isfinite(s)) {
            throw DegenerateDistribution("poe_combine: combined score overflowed");
        }
    }
    return log_normalize(scores);
}

TokenDistribution mixture_combine(std::span<const double> weights,
                                  std::span<const TokenDistribution> experts) {
    const std::size_t vocab = check_combination_inputs(weights, experts);
    std::vector<double> sums(vocab, 0.0);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const auto& logp = experts[i].logp();
        for (std::size_t y = 0; y < vocab; ++y) {
            sums[y] += weights[i] * std::exp(logp[y]);
        }
    }
    const bool any_positive =
        std::any_of(sums.begin(), sums.end(), [](double s) { return s > 0.0; });
    if (!any_positive) {
        throw DegenerateDistribution("mixture_combine: every weighted sum is <= 0");
    }
    std::vector<double> log_clamped(vocab);
    for (std::size_t y = 0; y < vocab; ++y) {
        log_clamped[y] = std::log(std::max(sums[y], kMixtureEpsilon));
    }
    return log_normalize(log_clamped);
}

std::size_t predict_label(const TokenDistribution& dist) {
    const auto& logp = dist.logp();
    std::size_t best = 0;
    for (std::size_t i = 1; i < logp.size(); ++i) {
        if (logp[i] > logp[best]) best = i;
    }
    return best;
}

}  // namespace moicl
