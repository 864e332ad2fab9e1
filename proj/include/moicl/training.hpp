#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "moicl/distributions.hpp"
#include "moicl/experts.hpp"
#include "moicl/partitioning.hpp"
#include "moicl/weighting.hpp"

namespace moicl {

enum class CombinationRule { kPoe, kMixture };
enum class WeightingKind { kScalar, kHypernet, kSparse };
enum class OptimizerKind { kSgd, kAdam };

std::string combination_rule_name(CombinationRule rule);
CombinationRule combination_rule_from_name(const std::string& name);

struct TrainingConfig {
    double learning_rate = 1e-4;
    std::size_t epochs = 5;
    std::size_t batch_size = 1;
    std::size_t accumulation_steps = 12;
    std::uint64_t seed = 42;
    CombinationRule combination = CombinationRule::kPoe;
    WeightingKind weighting = WeightingKind::kScalar;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    // Ablation: project expert weights to max(w, 0) after every step,
    // forbidding anti-experts.
    bool nonnegative_weights = false;
    std::size_t k_prime = 1;     // sparse only
    double imle_lambda = 1.0;    // sparse only
    HyperNetworkConfig hypernet; // hypernet only

    // Throws InvalidConfig naming the offending field.
    void validate() const;
};

struct LabeledExample {
    std::string id;
    std::string input;
    std::size_t gold = 0;  // index into the answer vocabulary
};

struct EpochStats {
    double train_loss = 0.0;
    double dev_accuracy = 0.0;
    std::vector<double> weights;  // effective expert weights at epoch end
};

// Selected epoch attains the maximum dev accuracy; ties go to the earliest.
struct TrainingTrace {
    std::vector<EpochStats> epochs;
    std::size_t selected_epoch = 0;
};

std::string trace_to_json(const TrainingTrace& trace);

// -log p(gold | D, x) under the chosen combination rule.
double nll_loss(std::span<const double> weights,
                std::span<const TokenDistribution> experts, std::size_t gold,
                CombinationRule rule = CombinationRule::kPoe);

// d(nll)/dw_i for the product-of-experts rule:
//   E_{y ~ p(.|D,x)}[log p_i(y)] - log p_i(gold).
std::vector<double> grad_scalar_poe(std::span<const double> weights,
                                    std::span<const TokenDistribution> experts,
                                    std::size_t gold);

// Closed-form mixture-rule gradient; labels clamped at kMixtureEpsilon get
// subgradient 0.
std::vector<double> grad_scalar_mixture(std::span<const double> weights,
                                        std::span<const TokenDistribution> experts,
                                        std::size_t gold);

std::vector<double> grad_scalar(std::span<const double> weights,
                                std::span<const TokenDistribution> experts, std::size_t gold,
                                CombinationRule rule);

// Central differences: (L(p + h e_i) - L(p - h e_i)) / 2h.
std::vector<double> grad_finite_difference(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> params, double h);

// Chain rule through w_i = h_phi(D_i): dL/dphi = sum_i (dL/dw_i)(dw_i/dphi).
std::vector<double> grad_hypernet(const HyperNetwork& net,
                                  const std::vector<std::string>& subset_texts,
                                  std::span<const TokenDistribution> experts,
                                  std::size_t gold, CombinationRule rule);

struct SparseGradients {
    std::vector<double> w_prime;
    std::vector<double> m;
};

// w'-path: dense gradient masked by top-k'(m). m-path: mask-difference
// estimator fed with dL/dmask_i = w'_i * dL/dw_i, perturbing the masking
// coefficients toward lower loss.
SparseGradients grad_sparse(const SparseWeighting& sw,
                            std::span<const TokenDistribution> experts, std::size_t gold,
                            CombinationRule rule);

// SGD or Adam (beta1=0.9, beta2=0.999, eps=1e-8) over one parameter vector.
// With project_nonnegative the updated parameters are clamped to max(p, 0);
// the trainer sets it only for expert-weight vectors.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);
    void step(std::vector<double>& params, std::span<const double> grad,
              bool project_nonnegative = false);

private:
    OptimizerKind kind_;
    double lr_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

using TrainedWeighting = std::variant<ScalarWeights, SparseWeighting, HyperNetwork>;

struct TrainResult {
    TrainedWeighting weighting;
    TrainingTrace trace;
};

// Effective per-expert weights for any trained weighting.
MixtureWeights effective_weights(const TrainedWeighting& weighting,
                                 const std::vector<std::string>& subset_texts);

// Expert-distribution cache, indexed [example][subset]. Expert outputs do not
// depend on the mixing weights, so they are computed once per run.
std::vector<std::vector<TokenDistribution>> expert_matrix(
    const ExpertSource& source, const std::vector<std::vector<Demonstration>>& subsets,
    const std::vector<LabeledExample>& examples, const AnswerVocabulary& vocab);

// Core loop over precomputed caches. Runs cfg.epochs epochs over a seeded
// shuffle of the training split, accumulates gradients over
// batch_size * accumulation_steps examples per optimizer step, evaluates dev
// accuracy each epoch, and returns the parameters from the best dev epoch.
TrainResult train_cached(const TrainingConfig& cfg,
                         const std::vector<std::vector<TokenDistribution>>& train_dists,
                         const std::vector<std::size_t>& train_gold,
                         const std::vector<std::vector<TokenDistribution>>& dev_dists,
                         const std::vector<std::size_t>& dev_gold,
                         const std::vector<std::string>& subset_texts);

// Full pipeline: materialize the partition, cache expert distributions for
// both splits, then run the core loop.
TrainResult train(const TrainingConfig& cfg, const ExpertSource& source,
                  const std::vector<Demonstration>& pool, const Partition& partition,
                  const AnswerVocabulary& vocab,
                  const std::vector<LabeledExample>& train_split,
                  const std::vector<LabeledExample>& dev_split);

}  // namespace moicl
