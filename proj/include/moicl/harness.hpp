#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moicl/distributions.hpp"
#include "moicl/experts.hpp"
#include "moicl/partitioning.hpp"
#include "moicl/training.hpp"

namespace moicl {

// Knobs for the seeded synthetic classification/short-answer tasks. Each
// (label, topic) cell owns a disjoint set of topic tokens; inputs are bags of
// topic tokens plus distractors drawn from a vocabulary shared across tasks,
// the way content words differ between domains while function words do not.
struct SyntheticTaskSpec {
    std::vector<std::string> labels = {"alpha", "beta"};
    std::size_t topics_per_label = 3;
    std::size_t tokens_per_topic = 4;
    std::size_t distractor_vocab_size = 30;
    std::size_t topic_tokens_per_input = 3;
    std::size_t distractors_per_input = 3;
    std::size_t n_demonstrations = 30;
    std::size_t train_size = 240;
    std::size_t dev_size = 60;
    std::size_t test_size = 200;
    // Perturbation knobs; zero disables the corresponding injection.
    double ood_fraction = 0.0;
    std::size_t imbalance_minority_count = 0;
    std::size_t noised_count = 0;
    std::vector<std::string> noise_answers = {"yes", "no", "foo", "bar"};
    std::uint64_t seed = 42;
    // Topic tokens are prefixed with this; two tasks with different
    // namespaces share no topic tokens.
    std::string token_namespace;

    void validate() const;
};

struct SyntheticTask {
    std::vector<Demonstration> pool;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> dev;
    std::vector<LabeledExample> test;
    AnswerVocabulary vocab;
};

// Clean task generation; the perturbations below are applied separately.
// Pool demonstrations cycle (label, topic) cells so coverage is even;
// splits draw labels and topics uniformly. All ids are disjoint.
SyntheticTask gen_synthetic_task(const SyntheticTaskSpec& spec);

// Answer vocabulary implied by a spec: labels first, then any noise answers
// not already present (only when noise is enabled).
AnswerVocabulary vocab_for(const SyntheticTaskSpec& spec);

// Replaces ceil(p * n) seeded-chosen demonstrations with examples generated
// from `ood_task` (same labels, disjoint topic tokens); replaced items keep
// their ids and are tagged ood.
std::vector<Demonstration> inject_ood(const std::vector<Demonstration>& pool, double p,
                                      const SyntheticTaskSpec& ood_task, std::uint64_t seed);

// Rebuilds the pool so exactly minority_count demonstrations carry
// labels[minority_label]; excess minority demonstrations are replaced with
// freshly generated majority-label ones (ids kept). Kept minority items are
// tagged imbalance_minority.
std::vector<Demonstration> inject_imbalance(const std::vector<Demonstration>& pool,
                                            std::size_t minority_count,
                                            std::size_t minority_label,
                                            const SyntheticTaskSpec& task, std::uint64_t seed);

// Replaces the outputs of noised_count seeded-chosen demonstrations with a
// seeded-uniform pick from noise_answers; chosen items are tagged noised.
std::vector<Demonstration> inject_noise(const std::vector<Demonstration>& pool,
                                        std::size_t noised_count,
                                        const std::vector<std::string>& noise_answers,
                                        std::uint64_t seed);

// Fraction of exact label-index matches.
double evaluate_accuracy(const std::vector<std::size_t>& predictions,
                         const std::vector<std::size_t>& gold);

// Fraction of normalized-string matches (lowercase, outer whitespace
// stripped).
double evaluate_em(const std::vector<std::string>& predictions,
                   const std::vector<std::string>& gold);
std::string normalize_answer(const std::string& text);

// Predictions for an evaluation split under fixed mixture weights.
struct EvalOutcome {
    std::vector<std::size_t> predictions;
    double accuracy = 0.0;
};

EvalOutcome evaluate_mixture(const ExpertSource& source, const std::vector<Demonstration>& pool,
                             const Partition& partition, std::span<const double> weights,
                             CombinationRule rule, const std::vector<LabeledExample>& split,
                             const AnswerVocabulary& vocab);

// Concat-based baseline: one expert conditioned on the whole pool
// (equivalently the k=1, w=[1] mixture).
EvalOutcome run_concat_baseline(const ExpertSource& source,
                                const std::vector<Demonstration>& pool,
                                const std::vector<LabeledExample>& split,
                                const AnswerVocabulary& vocab);

// Ensemble baseline: one expert per demonstration, product of experts with
// every weight 1.
EvalOutcome run_ensemble_baseline(const ExpertSource& source,
                                  const std::vector<Demonstration>& pool,
                                  const std::vector<LabeledExample>& split,
                                  const AnswerVocabulary& vocab);

struct RandomSearchOutcome {
    std::vector<std::string> best_subset;  // demonstration ids, pool order
    std::size_t best_candidate = 0;
    double best_train_score = 0.0;
    double eval_score = 0.0;
};

// Draws k_candidates random subsets (size uniform in [1, n]), scores each as
// a concat expert on the training split, and evaluates the best (ties to the
// lowest candidate index) on the evaluation split.
RandomSearchOutcome run_random_search(const ExpertSource& source,
                                      const std::vector<Demonstration>& pool,
                                      std::size_t k_candidates,
                                      const std::vector<LabeledExample>& train_split,
                                      const std::vector<LabeledExample>& eval_split,
                                      const AnswerVocabulary& vocab, std::uint64_t seed);

enum class CostMethod { kConcat, kEnsemble, kMoiclUniform, kMoiclScalar, kMoiclHypernet };

CostMethod cost_method_from_name(const std::string& name);

// Inference-cost inputs in abstract compute units.
struct CostModelInput {
    std::size_t n = 1;
    std::size_t k = 1;
    double c_llm = 1.0;
    double c_hyper = 1.0;
    CostMethod method = CostMethod::kConcat;
};

// Analytic per-query inference cost:
//   concat:    (n+1)^2 * C_LLM
//   ensemble:  n * (1+1)^2 * C_LLM
//   moicl:     k * (n/k+1)^2 * C_LLM   (+ n^2 * C_Hyper with a hyper-network)
double cost_model(const CostModelInput& input);

}  // namespace moicl
