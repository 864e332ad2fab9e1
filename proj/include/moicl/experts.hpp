#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "moicl/distributions.hpp"
#include "moicl/partitioning.hpp"

namespace moicl {

// Contract for p(y | D_i, x): pure and referentially transparent, so the
// engine may evaluate experts for all queries concurrently and cache results.
class ExpertSource {
public:
    virtual ~ExpertSource() = default;
    virtual TokenDistribution evaluate(const std::string& subset_id,
                                       std::span<const Demonstration> subset,
                                       const std::string& query_id,
                                       const std::string& query_text,
                                       const AnswerVocabulary& vocab) const = 0;
};

enum class Similarity { kJaccard, kTfCosine };

// Deterministic stand-in for an LLM conditioned on a demonstration subset.
// Per label: score = alpha + sum of sim(query, x_j) over demonstrations
// labeled with it; the distribution is softmax(score / temperature).
// Demonstrations whose output is not in the vocabulary contribute to no
// label. Defaults: sharp enough that informative subsets beat uniform,
// smooth enough that gradients in w stay well-conditioned.
struct SimilarityExpertConfig {
    double temperature = 0.5;
    double alpha = 0.1;
    Similarity similarity = Similarity::kJaccard;
};

double jaccard_similarity(const std::vector<std::string>& a,
                          const std::vector<std::string>& b);
double tf_cosine_similarity(const std::vector<std::string>& a,
                            const std::vector<std::string>& b);

TokenDistribution similarity_expert_eval(const SimilarityExpertConfig& cfg,
                                         std::span<const Demonstration> subset,
                                         const std::string& query_text,
                                         const AnswerVocabulary& vocab);

class SimilarityExpert final : public ExpertSource {
public:
    explicit SimilarityExpert(SimilarityExpertConfig cfg = {}) : cfg_(cfg) {}
    TokenDistribution evaluate(const std::string& subset_id,
                               std::span<const Demonstration> subset,
                               const std::string& query_id,
                               const std::string& query_text,
                               const AnswerVocabulary& vocab) const override;

private:
    SimilarityExpertConfig cfg_;
};

// Precomputed LLM log-scores keyed by stable string ids, the offline bridge
// to real models. Scores need not be normalized.
struct ExternalLogitsTable {
    std::map<std::pair<std::string, std::string>, std::vector<double>> entries;

    std::size_t size() const { return entries.size(); }
};

// JSONL, one record per line:
//   {"query_id":"q17","subset_id":"s3","log_scores":[-0.11,-2.25]}
// Blank lines are skipped. Throws ParseError with the 1-based line number,
// DuplicateEntry on a repeated (query_id, subset_id) key.
ExternalLogitsTable load_external_logits(const std::string& path);
ExternalLogitsTable parse_external_logits(const std::string& text);

TokenDistribution external_expert_eval(const ExternalLogitsTable& table,
                                       const std::string& subset_id,
                                       const std::string& query_id,
                                       const AnswerVocabulary& vocab);

class ExternalLogitsExpert final : public ExpertSource {
public:
    explicit ExternalLogitsExpert(ExternalLogitsTable table) : table_(std::move(table)) {}
    TokenDistribution evaluate(const std::string& subset_id,
                               std::span<const Demonstration> subset,
                               const std::string& query_id,
                               const std::string& query_text,
                               const AnswerVocabulary& vocab) const override;

private:
    ExternalLogitsTable table_;
};

// Canonical subset id for the i-th subset of a partition; external logits
// files follow this convention.
std::string subset_id_for(std::size_t index);

}  // namespace moicl
