#include "moicl/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "moicl/rng.hpp"

namespace moicl {

void SyntheticTaskSpec::validate() const {
    if (labels.size() < 2) throw InvalidSpec("task.labels: need at least 2 labels");
    if (topics_per_label < 1) throw InvalidSpec("task.topics_per_label: must be >= 1");
    if (tokens_per_topic < 1) throw InvalidSpec("task.tokens_per_topic: must be >= 1");
    if (topic_tokens_per_input < 1 || topic_tokens_per_input > tokens_per_topic) {
        throw InvalidSpec("task.topic_tokens_per_input: need 1 <= value <= tokens_per_topic");
    }
    if (distractors_per_input > distractor_vocab_size) {
        throw InvalidSpec("task.distractors_per_input: must be <= distractor_vocab_size");
    }
    if (n_demonstrations < 1) throw InvalidSpec("task.n_demonstrations: must be >= 1");
    if (train_size < 1 || dev_size < 1 || test_size < 1) {
        throw InvalidSpec("task.splits: train/dev/test sizes must be >= 1");
    }
    if (ood_fraction < 0.0 || ood_fraction > 1.0) {
        throw InvalidSpec("task.ood_fraction: must be in [0, 1]");
    }
    if (noised_count > n_demonstrations) {
        throw InvalidSpec("task.noised_count: must be <= n_demonstrations");
    }
    if (noised_count > 0 && noise_answers.empty()) {
        throw InvalidSpec("task.noise_answers: must be nonempty when noised_count > 0");
    }
    if (imbalance_minority_count >= n_demonstrations && imbalance_minority_count != 0) {
        throw InvalidSpec("task.imbalance_minority_count: must be < n_demonstrations");
    }
}

namespace {

std::string topic_token(const SyntheticTaskSpec& spec, std::size_t label, std::size_t topic,
                        std::size_t word) {
    return spec.token_namespace + "t" + std::to_string(label) + "x" + std::to_string(topic) +
           "w" + std::to_string(word);
}

std::string distractor_token(std::size_t i) { return "d" + std::to_string(i); }

// Bag of topic tokens for one (label, topic) cell plus shared distractors.
std::string make_input(const SyntheticTaskSpec& spec, std::size_t label, std::size_t topic,
                       Rng& rng) {
    const auto topic_picks =
        rng.sample_without_replacement(spec.tokens_per_topic, spec.topic_tokens_per_input);
    const auto distractor_picks =
        rng.sample_without_replacement(spec.distractor_vocab_size, spec.distractors_per_input);
    std::string text;
    for (const std::size_t w : topic_picks) {
        if (!text.empty()) text += ' ';
        text += topic_token(spec, label, topic, w);
    }
    for (const std::size_t d : distractor_picks) {
        if (!text.empty()) text += ' ';
        text += distractor_token(d);
    }
    return text;
}

std::string padded(std::size_t value, std::size_t width) {
    std::string s = std::to_string(value);
    while (s.size() < width) s.insert(s.begin(), '0');
    return s;
}

std::vector<LabeledExample> make_split(const SyntheticTaskSpec& spec, const std::string& prefix,
                                       std::size_t count, const AnswerVocabulary& vocab,
                                       Rng& rng) {
    std::vector<LabeledExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t label = static_cast<std::size_t>(rng.next_below(spec.labels.size()));
        const std::size_t topic = static_cast<std::size_t>(rng.next_below(spec.topics_per_label));
        LabeledExample ex;
        ex.id = prefix + padded(i, 4);
        ex.input = make_input(spec, label, topic, rng);
        ex.gold = vocab.index_of(spec.labels[label]);
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

AnswerVocabulary vocab_for(const SyntheticTaskSpec& spec) {
    std::vector<std::string> labels = spec.labels;
    if (spec.noised_count > 0) {
        for (const auto& noise : spec.noise_answers) {
            if (std::find(labels.begin(), labels.end(), noise) == labels.end()) {
                labels.push_back(noise);
            }
        }
    }
    return AnswerVocabulary(labels);
}

SyntheticTask gen_synthetic_task(const SyntheticTaskSpec& spec) {
    spec.validate();
    auto vocab = vocab_for(spec);

    // Independent streams per section keep the pool stable when split sizes
    // change.
    Rng pool_rng(Rng::derive(spec.seed, 0));
    std::vector<Demonstration> pool;
    pool.reserve(spec.n_demonstrations);
    for (std::size_t i = 0; i < spec.n_demonstrations; ++i) {
        const std::size_t label = i % spec.labels.size();
        const std::size_t topic = (i / spec.labels.size()) % spec.topics_per_label;
        Demonstration d;
        d.id = "d" + padded(i, 3);
        d.input = make_input(spec, label, topic, pool_rng);
        d.output = spec.labels[label];
        d.tags = {Tag::kInDomain};
        pool.push_back(std::move(d));
    }

    Rng train_rng(Rng::derive(spec.seed, 1));
    Rng dev_rng(Rng::derive(spec.seed, 2));
    Rng test_rng(Rng::derive(spec.seed, 3));
    auto train = make_split(spec, "tr", spec.train_size, vocab, train_rng);
    auto dev = make_split(spec, "dv", spec.dev_size, vocab, dev_rng);
    auto test = make_split(spec, "te", spec.test_size, vocab, test_rng);

    return SyntheticTask{std::move(pool), std::move(train), std::move(dev), std::move(test),
                         std::move(vocab)};
}

std::vector<Demonstration> inject_ood(const std::vector<Demonstration>& pool, double p,
                                      const SyntheticTaskSpec& ood_task, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw InvalidSpec("inject_ood: p must be in [0, 1]");
    const std::size_t replace_count =
        static_cast<std::size_t>(std::ceil(p * static_cast<double>(pool.size())));
    auto out = pool;
    if (replace_count == 0) return out;

    Rng rng(seed);
    auto chosen = rng.sample_without_replacement(pool.size(), replace_count);
    std::sort(chosen.begin(), chosen.end());
    for (const std::size_t idx : chosen) {
        const std::size_t label =
            static_cast<std::size_t>(rng.next_below(ood_task.labels.size()));
        const std::size_t topic =
            static_cast<std::size_t>(rng.next_below(ood_task.topics_per_label));
        out[idx].input = make_input(ood_task, label, topic, rng);
        out[idx].output = ood_task.labels[label];
        out[idx].tags = {Tag::kOod};
    }
    return out;
}

std::vector<Demonstration> inject_imbalance(const std::vector<Demonstration>& pool,
                                            std::size_t minority_count,
                                            std::size_t minority_label,
                                            const SyntheticTaskSpec& task, std::uint64_t seed) {
    if (minority_count < 1 || minority_count >= pool.size()) {
        throw InvalidSpec("inject_imbalance: need 1 <= minority_count < n");
    }
    if (minority_label >= task.labels.size()) {
        throw InvalidSpec("inject_imbalance: minority_label out of range");
    }
    const std::string& minority = task.labels[minority_label];
    std::vector<std::size_t> minority_idx;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].output == minority) minority_idx.push_back(i);
    }
    if (minority_idx.size() < minority_count) {
        throw InfeasibleImbalance("inject_imbalance: pool has only " +
                                  std::to_string(minority_idx.size()) + " '" + minority +
                                  "' demonstrations, need " + std::to_string(minority_count));
    }

    Rng rng(seed);
    auto keep_order = rng.sample_without_replacement(minority_idx.size(), minority_count);
    std::vector<bool> keep(pool.size(), false);
    for (const std::size_t j : keep_order) keep[minority_idx[j]] = true;

    // Majority labels cycle over the non-minority labels.
    std::vector<std::size_t> majority_labels;
    for (std::size_t l = 0; l < task.labels.size(); ++l) {
        if (l != minority_label) majority_labels.push_back(l);
    }

    auto out = pool;
    std::size_t replaced = 0;
    for (const std::size_t idx : minority_idx) {
        if (keep[idx]) {
            out[idx].tags.insert(Tag::kImbalanceMinority);
            continue;
        }
        const std::size_t label = majority_labels[replaced % majority_labels.size()];
        const std::size_t topic =
            static_cast<std::size_t>(rng.next_below(task.topics_per_label));
        out[idx].input = make_input(task, label, topic, rng);
        out[idx].output = task.labels[label];
        out[idx].tags = {Tag::kInDomain};
        ++replaced;
    }
    return out;
}

std::vector<Demonstration> inject_noise(const std::vector<Demonstration>& pool,
                                        std::size_t noised_count,
                                        const std::vector<std::string>& noise_answers,
                                        std::uint64_t seed) {
    if (noised_count > pool.size()) {
        throw InvalidSpec("inject_noise: noised_count must be <= n");
    }
    auto out = pool;
    if (noised_count == 0) return out;
    if (noise_answers.empty()) throw InvalidSpec("inject_noise: noise_answers is empty");

    Rng rng(seed);
    auto chosen = rng.sample_without_replacement(pool.size(), noised_count);
    std::sort(chosen.begin(), chosen.end());
    for (const std::size_t idx : chosen) {
        out[idx].output = noise_answers[rng.next_below(noise_answers.size())];
        out[idx].tags.insert(Tag::kNoised);
    }
    return out;
}

double evaluate_accuracy(const std::vector<std::size_t>& predictions,
                         const std::vector<std::size_t>& gold) {
    if (predictions.size() != gold.size()) {
        throw LengthMismatch("evaluate_accuracy: predictions and gold differ in length");
    }
    if (predictions.empty()) throw LengthMismatch("evaluate_accuracy: empty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == gold[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::string normalize_answer(const std::string& text) {
    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
    std::string out = text.substr(begin, end - begin);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

double evaluate_em(const std::vector<std::string>& predictions,
                   const std::vector<std::string>& gold) {
    if (predictions.size() != gold.size()) {
        throw LengthMismatch("evaluate_em: predictions and gold differ in length");
    }
    if (predictions.empty()) throw LengthMismatch("evaluate_em: empty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (normalize_answer(predictions[i]) == normalize_answer(gold[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

EvalOutcome evaluate_mixture(const ExpertSource& source, const std::vector<Demonstration>& pool,
                             const Partition& partition, std::span<const double> weights,
                             CombinationRule rule, const std::vector<LabeledExample>& split,
                             const AnswerVocabulary& vocab) {
    if (split.empty()) throw LengthMismatch("evaluate_mixture: empty evaluation split");
    const auto subsets = materialize(partition, pool);
    EvalOutcome outcome;
    outcome.predictions.reserve(split.size());
    std::size_t correct = 0;
    for (const auto& ex : split) {
        std::vector<TokenDistribution> dists;
        dists.reserve(subsets.size());
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            dists.push_back(source.evaluate(subset_id_for(s), subsets[s], ex.id, ex.input, vocab));
        }
        const auto combined = rule == CombinationRule::kPoe ? poe_combine(weights, dists)
                                                            : mixture_combine(weights, dists);
        const std::size_t pred = predict_label(combined);
        outcome.predictions.push_back(pred);
        if (pred == ex.gold) ++correct;
    }
    outcome.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    return outcome;
}

namespace {

Partition whole_pool_partition(const std::vector<Demonstration>& pool) {
    Partition p;
    p.seed = 0;
    p.subsets.emplace_back();
    for (const auto& d : pool) p.subsets.back().push_back(d.id);
    return p;
}

Partition singleton_partition(const std::vector<Demonstration>& pool) {
    Partition p;
    p.seed = 0;
    for (const auto& d : pool) p.subsets.push_back({d.id});
    return p;
}

}  // namespace

EvalOutcome run_concat_baseline(const ExpertSource& source,
                                const std::vector<Demonstration>& pool,
                                const std::vector<LabeledExample>& split,
                                const AnswerVocabulary& vocab) {
    const std::vector<double> one{1.0};
    return evaluate_mixture(source, pool, whole_pool_partition(pool), one,
                            CombinationRule::kPoe, split, vocab);
}

EvalOutcome run_ensemble_baseline(const ExpertSource& source,
                                  const std::vector<Demonstration>& pool,
                                  const std::vector<LabeledExample>& split,
                                  const AnswerVocabulary& vocab) {
    const std::vector<double> ones(pool.size(), 1.0);
    return evaluate_mixture(source, pool, singleton_partition(pool), ones,
                            CombinationRule::kPoe, split, vocab);
}

RandomSearchOutcome run_random_search(const ExpertSource& source,
                                      const std::vector<Demonstration>& pool,
                                      std::size_t k_candidates,
                                      const std::vector<LabeledExample>& train_split,
                                      const std::vector<LabeledExample>& eval_split,
                                      const AnswerVocabulary& vocab, std::uint64_t seed) {
    if (k_candidates < 1) throw InvalidK("run_random_search: k_candidates must be >= 1");
    Rng rng(seed);
    RandomSearchOutcome best;
    best.best_train_score = -1.0;
    for (std::size_t c = 0; c < k_candidates; ++c) {
        const std::size_t size = 1 + static_cast<std::size_t>(rng.next_below(pool.size()));
        auto picks = rng.sample_without_replacement(pool.size(), size);
        std::sort(picks.begin(), picks.end());
        std::vector<Demonstration> subset;
        subset.reserve(size);
        for (const std::size_t i : picks) subset.push_back(pool[i]);

        const auto outcome = run_concat_baseline(source, subset, train_split, vocab);
        if (outcome.accuracy > best.best_train_score) {
            best.best_train_score = outcome.accuracy;
            best.best_candidate = c;
            best.best_subset.clear();
            for (const std::size_t i : picks) best.best_subset.push_back(pool[i].id);
        }
    }
    std::vector<Demonstration> chosen;
    for (const auto& id : best.best_subset) {
        for (const auto& d : pool) {
            if (d.id == id) {
                chosen.push_back(d);
                break;
            }
        }
    }
    best.eval_score = run_concat_baseline(source, chosen, eval_split, vocab).accuracy;
    return best;
}

CostMethod cost_method_from_name(const std::string& name) {
    if (name == "concat") return CostMethod::kConcat;
    if (name == "ensemble") return CostMethod::kEnsemble;
    if (name == "moicl_uniform") return CostMethod::kMoiclUniform;
    if (name == "moicl_scalar") return CostMethod::kMoiclScalar;
    if (name == "moicl_hypernet") return CostMethod::kMoiclHypernet;
    throw InvalidConfig("cost.method: unknown method '" + name + "'");
}

double cost_model(const CostModelInput& input) {
    if (input.n < 1 || input.k < 1 || input.k > input.n) {
        throw InvalidConfig("cost: need n >= 1 and 1 <= k <= n");
    }
    if (!(input.c_llm > 0.0) || !(input.c_hyper > 0.0)) {
        throw InvalidConfig("cost: unit costs must be > 0");
    }
    const double n = static_cast<double>(input.n);
    const double k = static_cast<double>(input.k);
    switch (input.method) {
        case CostMethod::kConcat:
            return (n + 1.0) * (n + 1.0) * input.c_llm;
        case CostMethod::kEnsemble:
            return n * 4.0 * input.c_llm;
        case CostMethod::kMoiclUniform:
        case CostMethod::kMoiclScalar:
            return k * (n / k + 1.0) * (n / k + 1.0) * input.c_llm;
        case CostMethod::kMoiclHypernet:
            return k * (n / k + 1.0) * (n / k + 1.0) * input.c_llm + n * n * input.c_hyper;
    }
    throw Error("unreachable");
}

}  // namespace moicl
