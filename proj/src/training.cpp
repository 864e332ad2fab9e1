#include "moicl/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "moicl/rng.hpp"

namespace moicl {

std::string combination_rule_name(CombinationRule rule) {
    return rule == CombinationRule::kPoe ? "poe" : "mixture";
}

CombinationRule combination_rule_from_name(const std::string& name) {
    if (name == "poe") return CombinationRule::kPoe;
    if (name == "mixture") return CombinationRule::kMixture;
    throw InvalidConfig("combination: expected 'poe' or 'mixture', got '" + name + "'");
}

void TrainingConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidConfig("training.learning_rate: must be > 0");
    if (epochs < 1) throw InvalidConfig("training.epochs: must be >= 1");
    if (batch_size < 1) throw InvalidConfig("training.batch_size: must be >= 1");
    if (accumulation_steps < 1) throw InvalidConfig("training.accumulation_steps: must be >= 1");
    if (weighting == WeightingKind::kSparse) {
        if (k_prime < 1) throw InvalidConfig("training.k_prime: must be >= 1");
        if (!(imle_lambda > 0.0)) throw InvalidConfig("training.imle_lambda: must be > 0");
    }
}

std::string trace_to_json(const TrainingTrace& trace) {
    nlohmann::ordered_json j;
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : trace.epochs) {
        j["epochs"].push_back(nlohmann::ordered_json{
            {"train_loss", e.train_loss},
            {"dev_accuracy", e.dev_accuracy},
            {"weights", e.weights},
        });
    }
    j["selected_epoch"] = trace.selected_epoch;
    return j.dump(2);
}

namespace {

TokenDistribution combine(std::span<const double> w,
                          std::span<const TokenDistribution> experts, CombinationRule rule) {
    return rule == CombinationRule::kPoe ? poe_combine(w, experts)
                                         : mixture_combine(w, experts);
}

}  // namespace

double nll_loss(std::span<const double> weights, std::span<const TokenDistribution> experts,
                std::size_t gold, CombinationRule rule) {
    const auto combined = combine(weights, experts, rule);
    if (gold >= combined.size()) throw DimensionMismatch("nll_loss: gold index out of range");
    return -combined.logp()[gold];
}

std::vector<double> grad_scalar_poe(std::span<const double> weights,
                                    std::span<const TokenDistribution> experts,
                                    std::size_t gold) {
    const auto combined = poe_combine(weights, experts);
    const auto p = combined.probabilities();
    std::vector<double> grad(weights.size(), 0.0);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const auto& logp_i = experts[i].logp();
        double expectation = 0.0;
        for (std::size_t y = 0; y < p.size(); ++y) expectation += p[y] * logp_i[y];
        grad[i] = expectation - logp_i[gold];
    }
    return grad;
}

std::vector<double> grad_scalar_mixture(std::span<const double> weights,
                                        std::span<const TokenDistribution> experts,
                                        std::size_t gold) {
    const std::size_t k = experts.size();
    const std::size_t vocab = experts.empty() ? 0 : experts[0].size();
    std::vector<std::vector<double>> probs(k);
    for (std::size_t i = 0; i < k; ++i) probs[i] = experts[i].probabilities();

    std::vector<double> sums(vocab, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t y = 0; y < vocab; ++y) sums[y] += weights[i] * probs[i][y];
    }
    double z = 0.0;
    for (double s : sums) z += std::max(s, kMixtureEpsilon);

    // Labels at the clamp contribute subgradient 0 (the clamp boundary has
    // measure zero).
    std::vector<double> grad(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        double dz = 0.0;
        for (std::size_t y = 0; y < vocab; ++y) {
            if (sums[y] > kMixtureEpsilon) dz += probs[i][y];
        }
        double dgold = 0.0;
        if (sums[gold] > kMixtureEpsilon) dgold = probs[i][gold] / sums[gold];
        grad[i] = dz / z - dgold;
    }
    return grad;
}

std::vector<double> grad_scalar(std::span<const double> weights,
                                std::span<const TokenDistribution> experts, std::size_t gold,
                                CombinationRule rule) {
    return rule == CombinationRule::kPoe ? grad_scalar_poe(weights, experts, gold)
                                         : grad_scalar_mixture(weights, experts, gold);
}

std::vector<double> grad_finite_difference(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> params, double h) {
    if (!(h > 0.0)) throw InvalidConfig("grad_finite_difference: h must be > 0");
    std::vector<double> p(params.begin(), params.end());
    std::vector<double> grad(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double original = p[i];
        p[i] = original + h;
        const double up = loss(p);
        p[i] = original - h;
        const double down = loss(p);
        p[i] = original;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

std::vector<double> grad_hypernet(const HyperNetwork& net,
                                  const std::vector<std::string>& subset_texts,
                                  std::span<const TokenDistribution> experts,
                                  std::size_t gold, CombinationRule rule) {
    const auto w = hypernet_forward(net, subset_texts);
    const auto upstream = grad_scalar(w, experts, gold, rule);
    return net.backward(subset_texts, upstream);
}

SparseGradients grad_sparse(const SparseWeighting& sw,
                            std::span<const TokenDistribution> experts, std::size_t gold,
                            CombinationRule rule) {
    const auto mask = topk_mask(sw.m, sw.k_prime);
    const auto w = sparsify(sw);
    const auto dense = grad_scalar(w, experts, gold, rule);

    SparseGradients g;
    g.w_prime.resize(sw.k());
    std::vector<double> descent_perturbation(sw.k());
    for (std::size_t i = 0; i < sw.k(); ++i) {
        g.w_prime[i] = mask[i] * dense[i];
        // dL/dmask_i = w'_i * dL/dw_i; the target mask is taken at masking
        // coefficients moved toward lower loss.
        descent_perturbation[i] = -(sw.w_prime[i] * dense[i]);
    }
    g.m = imle_grad(sw.m, descent_perturbation, sw.k_prime, sw.lambda);
    return g;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), lr_(learning_rate) {}

void Optimizer::step(std::vector<double>& params, std::span<const double> grad,
                     bool project_nonnegative) {
    if (params.size() != grad.size()) {
        throw DimensionMismatch("optimizer: parameter and gradient size mismatch");
    }
    if (kind_ == OptimizerKind::kSgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
    } else {
        constexpr double beta1 = 0.9;
        constexpr double beta2 = 0.999;
        constexpr double eps = 1e-8;
        if (m_.size() != params.size()) {
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
            t_ = 0;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * grad[i];
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
        }
    }
    if (project_nonnegative) {
        for (double& p : params) p = std::max(p, 0.0);
    }
}

MixtureWeights effective_weights(const TrainedWeighting& weighting,
                                 const std::vector<std::string>& subset_texts) {
    return std::visit(
        [&](const auto& w) -> MixtureWeights {
            using T = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<T, ScalarWeights>) {
                return w.w;
            } else if constexpr (std::is_same_v<T, SparseWeighting>) {
                return sparsify(w);
            } else {
                return hypernet_forward(w, subset_texts);
            }
        },
        weighting);
}

std::vector<std::vector<TokenDistribution>> expert_matrix(
    const ExpertSource& source, const std::vector<std::vector<Demonstration>>& subsets,
    const std::vector<LabeledExample>& examples, const AnswerVocabulary& vocab) {
    std::vector<std::vector<TokenDistribution>> matrix;
    matrix.reserve(examples.size());
    for (const auto& ex : examples) {
        std::vector<TokenDistribution> row;
        row.reserve(subsets.size());
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            row.push_back(source.evaluate(subset_id_for(s), subsets[s], ex.id, ex.input, vocab));
        }
        matrix.push_back(std::move(row));
    }
    return matrix;
}

namespace {

struct TrainerState {
    TrainingConfig cfg;
    std::size_t k = 0;
    ScalarWeights scalar{};
    SparseWeighting sparse{};
    std::unique_ptr<HyperNetwork> hypernet;
    std::vector<std::string> subset_texts;

    Optimizer primary;
    Optimizer mask_opt;  // sparse m-path only

    TrainerState(const TrainingConfig& cfg_, std::size_t k_, std::vector<std::string> texts)
        : cfg(cfg_),
          k(k_),
          subset_texts(std::move(texts)),
          primary(cfg_.optimizer, cfg_.learning_rate),
          mask_opt(cfg_.optimizer, cfg_.learning_rate) {
        switch (cfg.weighting) {
            case WeightingKind::kScalar:
                scalar = ScalarWeights::init(k);
                break;
            case WeightingKind::kSparse:
                if (cfg.k_prime > k) throw InvalidConfig("training.k_prime: must be <= k");
                sparse = SparseWeighting::init(k, cfg.k_prime, cfg.imle_lambda);
                break;
            case WeightingKind::kHypernet:
                if (subset_texts.size() != k) {
                    throw InvalidConfig("training: hypernet requires one subset text per expert");
                }
                hypernet = std::make_unique<HyperNetwork>(cfg.hypernet, Rng::derive(cfg.seed, 1));
                break;
        }
    }

    MixtureWeights current_weights() const {
        switch (cfg.weighting) {
            case WeightingKind::kScalar: return scalar.w;
            case WeightingKind::kSparse: return sparsify(sparse);
            case WeightingKind::kHypernet: return hypernet_forward(*hypernet, subset_texts);
        }
        throw Error("unreachable");
    }

    TrainedWeighting snapshot() const {
        switch (cfg.weighting) {
            case WeightingKind::kScalar: return scalar;
            case WeightingKind::kSparse: return sparse;
            case WeightingKind::kHypernet: return *hypernet;
        }
        throw Error("unreachable");
    }

    void restore(const TrainedWeighting& saved) {
        switch (cfg.weighting) {
            case WeightingKind::kScalar: scalar = std::get<ScalarWeights>(saved); break;
            case WeightingKind::kSparse: sparse = std::get<SparseWeighting>(saved); break;
            case WeightingKind::kHypernet: *hypernet = std::get<HyperNetwork>(saved); break;
        }
    }

    void accumulate(const std::vector<TokenDistribution>& dists, std::size_t gold,
                    std::vector<double>& acc_primary, std::vector<double>& acc_mask) const {
        switch (cfg.weighting) {
            case WeightingKind::kScalar: {
                const auto g = grad_scalar(scalar.w, dists, gold, cfg.combination);
                for (std::size_t i = 0; i < g.size(); ++i) acc_primary[i] += g[i];
                break;
            }
            case WeightingKind::kSparse: {
                const auto g = grad_sparse(sparse, dists, gold, cfg.combination);
                for (std::size_t i = 0; i < g.w_prime.size(); ++i) acc_primary[i] += g.w_prime[i];
                for (std::size_t i = 0; i < g.m.size(); ++i) acc_mask[i] += g.m[i];
                break;
            }
            case WeightingKind::kHypernet: {
                const auto g =
                    grad_hypernet(*hypernet, subset_texts, dists, gold, cfg.combination);
                for (std::size_t i = 0; i < g.size(); ++i) acc_primary[i] += g[i];
                break;
            }
        }
    }

    std::size_t primary_param_count() const {
        switch (cfg.weighting) {
            case WeightingKind::kScalar: return k;
            case WeightingKind::kSparse: return k;
            case WeightingKind::kHypernet: return hypernet->param_count();
        }
        throw Error("unreachable");
    }

    void apply_step(std::vector<double>& acc_primary, std::vector<double>& acc_mask,
                    std::size_t count) {
        const double inv = 1.0 / static_cast<double>(count);
        for (double& g : acc_primary) g *= inv;
        for (double& g : acc_mask) g *= inv;
        switch (cfg.weighting) {
            case WeightingKind::kScalar:
                primary.step(scalar.w, acc_primary, cfg.nonnegative_weights);
                break;
            case WeightingKind::kSparse:
                primary.step(sparse.w_prime, acc_primary, cfg.nonnegative_weights);
                mask_opt.step(sparse.m, acc_mask);
                break;
            case WeightingKind::kHypernet: {
                auto params = hypernet->params();
                primary.step(params, acc_primary);
                hypernet->set_params(std::move(params));
                break;
            }
        }
        std::fill(acc_primary.begin(), acc_primary.end(), 0.0);
        std::fill(acc_mask.begin(), acc_mask.end(), 0.0);
    }
};

}  // namespace

TrainResult train_cached(const TrainingConfig& cfg,
                         const std::vector<std::vector<TokenDistribution>>& train_dists,
                         const std::vector<std::size_t>& train_gold,
                         const std::vector<std::vector<TokenDistribution>>& dev_dists,
                         const std::vector<std::size_t>& dev_gold,
                         const std::vector<std::string>& subset_texts) {
    cfg.validate();
    if (train_dists.empty() || dev_dists.empty()) {
        throw InvalidConfig("training: train and dev splits must be nonempty");
    }
    if (train_dists.size() != train_gold.size() || dev_dists.size() != dev_gold.size()) {
        throw DimensionMismatch("training: dists and gold labels length mismatch");
    }
    const std::size_t k = train_dists[0].size();
    if (k == 0) throw InvalidConfig("training: need at least one expert");

    TrainerState state(cfg, k, subset_texts);
    Rng rng(cfg.seed);

    std::vector<double> acc_primary(state.primary_param_count(), 0.0);
    std::vector<double> acc_mask(cfg.weighting == WeightingKind::kSparse ? k : 0, 0.0);
    const std::size_t step_every = cfg.batch_size * cfg.accumulation_steps;

    TrainingTrace trace;
    std::vector<TrainedWeighting> per_epoch_params;

    std::vector<std::size_t> order(train_dists.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t pending = 0;
        for (const std::size_t idx : order) {
            const auto weights = state.current_weights();
            loss_sum += nll_loss(weights, train_dists[idx], train_gold[idx], cfg.combination);
            state.accumulate(train_dists[idx], train_gold[idx], acc_primary, acc_mask);
            if (++pending == step_every) {
                state.apply_step(acc_primary, acc_mask, pending);
                pending = 0;
            }
        }
        if (pending > 0) {
            state.apply_step(acc_primary, acc_mask, pending);
        }

        const auto weights = state.current_weights();
        std::size_t correct = 0;
        for (std::size_t j = 0; j < dev_dists.size(); ++j) {
            const auto combined = cfg.combination == CombinationRule::kPoe
                                      ? poe_combine(weights, dev_dists[j])
                                      : mixture_combine(weights, dev_dists[j]);
            if (predict_label(combined) == dev_gold[j]) ++correct;
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train_dists.size());
        stats.dev_accuracy = static_cast<double>(correct) / static_cast<double>(dev_dists.size());
        stats.weights = weights;
        trace.epochs.push_back(std::move(stats));
        per_epoch_params.push_back(state.snapshot());
    }

    trace.selected_epoch = 0;
    for (std::size_t e = 1; e < trace.epochs.size(); ++e) {
        if (trace.epochs[e].dev_accuracy > trace.epochs[trace.selected_epoch].dev_accuracy) {
            trace.selected_epoch = e;
        }
    }
    state.restore(per_epoch_params[trace.selected_epoch]);
    return TrainResult{state.snapshot(), std::move(trace)};
}

TrainResult train(const TrainingConfig& cfg, const ExpertSource& source,
                  const std::vector<Demonstration>& pool, const Partition& partition,
                  const AnswerVocabulary& vocab,
                  const std::vector<LabeledExample>& train_split,
                  const std::vector<LabeledExample>& dev_split) {
    const auto subsets = materialize(partition, pool);
    std::vector<std::string> texts;
    texts.reserve(subsets.size());
    for (const auto& s : subsets) texts.push_back(subset_text(s));
    const auto train_dists = expert_matrix(source, subsets, train_split, vocab);
    const auto dev_dists = expert_matrix(source, subsets, dev_split, vocab);
    std::vector<std::size_t> train_gold, dev_gold;
    for (const auto& ex : train_split) train_gold.push_back(ex.gold);
    for (const auto& ex : dev_split) dev_gold.push_back(ex.gold);
    return train_cached(cfg, train_dists, train_gold, dev_dists, dev_gold, texts);
}

}  // namespace moicl
