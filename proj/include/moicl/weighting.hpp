#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moicl/distributions.hpp"
#include "moicl/partitioning.hpp"

namespace moicl {

// All experts weighted equally: w_i = 1/k.
MixtureWeights uniform_weights(std::size_t k);

// Trainable per-expert scalars, initialized to 1/k.
struct ScalarWeights {
    std::vector<double> w;

    static ScalarWeights init(std::size_t k);
    std::size_t k() const { return w.size(); }
};

// Desk-scale replacement for a pretrained-transformer hyper-network: hashed
// bag-of-words features (dimension F) through a tanh MLP (F -> H -> 1),
// applied to each subset independently. Generates a weight for any subset,
// including ones unseen during training.
struct HyperNetworkConfig {
    std::size_t feature_dim = 512;
    std::size_t hidden_dim = 32;
};

class HyperNetwork {
public:
    HyperNetwork(HyperNetworkConfig cfg, std::uint64_t seed);

    const HyperNetworkConfig& config() const { return cfg_; }

    // Flat layout: [W (H x F, row-major), b (H), v (H), c].
    const std::vector<double>& params() const { return params_; }
    void set_params(std::vector<double> params);
    std::size_t param_count() const { return params_.size(); }

    // Hashed bag-of-words over the tokenized text, L2-normalized.
    std::vector<double> features(const std::string& text) const;

    double weight_for(const std::string& subset_text) const;

    // d(sum_i upstream_i * w_i)/dparams, same flat layout as params().
    std::vector<double> backward(const std::vector<std::string>& subset_texts,
                                 std::span<const double> upstream) const;

private:
    HyperNetworkConfig cfg_;
    std::vector<double> params_;

    std::size_t w_offset() const { return 0; }
    std::size_t b_offset() const { return cfg_.hidden_dim * cfg_.feature_dim; }
    std::size_t v_offset() const { return b_offset() + cfg_.hidden_dim; }
    std::size_t c_offset() const { return v_offset() + cfg_.hidden_dim; }
};

// One weight per subset; a function of subset contents only, so identical
// subsets always receive identical weights.
MixtureWeights hypernet_forward(const HyperNetwork& net,
                                const std::vector<std::string>& subset_texts);

// Concatenated demonstration text used as hyper-network input; bag-of-words
// downstream makes this order-invariant.
std::string subset_text(std::span<const Demonstration> demos);

// Binary mask (as 0.0/1.0) selecting the k_prime largest entries of m; ties
// break to the lowest index.
std::vector<double> topk_mask(std::span<const double> m, std::size_t k_prime);

// Sparsified weighting: w = w' (element-wise *) top-k'(m).
struct SparseWeighting {
    std::vector<double> w_prime;
    std::vector<double> m;
    std::size_t k_prime = 1;
    double lambda = 1.0;

    static SparseWeighting init(std::size_t k, std::size_t k_prime, double lambda = 1.0);
    std::size_t k() const { return w_prime.size(); }
};

MixtureWeights sparsify(const SparseWeighting& sw);

// Perturb-and-compare mask-difference estimator for the gradient of the loss
// with respect to the masking coefficients:
//   top-k'(m) - top-k'(m + lambda * grad_mask).
// Entries are in {-1, 0, 1} and sum to zero.
std::vector<double> imle_grad(std::span<const double> m, std::span<const double> grad_mask,
                              std::size_t k_prime, double lambda);

// Weight checkpoints:
// {"kind":"scalar|hypernet|sparse","k":...,"values":[...],
//  "hypernet_params":{...},"m":[...],"k_prime":...}
std::string scalar_checkpoint_to_json(const ScalarWeights& sw);
std::string sparse_checkpoint_to_json(const SparseWeighting& sw);
std::string hypernet_checkpoint_to_json(const HyperNetwork& net, std::size_t k);

struct Checkpoint {
    std::string kind;  // "scalar" | "hypernet" | "sparse"
    std::size_t k = 0;
    std::vector<double> values;
    std::vector<double> m;
    std::size_t k_prime = 0;
    HyperNetworkConfig hypernet_config;
    std::vector<double> hypernet_params;
};

Checkpoint checkpoint_from_json(const std::string& text);

}  // namespace moicl
