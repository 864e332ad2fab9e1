#include "moicl/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "moicl/rng.hpp"

namespace moicl {

namespace {

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

MixtureWeights uniform_weights(std::size_t k) {
    if (k < 1) throw InvalidK("uniform_weights: k must be >= 1");
    return MixtureWeights(k, 1.0 / static_cast<double>(k));
}

ScalarWeights ScalarWeights::init(std::size_t k) {
    if (k < 1) throw InvalidK("ScalarWeights::init: k must be >= 1");
    return ScalarWeights{std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

HyperNetwork::HyperNetwork(HyperNetworkConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.feature_dim == 0 || cfg_.hidden_dim == 0) {
        throw InvalidConfig("hypernet: feature_dim and hidden_dim must be > 0");
    }
    const std::size_t count = cfg_.hidden_dim * cfg_.feature_dim + 2 * cfg_.hidden_dim + 1;
    params_.assign(count, 0.0);
    Rng rng(seed);
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.feature_dim));
    for (std::size_t i = 0; i < cfg_.hidden_dim * cfg_.feature_dim; ++i) {
        params_[w_offset() + i] = w_scale * rng.next_normal();
    }
    const double v_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    for (std::size_t i = 0; i < cfg_.hidden_dim; ++i) {
        params_[v_offset() + i] = v_scale * rng.next_normal();
    }
    // b stays zero; the output bias starts at 0 so initial weights are small
    // and symmetric around the network's own estimate.
}

void HyperNetwork::set_params(std::vector<double> params) {
    if (params.size() != params_.size()) {
        throw DimensionMismatch("hypernet: parameter count mismatch");
    }
    params_ = std::move(params);
}

std::vector<double> HyperNetwork::features(const std::string& text) const {
    std::vector<double> f(cfg_.feature_dim, 0.0);
    for (const auto& token : tokenize(text)) {
        f[fnv1a64(token) % cfg_.feature_dim] += 1.0;
    }
    const double norm = std::sqrt(std::inner_product(f.begin(), f.end(), f.begin(), 0.0));
    if (norm > 0.0) {
        for (double& x : f) x /= norm;
    }
    return f;
}

double HyperNetwork::weight_for(const std::string& text) const {
    const auto f = features(text);
    const std::size_t H = cfg_.hidden_dim;
    const std::size_t F = cfg_.feature_dim;
    double out = params_[c_offset()];
    for (std::size_t h = 0; h < H; ++h) {
        double pre = params_[b_offset() + h];
        const double* row = params_.data() + w_offset() + h * F;
        for (std::size_t j = 0; j < F; ++j) pre += row[j] * f[j];
        out += params_[v_offset() + h] * std::tanh(pre);
    }
    return out;
}

std::vector<double> HyperNetwork::backward(const std::vector<std::string>& subset_texts,
                                           std::span<const double> upstream) const {
    if (subset_texts.size() != upstream.size()) {
        throw DimensionMismatch("hypernet backward: upstream length mismatch");
    }
    const std::size_t H = cfg_.hidden_dim;
    const std::size_t F = cfg_.feature_dim;
    std::vector<double> grad(params_.size(), 0.0);
    for (std::size_t i = 0; i < subset_texts.size(); ++i) {
        const double g = upstream[i];
        if (g == 0.0) continue;
        const auto f = features(subset_texts[i]);
        for (std::size_t h = 0; h < H; ++h) {
            double pre = params_[b_offset() + h];
            const double* row = params_.data() + w_offset() + h * F;
            for (std::size_t j = 0; j < F; ++j) pre += row[j] * f[j];
            const double th = std::tanh(pre);
            const double v = params_[v_offset() + h];
            const double dpre = g * v * (1.0 - th * th);
            grad[v_offset() + h] += g * th;
            grad[b_offset() + h] += dpre;
            double* grow = grad.data() + w_offset() + h * F;
            for (std::size_t j = 0; j < F; ++j) grow[j] += dpre * f[j];
        }
        grad[c_offset()] += g;
    }
    return grad;
}

MixtureWeights hypernet_forward(const HyperNetwork& net,
                                const std::vector<std::string>& subset_texts) {
    if (subset_texts.empty()) throw InvalidK("hypernet_forward: need k >= 1 subsets");
    MixtureWeights w;
    w.reserve(subset_texts.size());
    for (const auto& text : subset_texts) w.push_back(net.weight_for(text));
    return w;
}

std::string subset_text(std::span<const Demonstration> demos) {
    std::string text;
    for (const auto& d : demos) {
        if (!text.empty()) text += ' ';
        text += d.input;
        text += ' ';
        text += d.output;
    }
    return text;
}

std::vector<double> topk_mask(std::span<const double> m, std::size_t k_prime) {
    if (k_prime < 1 || k_prime > m.size()) {
        throw InvalidKPrime("topk_mask: need 1 <= k_prime <= k");
    }
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
    std::vector<double> mask(m.size(), 0.0);
    for (std::size_t i = 0; i < k_prime; ++i) mask[order[i]] = 1.0;
    return mask;
}

SparseWeighting SparseWeighting::init(std::size_t k, std::size_t k_prime, double lambda) {
    if (k < 1) throw InvalidK("SparseWeighting::init: k must be >= 1");
    if (k_prime < 1 || k_prime > k) {
        throw InvalidKPrime("SparseWeighting::init: need 1 <= k_prime <= k");
    }
    if (lambda <= 0.0) throw InvalidConfig("SparseWeighting::init: lambda must be > 0");
    SparseWeighting sw;
    sw.w_prime.assign(k, 1.0 / static_cast<double>(k));
    sw.m.assign(k, 1.0 / static_cast<double>(k));
    sw.k_prime = k_prime;
    sw.lambda = lambda;
    return sw;
}

MixtureWeights sparsify(const SparseWeighting& sw) {
    if (sw.m.size() != sw.w_prime.size()) {
        throw DimensionMismatch("sparsify: w' and m length mismatch");
    }
    const auto mask = topk_mask(sw.m, sw.k_prime);
    MixtureWeights w(sw.w_prime.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = sw.w_prime[i] * mask[i];
    return w;
}

std::vector<double> imle_grad(std::span<const double> m, std::span<const double> grad_mask,
                              std::size_t k_prime, double lambda) {
    if (m.size() != grad_mask.size()) {
        throw DimensionMismatch("imle_grad: m and grad_mask length mismatch");
    }
    if (lambda <= 0.0) throw InvalidConfig("imle_grad: lambda must be > 0");
    const auto base = topk_mask(m, k_prime);
    std::vector<double> perturbed(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) perturbed[i] = m[i] + lambda * grad_mask[i];
    const auto shifted = topk_mask(perturbed, k_prime);
    std::vector<double> grad(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) grad[i] = base[i] - shifted[i];
    return grad;
}

namespace {

nlohmann::ordered_json checkpoint_skeleton(const std::string& kind, std::size_t k) {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["k"] = k;
    return j;
}

}  // namespace

std::string scalar_checkpoint_to_json(const ScalarWeights& sw) {
    auto j = checkpoint_skeleton("scalar", sw.k());
    j["values"] = sw.w;
    return j.dump();
}

std::string sparse_checkpoint_to_json(const SparseWeighting& sw) {
    auto j = checkpoint_skeleton("sparse", sw.k());
    j["values"] = sw.w_prime;
    j["m"] = sw.m;
    j["k_prime"] = sw.k_prime;
    return j.dump();
}

std::string hypernet_checkpoint_to_json(const HyperNetwork& net, std::size_t k) {
    auto j = checkpoint_skeleton("hypernet", k);
    j["hypernet_params"] = nlohmann::ordered_json{
        {"feature_dim", net.config().feature_dim},
        {"hidden_dim", net.config().hidden_dim},
        {"values", net.params()},
    };
    return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("checkpoint JSON: ") + e.what());
    }
    Checkpoint ck;
    ck.kind = j.at("kind").get<std::string>();
    ck.k = j.at("k").get<std::size_t>();
    if (ck.kind == "scalar") {
        ck.values = j.at("values").get<std::vector<double>>();
    } else if (ck.kind == "sparse") {
        ck.values = j.at("values").get<std::vector<double>>();
        ck.m = j.at("m").get<std::vector<double>>();
        ck.k_prime = j.at("k_prime").get<std::size_t>();
    } else if (ck.kind == "hypernet") {
        const auto& hp = j.at("hypernet_params");
        ck.hypernet_config.feature_dim = hp.at("feature_dim").get<std::size_t>();
        ck.hypernet_config.hidden_dim = hp.at("hidden_dim").get<std::size_t>();
        ck.hypernet_params = hp.at("values").get<std::vector<double>>();
    } else {
        throw ParseError(1, "checkpoint JSON: unknown kind '" + ck.kind + "'");
    }
    return ck;
}

}  // namespace moicl
