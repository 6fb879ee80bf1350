#pragma once

#include "fewshot/augment.hpp"
#include "fewshot/corpus.hpp"
#include "fewshot/index.hpp"
#include "fewshot/mlp.hpp"
#include "fewshot/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace testutil {

// Independent O(n*d) scan. Kept free of VectorIndex internals on purpose:
// the library must reproduce this exactly in exact mode.
inline std::vector<std::pair<std::string, double>>
brute_force_top(const fewshot::EmbeddingCorpus& corpus, std::span<const float> query,
                std::size_t a) {
    double qnorm = 0.0;
    for (float v : query)
        qnorm += static_cast<double>(v) * static_cast<double>(v);
    qnorm = std::sqrt(qnorm);
    std::vector<double> q(query.size());
    for (std::size_t j = 0; j < q.size(); ++j)
        q[j] = static_cast<double>(query[j]) / qnorm;

    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(corpus.rows());
    for (std::size_t i = 0; i < corpus.rows(); ++i) {
        auto row = corpus.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j)
            dot += static_cast<double>(row[j]) * q[j];
        scored.emplace_back(corpus.meta[i].id, dot);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& lhs, const auto& rhs) {
        if (lhs.second != rhs.second)
            return lhs.second > rhs.second;
        return lhs.first < rhs.first;
    });
    if (scored.size() > a)
        scored.resize(a);
    return scored;
}

// Independent forward pass: per-unit std::inner_product-free accumulation in
// reversed coordinate order, so it shares no code or summation order with the
// library implementation.
inline std::vector<double> naive_forward(const fewshot::MlpParams& p,
                                         std::span<const double> x) {
    std::vector<double> cur(x.begin(), x.end());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        std::vector<double> next(layer.out);
        for (std::size_t u = 0; u < layer.out; ++u) {
            double acc = 0.0;
            for (std::size_t j = layer.in; j-- > 0;)
                acc += layer.w[u * layer.in + j] * cur[j];
            next[u] = acc + layer.b[u];
        }
        if (l + 1 < p.layers.size())
            for (auto& v : next)
                v = std::max(0.0, v);
        cur = std::move(next);
    }
    return cur;
}

inline fewshot::EmbeddingCorpus random_unit_corpus(std::size_t rows, std::size_t dim,
                                                   std::uint64_t seed,
                                                   const std::string& prefix = "r") {
    fewshot::EmbeddingCorpus corpus;
    corpus.dim = dim;
    fewshot::SplitMix64 rng(fewshot::derive_key({seed, fewshot::hash_str("test-corpus")}));
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<double> v(dim);
        double norm2 = 0.0;
        for (auto& x : v) {
            x = rng.gaussian();
            norm2 += x * x;
        }
        double norm = std::sqrt(norm2);
        for (std::size_t j = 0; j < dim; ++j)
            corpus.vectors.push_back(static_cast<float>(v[j] / norm));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s%05zu", prefix.c_str(), i);
        corpus.meta.push_back({buf, "x", fewshot::Split::train});
    }
    return corpus;
}

inline std::vector<float> random_unit_vector(std::size_t dim, std::uint64_t seed) {
    fewshot::SplitMix64 rng(fewshot::derive_key({seed, fewshot::hash_str("test-query")}));
    std::vector<double> v(dim);
    double norm2 = 0.0;
    for (auto& x : v) {
        x = rng.gaussian();
        norm2 += x * x;
    }
    double norm = std::sqrt(norm2);
    std::vector<float> out(dim);
    for (std::size_t j = 0; j < dim; ++j)
        out[j] = static_cast<float>(v[j] / norm);
    return out;
}

// Central finite difference of `loss` at parameter coordinate i.
template <typename Loss>
double central_difference(fewshot::MlpParams& params, std::size_t i, double eps, Loss&& loss) {
    double& p = fewshot::param_at(params, i);
    const double saved = p;
    p = saved + eps;
    const double up = loss(params);
    p = saved - eps;
    const double down = loss(params);
    p = saved;
    return (up - down) / (2.0 * eps);
}

inline double rel_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-7)
        return 0.0; // both effectively zero
    return std::abs(a - b) / scale;
}

} // namespace testutil
