#pragma once

#include "fewshot/augment.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fewshot {

// One affine layer, weights row-major out×in.
struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;
};

// Affine layers with a rectifier between them and identity at the output.
struct MlpParams {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
};

// Seeded He-style init: weights ~ N(0, 2/in) on hidden layers, N(0, 1/in) on
// the output layer, zero biases.
MlpParams make_mlp(std::size_t input, std::span<const std::size_t> hidden, std::size_t output,
                   std::uint64_t seed);

std::size_t param_count(const MlpParams& p);
double& param_at(MlpParams& p, std::size_t flat_index);
double param_at(const MlpParams& p, std::size_t flat_index);

// Throws numeric_error on any NaN/Inf parameter.
void check_finite(const MlpParams& p, const char* what);

// Gradients (or any other parameter-shaped accumulator).
struct Gradients {
    std::vector<Layer> layers;
};

Gradients zeros_like(const MlpParams& p);
void axpy(MlpParams& p, double a, const Gradients& g);      // p += a*g
void grad_axpy(Gradients& dst, double a, const Gradients& g);
void grad_scale(Gradients& g, double a);
double grad_dot(const Gradients& a, const Gradients& b);

// Borrowed view of an n×width row-major f64 batch.
struct BatchView {
    const double* data = nullptr;
    std::size_t n = 0;
    std::size_t width = 0;

    std::span<const double> row(std::size_t i) const { return {data + i * width, width}; }
};

inline BatchView batch_view(const FeatureMatrix& x) { return {x.data.data(), x.count(), x.width}; }

struct ForwardPass {
    std::size_t n = 0;
    // act[l]: n × layers[l].out post-rectifier activations for hidden layers;
    // act.back() is the logits (identity output).
    std::vector<std::vector<double>> act;

    const std::vector<double>& logits() const { return act.back(); }
};

ForwardPass mlp_forward(const MlpParams& p, BatchView x);
std::vector<double> mlp_forward_row(const MlpParams& p, std::span<const double> x);

// Reverse pass from d(loss)/d(logits). Returns parameter gradients; if
// dinput is non-null it receives d(loss)/d(input), n×in row-major.
Gradients mlp_backward(const MlpParams& p, BatchView x, const ForwardPass& fwd,
                       std::span<const double> dlogits, std::vector<double>* dinput = nullptr);

// Row-wise stable softmax of an n×k logit block.
std::vector<double> softmax_rows(std::span<const double> logits, std::size_t n, std::size_t k);

// Weighted mean cross-entropy: sum_i w_i * CE_i / sum_i w_i.
double cross_entropy(std::span<const double> logits, std::size_t n, std::size_t k,
                     std::span<const std::size_t> labels, std::span<const double> weights);

// d(weighted CE)/d(logits); rows with zero weight get an exactly-zero block.
std::vector<double> cross_entropy_backward(std::span<const double> logits, std::size_t n,
                                           std::size_t k, std::span<const std::size_t> labels,
                                           std::span<const double> weights);

} // namespace fewshot
