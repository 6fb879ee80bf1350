#include "fewshot/mlp.hpp"

#include "fewshot/error.hpp"
#include "fewshot/dot.hpp"
#include "fewshot/rng.hpp"

#include <algorithm>
#include <cmath>

namespace fewshot {

MlpParams make_mlp(std::size_t input, std::span<const std::size_t> hidden, std::size_t output,
                   std::uint64_t seed) {
    if (input == 0 || output == 0)
        throw data_error("make_mlp: zero input or output width");
    std::vector<std::size_t> widths(hidden.begin(), hidden.end());
    widths.push_back(output);

    MlpParams p;
    std::size_t in = input;
    for (std::size_t l = 0; l < widths.size(); ++l) {
        Layer layer;
        layer.in = in;
        layer.out = widths[l];
        layer.w.resize(layer.in * layer.out);
        layer.b.assign(layer.out, 0.0);
        const bool is_output = l + 1 == widths.size();
        const double std_dev = std::sqrt((is_output ? 1.0 : 2.0) / static_cast<double>(layer.in));
        SplitMix64 rng(derive_key({seed, hash_str("mlp-init"), l}));
        for (auto& w : layer.w)
            w = std_dev * rng.gaussian();
        in = layer.out;
        p.layers.push_back(std::move(layer));
    }
    return p;
}

std::size_t param_count(const MlpParams& p) {
    std::size_t n = 0;
    for (const auto& l : p.layers)
        n += l.w.size() + l.b.size();
    return n;
}

double& param_at(MlpParams& p, std::size_t flat_index) {
    for (auto& l : p.layers) {
        if (flat_index < l.w.size())
            return l.w[flat_index];
        flat_index -= l.w.size();
        if (flat_index < l.b.size())
            return l.b[flat_index];
        flat_index -= l.b.size();
    }
    throw data_error("param_at: index out of range");
}

double param_at(const MlpParams& p, std::size_t flat_index) {
    return param_at(const_cast<MlpParams&>(p), flat_index);
}

void check_finite(const MlpParams& p, const char* what) {
    for (const auto& l : p.layers) {
        for (double w : l.w)
            if (!std::isfinite(w))
                throw numeric_error(std::string(what) + ": non-finite weight");
        for (double b : l.b)
            if (!std::isfinite(b))
                throw numeric_error(std::string(what) + ": non-finite bias");
    }
}

Gradients zeros_like(const MlpParams& p) {
    Gradients g;
    g.layers.reserve(p.layers.size());
    for (const auto& l : p.layers) {
        Layer z;
        z.in = l.in;
        z.out = l.out;
        z.w.assign(l.w.size(), 0.0);
        z.b.assign(l.b.size(), 0.0);
        g.layers.push_back(std::move(z));
    }
    return g;
}

void axpy(MlpParams& p, double a, const Gradients& g) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& dst = p.layers[l];
        const auto& src = g.layers[l];
        for (std::size_t i = 0; i < dst.w.size(); ++i)
            dst.w[i] += a * src.w[i];
        for (std::size_t i = 0; i < dst.b.size(); ++i)
            dst.b[i] += a * src.b[i];
    }
}

void grad_axpy(Gradients& dst, double a, const Gradients& g) {
    for (std::size_t l = 0; l < dst.layers.size(); ++l) {
        for (std::size_t i = 0; i < dst.layers[l].w.size(); ++i)
            dst.layers[l].w[i] += a * g.layers[l].w[i];
        for (std::size_t i = 0; i < dst.layers[l].b.size(); ++i)
            dst.layers[l].b[i] += a * g.layers[l].b[i];
    }
}

void grad_scale(Gradients& g, double a) {
    for (auto& l : g.layers) {
        for (auto& w : l.w)
            w *= a;
        for (auto& b : l.b)
            b *= a;
    }
}

double grad_dot(const Gradients& a, const Gradients& b) {
    double acc = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        for (std::size_t i = 0; i < a.layers[l].w.size(); ++i)
            acc += a.layers[l].w[i] * b.layers[l].w[i];
        for (std::size_t i = 0; i < a.layers[l].b.size(); ++i)
            acc += a.layers[l].b[i] * b.layers[l].b[i];
    }
    return acc;
}

ForwardPass mlp_forward(const MlpParams& p, BatchView x) {
    if (x.width != p.input_dim())
        throw data_error("mlp_forward: input width " + std::to_string(x.width) +
                         " does not match model input " + std::to_string(p.input_dim()));
    ForwardPass fwd;
    fwd.n = x.n;
    fwd.act.reserve(p.layers.size());

    const double* cur = x.data;
    std::size_t cur_width = x.width;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const Layer& layer = p.layers[l];
        std::vector<double> out(x.n * layer.out);
        for (std::size_t i = 0; i < x.n; ++i) {
            const double* row = cur + i * cur_width;
            double* o = out.data() + i * layer.out;
            for (std::size_t u = 0; u < layer.out; ++u)
                o[u] = layer.b[u] + dot(layer.w.data() + u * layer.in, row, layer.in);
        }
        const bool is_output = l + 1 == p.layers.size();
        if (!is_output)
            for (auto& v : out)
                v = v > 0.0 ? v : 0.0;
        fwd.act.push_back(std::move(out));
        cur = fwd.act.back().data();
        cur_width = layer.out;
    }
    return fwd;
}

std::vector<double> mlp_forward_row(const MlpParams& p, std::span<const double> x) {
    BatchView view{x.data(), 1, x.size()};
    auto fwd = mlp_forward(p, view);
    return fwd.act.back();
}

Gradients mlp_backward(const MlpParams& p, BatchView x, const ForwardPass& fwd,
                       std::span<const double> dlogits, std::vector<double>* dinput) {
    const std::size_t n = fwd.n;
    const std::size_t layers = p.layers.size();
    if (dlogits.size() != n * p.output_dim())
        throw data_error("mlp_backward: dlogits shape mismatch");

    Gradients grads = zeros_like(p);
    std::vector<double> delta(dlogits.begin(), dlogits.end());

    for (std::size_t l = layers; l-- > 0;) {
        const Layer& layer = p.layers[l];
        const double* below = l == 0 ? x.data : fwd.act[l - 1].data();
        const std::size_t below_width = layer.in;

        Layer& g = grads.layers[l];
        for (std::size_t i = 0; i < n; ++i) {
            const double* drow = delta.data() + i * layer.out;
            const double* arow = below + i * below_width;
            for (std::size_t u = 0; u < layer.out; ++u) {
                const double du = drow[u];
                if (du == 0.0)
                    continue;
                double* gw = g.w.data() + u * layer.in;
                for (std::size_t j = 0; j < layer.in; ++j)
                    gw[j] += du * arow[j];
                g.b[u] += du;
            }
        }

        const bool need_below = l > 0 || dinput != nullptr;
        if (!need_below)
            break;

        std::vector<double> prev(n * below_width, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* drow = delta.data() + i * layer.out;
            double* prow = prev.data() + i * below_width;
            for (std::size_t u = 0; u < layer.out; ++u) {
                const double du = drow[u];
                if (du == 0.0)
                    continue;
                const double* w = layer.w.data() + u * layer.in;
                for (std::size_t j = 0; j < layer.in; ++j)
                    prow[j] += du * w[j];
            }
        }
        if (l > 0) {
            // Rectifier mask: units at or below zero pass no gradient.
            const auto& act = fwd.act[l - 1];
            for (std::size_t i = 0; i < prev.size(); ++i)
                if (act[i] <= 0.0)
                    prev[i] = 0.0;
        }
        if (l == 0 && dinput != nullptr) {
            *dinput = std::move(prev);
            break;
        }
        delta = std::move(prev);
    }
    return grads;
}

std::vector<double> softmax_rows(std::span<const double> logits, std::size_t n, std::size_t k) {
    std::vector<double> probs(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        double* p = probs.data() + i * k;
        double m = row[0];
        for (std::size_t c = 1; c < k; ++c)
            m = std::max(m, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            p[c] = std::exp(row[c] - m);
            sum += p[c];
        }
        for (std::size_t c = 0; c < k; ++c)
            p[c] /= sum;
    }
    return probs;
}

double cross_entropy(std::span<const double> logits, std::size_t n, std::size_t k,
                     std::span<const std::size_t> labels, std::span<const double> weights) {
    if (labels.size() != n || weights.size() != n)
        throw data_error("cross_entropy: shape mismatch");
    double weight_sum = 0.0;
    for (double w : weights)
        weight_sum += w;
    if (weight_sum <= 0.0)
        throw data_error("cross_entropy: all weights are zero");

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0)
            continue;
        const double* row = logits.data() + i * k;
        double m = row[0];
        for (std::size_t c = 1; c < k; ++c)
            m = std::max(m, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            sum += std::exp(row[c] - m);
        const double ce = std::log(sum) - (row[labels[i]] - m);
        loss += weights[i] * ce;
    }
    const double out = loss / weight_sum;
    if (!std::isfinite(out))
        throw numeric_error("cross_entropy: non-finite loss");
    return out;
}

std::vector<double> cross_entropy_backward(std::span<const double> logits, std::size_t n,
                                           std::size_t k, std::span<const std::size_t> labels,
                                           std::span<const double> weights) {
    if (labels.size() != n || weights.size() != n)
        throw data_error("cross_entropy_backward: shape mismatch");
    double weight_sum = 0.0;
    for (double w : weights)
        weight_sum += w;
    if (weight_sum <= 0.0)
        throw data_error("cross_entropy_backward: all weights are zero");

    std::vector<double> dlogits(n * k, 0.0);
    auto probs = softmax_rows(logits, n, k);
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0)
            continue; // zero-weight rows contribute an exactly-zero gradient
        const double scale = weights[i] / weight_sum;
        const double* p = probs.data() + i * k;
        double* d = dlogits.data() + i * k;
        for (std::size_t c = 0; c < k; ++c)
            d[c] = scale * (p[c] - (c == labels[i] ? 1.0 : 0.0));
    }
    return dlogits;
}

} // namespace fewshot
