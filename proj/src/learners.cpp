#include "fewshot/learners.hpp"

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fewshot {

namespace {

std::size_t argmax_row(const double* row, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
        if (row[c] > row[best])
            best = c; // ties keep the lowest index
    return best;
}

std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, 1.0); }

double accuracy_of(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += pred[i] == truth[i];
    return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

void check_grads_finite(const Gradients& g, const char* what) {
    for (const auto& l : g.layers) {
        for (double w : l.w)
            if (!std::isfinite(w))
                throw numeric_error(std::string(what) + ": non-finite gradient");
        for (double b : l.b)
            if (!std::isfinite(b))
                throw numeric_error(std::string(what) + ": non-finite gradient");
    }
}

// Adam with bias correction; lr = 0 leaves the parameters untouched.
void adam_update(MlpParams& params, AdamState& state, const Gradients& grad, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (state.t == 0) {
        state.m = zeros_like(params);
        state.v = zeros_like(params);
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto step_one = [&](double& p, double& m, double& v, double g) {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
        };
        auto& pl = params.layers[l];
        auto& ml = state.m.layers[l];
        auto& vl = state.v.layers[l];
        const auto& gl = grad.layers[l];
        for (std::size_t i = 0; i < pl.w.size(); ++i)
            step_one(pl.w[i], ml.w[i], vl.w[i], gl.w[i]);
        for (std::size_t i = 0; i < pl.b.size(); ++i)
            step_one(pl.b[i], ml.b[i], vl.b[i], gl.b[i]);
    }
}

// Group gradients for one inner step: weighted-mean CE gradient of the
// support-origin rows and of the retrieved-origin rows, each normalized by
// its own weight mass.
struct GroupGrads {
    Gradients support;
    Gradients retrieved;
    bool has_retrieved = false;
};

GroupGrads inner_group_grads(const MlpParams& params, const FeatureMatrix& x,
                             const MamlConfig& cfg) {
    const std::size_t n = x.count();
    const std::size_t k = params.output_dim();
    BatchView view = batch_view(x);
    ForwardPass fwd = mlp_forward(params, view);
    auto probs = softmax_rows(fwd.logits(), n, k);

    double w_support = 0.0, w_retrieved = 0.0;
    std::vector<double> loss_w(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (x.origin[i] == RowOrigin::retrieved) {
            loss_w[i] = cfg.weighted_loss ? x.weights[i] : 1.0;
            w_retrieved += loss_w[i];
        } else {
            loss_w[i] = 1.0;
            w_support += loss_w[i];
        }
    }
    if (w_support <= 0.0)
        throw data_error("maml_inner_adapt: no support rows");

    auto group_dlogits = [&](RowOrigin origin, double mass) {
        std::vector<double> d(n * k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (x.origin[i] != origin || loss_w[i] == 0.0)
                continue;
            const double scale = loss_w[i] / mass;
            const double* p = probs.data() + i * k;
            double* row = d.data() + i * k;
            for (std::size_t c = 0; c < k; ++c)
                row[c] = scale * (p[c] - (c == x.labels[i] ? 1.0 : 0.0));
        }
        return d;
    };

    GroupGrads out;
    auto ds = group_dlogits(RowOrigin::support, w_support);
    out.support = mlp_backward(params, view, fwd, ds);
    if (w_retrieved > 0.0) {
        auto dr = group_dlogits(RowOrigin::retrieved, w_retrieved);
        out.retrieved = mlp_backward(params, view, fwd, dr);
        out.has_retrieved = true;
    } else {
        out.retrieved = zeros_like(params);
    }
    return out;
}

InnerAdaptTrace inner_adapt_impl(const MlpParams& params, const FeatureMatrix& support_x,
                                 const MamlConfig& cfg, double eta_s, double eta_r,
                                 bool want_trace) {
    InnerAdaptTrace tr;
    tr.params = params;
    if (want_trace) {
        tr.sum_support = zeros_like(params);
        tr.sum_retrieved = zeros_like(params);
    }
    for (int step = 0; step < cfg.inner_steps; ++step) {
        GroupGrads g = inner_group_grads(tr.params, support_x, cfg);
        if (eta_s != 0.0)
            axpy(tr.params, -eta_s, g.support);
        if (g.has_retrieved && eta_r != 0.0)
            axpy(tr.params, -eta_r, g.retrieved);
        if (want_trace) {
            grad_axpy(tr.sum_support, 1.0, g.support);
            grad_axpy(tr.sum_retrieved, 1.0, g.retrieved);
        }
    }
    check_finite(tr.params, "maml_inner_adapt");
    return tr;
}

} // namespace

std::string to_string(Method m) {
    switch (m) {
    case Method::lr: return "lr";
    case Method::maml: return "maml";
    case Method::protonet: return "protonet";
    case Method::zs: return "zs";
    }
    return "lr";
}

Method method_from_string(const std::string& s) {
    if (s == "lr")
        return Method::lr;
    if (s == "maml")
        return Method::maml;
    if (s == "protonet")
        return Method::protonet;
    if (s == "zs")
        return Method::zs;
    throw data_error("unknown method '" + s + "'");
}

// ---- logistic regression ----------------------------------------------------

std::vector<std::size_t> lr_fit_predict(const FeatureMatrix& support_x,
                                        const FeatureMatrix& query_x, const LrConfig& cfg) {
    const std::size_t n = support_x.count();
    const std::size_t width = support_x.width;
    if (n == 0)
        throw data_error("lr_fit_predict: empty support matrix");
    if (query_x.width != width)
        throw data_error("lr_fit_predict: width mismatch");

    std::size_t k = 0;
    for (auto label : support_x.labels)
        k = std::max(k, label + 1);
    std::set<std::size_t> distinct(support_x.labels.begin(), support_x.labels.end());
    if (distinct.size() < 2)
        throw data_error("lr_fit_predict: degenerate single-class input");

    // Single affine layer trained by full-batch gradient descent with a
    // backtracking line search on J = mean CE + lambda/(2n) ||W||^2.
    // Retrieved rows participate with loss weight 1.
    MlpParams model;
    model.layers.push_back(
        {width, k, std::vector<double>(width * k, 0.0), std::vector<double>(k, 0.0)});

    BatchView x = batch_view(support_x);
    auto ones = uniform_weights(n);
    const double reg = cfg.lambda / (2.0 * static_cast<double>(n));

    auto objective = [&](const MlpParams& m) {
        ForwardPass fwd = mlp_forward(m, x);
        double j = cross_entropy(fwd.logits(), n, k, support_x.labels, ones);
        double w2 = 0.0;
        for (double w : m.layers[0].w)
            w2 += w * w;
        return j + reg * w2;
    };

    double step = 1.0;
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        ForwardPass fwd = mlp_forward(model, x);
        auto dlogits = cross_entropy_backward(fwd.logits(), n, k, support_x.labels, ones);
        Gradients g = mlp_backward(model, x, fwd, dlogits);
        for (std::size_t i = 0; i < g.layers[0].w.size(); ++i)
            g.layers[0].w[i] += 2.0 * reg * model.layers[0].w[i];

        double gnorm_inf = 0.0, gnorm2 = 0.0;
        for (const auto& vec : {std::cref(g.layers[0].w), std::cref(g.layers[0].b)})
            for (double v : vec.get()) {
                gnorm_inf = std::max(gnorm_inf, std::abs(v));
                gnorm2 += v * v;
            }
        if (gnorm_inf <= cfg.tol)
            break;

        const double j0 = objective(model);
        step = std::min(step * 2.0, 16.0);
        MlpParams trial = model;
        for (int halvings = 0;; ++halvings) {
            trial = model;
            axpy(trial, -step, g);
            if (objective(trial) <= j0 - 0.5 * step * gnorm2)
                break;
            if (halvings > 60)
                throw numeric_error("lr_fit_predict: line search failed");
            step *= 0.5;
        }
        model = std::move(trial);
    }
    check_finite(model, "lr_fit_predict");

    BatchView q = batch_view(query_x);
    ForwardPass fwd = mlp_forward(model, q);
    std::vector<std::size_t> pred(query_x.count());
    for (std::size_t i = 0; i < pred.size(); ++i)
        pred[i] = argmax_row(fwd.logits().data() + i * k, k);
    return pred;
}

// ---- MAML -------------------------------------------------------------------

MlpParams maml_inner_adapt(const MlpParams& params, const FeatureMatrix& support_x,
                           const MamlConfig& cfg) {
    return inner_adapt_impl(params, support_x, cfg, cfg.inner_lr_support, cfg.inner_lr_retrieval,
                            false)
        .params;
}

InnerAdaptTrace maml_inner_adapt_traced(const MlpParams& params, const FeatureMatrix& support_x,
                                        const MamlConfig& cfg) {
    return inner_adapt_impl(params, support_x, cfg, cfg.inner_lr_support, cfg.inner_lr_retrieval,
                            true);
}

OuterStats maml_outer_step(MamlLearner& learner, std::span<const AugmentedEpisode> batch,
                           const MamlConfig& cfg, bool similarity_channel) {
    if (batch.empty())
        throw data_error("maml_outer_step: empty batch");

    OuterStats stats;
    stats.meta_grad = zeros_like(learner.params);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double d_eta_s = 0.0, d_eta_r = 0.0;
    std::size_t correct = 0, total = 0;

    MamlConfig live = cfg;
    live.inner_lr_support = learner.eta_s;
    live.inner_lr_retrieval = learner.eta_r;

    for (const auto& aug : batch) {
        Features f = build_features(aug, similarity_channel);
        InnerAdaptTrace tr = inner_adapt_impl(learner.params, f.support_x, live, learner.eta_s,
                                              learner.eta_r, cfg.learn_inner_lrs);

        const std::size_t nq = f.query_x.count();
        const std::size_t k = learner.params.output_dim();
        BatchView q = batch_view(f.query_x);
        ForwardPass fwd = mlp_forward(tr.params, q);
        auto ones = uniform_weights(nq);
        stats.query_loss += inv_batch * cross_entropy(fwd.logits(), nq, k, f.query_x.labels, ones);

        auto dlogits = cross_entropy_backward(fwd.logits(), nq, k, f.query_x.labels, ones);
        Gradients g = mlp_backward(tr.params, q, fwd, dlogits);
        grad_axpy(stats.meta_grad, inv_batch, g);

        if (cfg.learn_inner_lrs) {
            d_eta_s += inv_batch * -grad_dot(g, tr.sum_support);
            d_eta_r += inv_batch * -grad_dot(g, tr.sum_retrieved);
        }

        for (std::size_t i = 0; i < nq; ++i)
            correct += argmax_row(fwd.logits().data() + i * k, k) == f.query_x.labels[i];
        total += nq;
    }
    stats.query_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    check_grads_finite(stats.meta_grad, "maml_outer_step");

    adam_update(learner.params, learner.opt, stats.meta_grad, cfg.outer_lr);
    check_finite(learner.params, "maml_outer_step");

    if (cfg.learn_inner_lrs) {
        if (!std::isfinite(d_eta_s) || !std::isfinite(d_eta_r))
            throw numeric_error("maml_outer_step: non-finite learning-rate gradient");
        learner.eta_s = std::clamp(learner.eta_s - cfg.outer_lr * d_eta_s, 1e-4, 1.0);
        learner.eta_r = std::clamp(learner.eta_r - cfg.outer_lr * d_eta_r, 1e-4, 1.0);
    }
    return stats;
}

// ---- ProtoNet ---------------------------------------------------------------

ProtoEpisodeResult protonet_episode(const MlpParams& params, const AugmentedEpisode& aug,
                                    const ProtoConfig& cfg, bool similarity_channel, bool train) {
    Features f = build_features(aug, similarity_channel);
    const std::size_t n_way = aug.base.classes.size();
    const std::size_t h = params.output_dim();
    const std::size_t ns = f.support_x.count();
    const std::size_t nq = f.query_x.count();

    BatchView sx = batch_view(f.support_x);
    BatchView qx = batch_view(f.query_x);
    ForwardPass fs = mlp_forward(params, sx);
    ForwardPass fq = mlp_forward(params, qx);
    const auto& zs = fs.logits(); // head output, ns x h
    const auto& zq = fq.logits(); // nq x h

    // Prototypes: plain means of the embedded support rows per class, plus
    // retrieved rows when configured.
    std::vector<double> proto(n_way * h, 0.0);
    std::vector<double> members(n_way, 0.0);
    std::vector<bool> in_proto(ns, false);
    for (std::size_t i = 0; i < ns; ++i) {
        if (f.support_x.origin[i] == RowOrigin::retrieved && !cfg.include_retrieved_in_prototypes)
            continue;
        in_proto[i] = true;
        const std::size_t c = f.support_x.labels[i];
        members[c] += 1.0;
        const double* z = zs.data() + i * h;
        double* p = proto.data() + c * h;
        for (std::size_t j = 0; j < h; ++j)
            p[j] += z[j];
    }
    for (std::size_t c = 0; c < n_way; ++c) {
        if (members[c] == 0.0)
            throw data_error("protonet_episode: class '" + aug.base.classes[c] +
                             "' has no prototype members");
        double* p = proto.data() + c * h;
        for (std::size_t j = 0; j < h; ++j)
            p[j] /= members[c];
    }

    // Logits: negative squared distance to each prototype.
    std::vector<double> logits(nq * n_way);
    for (std::size_t i = 0; i < nq; ++i) {
        const double* z = zq.data() + i * h;
        for (std::size_t c = 0; c < n_way; ++c) {
            const double* p = proto.data() + c * h;
            double dist2 = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
                const double t = z[j] - p[j];
                dist2 += t * t;
            }
            logits[i * n_way + c] = -dist2;
        }
    }

    ProtoEpisodeResult res;
    auto ones = uniform_weights(nq);
    res.loss = cross_entropy(logits, nq, n_way, f.query_x.labels, ones);
    res.predictions.resize(nq);
    for (std::size_t i = 0; i < nq; ++i)
        res.predictions[i] = argmax_row(logits.data() + i * n_way, n_way);

    if (!train)
        return res;

    auto dlogits = cross_entropy_backward(logits, nq, n_way, f.query_x.labels, ones);

    // d(loss)/d(query embedding) and d(loss)/d(prototype).
    std::vector<double> dzq(nq * h, 0.0);
    std::vector<double> dproto(n_way * h, 0.0);
    for (std::size_t i = 0; i < nq; ++i) {
        const double* z = zq.data() + i * h;
        double* dz = dzq.data() + i * h;
        for (std::size_t c = 0; c < n_way; ++c) {
            const double g = dlogits[i * n_way + c];
            if (g == 0.0)
                continue;
            const double* p = proto.data() + c * h;
            double* dp = dproto.data() + c * h;
            for (std::size_t j = 0; j < h; ++j) {
                const double diff = z[j] - p[j];
                dz[j] += -2.0 * g * diff;
                dp[j] += 2.0 * g * diff;
            }
        }
    }

    // Prototype gradients spread evenly over their members.
    std::vector<double> dzs(ns * h, 0.0);
    for (std::size_t i = 0; i < ns; ++i) {
        if (!in_proto[i])
            continue;
        const std::size_t c = f.support_x.labels[i];
        const double* dp = dproto.data() + c * h;
        double* dz = dzs.data() + i * h;
        for (std::size_t j = 0; j < h; ++j)
            dz[j] = dp[j] / members[c];
    }

    Gradients grads = mlp_backward(params, sx, fs, dzs);
    Gradients gq = mlp_backward(params, qx, fq, dzq);
    grad_axpy(grads, 1.0, gq);
    check_grads_finite(grads, "protonet_episode");
    res.grads = std::move(grads);
    return res;
}

// ---- zero-shot ----------------------------------------------------------------

std::vector<std::size_t> zero_shot_predict(std::span<const EpisodeRow> query_rows,
                                           std::span<const std::vector<float>> class_text) {
    if (class_text.empty())
        throw data_error("zero_shot_predict: no classes");
    const std::size_t d = class_text.front().size();

    std::vector<std::size_t> pred;
    pred.reserve(query_rows.size());
    for (const auto& row : query_rows) {
        if (row.vec.size() != d)
            throw data_error("zero_shot_predict: dim mismatch");
        double qnorm2 = 0.0;
        for (float v : row.vec)
            qnorm2 += static_cast<double>(v) * static_cast<double>(v);
        if (qnorm2 == 0.0)
            throw data_error("zero_shot_predict: zero query vector");
        const double qnorm = std::sqrt(qnorm2);

        std::size_t best = 0;
        double best_score = -2.0;
        for (std::size_t c = 0; c < class_text.size(); ++c) {
            const auto& t = class_text[c];
            double dot = 0.0, tnorm2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += static_cast<double>(row.vec[j]) * static_cast<double>(t[j]);
                tnorm2 += static_cast<double>(t[j]) * static_cast<double>(t[j]);
            }
            const double score = dot / (qnorm * std::sqrt(tnorm2));
            if (score > best_score) { // ties keep the lowest class index
                best_score = score;
                best = c;
            }
        }
        pred.push_back(best);
    }
    return pred;
}

// ---- training harness ---------------------------------------------------------

AugmentedEpisode AugmentCache::get(const DatasetBundle& ds, Split split,
                                   const EpisodeConfig& config, std::uint64_t episode_index,
                                   std::size_t a) {
    if (a > a_max_)
        throw data_error("AugmentCache: request above a_max");
    std::ostringstream key;
    key << ds.name << '|' << to_string(split) << '|' << config.seed << '|' << episode_index << '|'
        << config.n_way << ',' << config.k_shot << ',' << config.q_query << ',' << config.alpha_t;
    auto it = store_.find(key.str());
    if (it == store_.end()) {
        Episode ep = sample_episode(*ds.eval, ds.text, split, config, episode_index);
        AugmentedEpisode aug;
        if (a_max_ == 0) {
            aug.base = std::move(ep);
            aug.per_class = 0;
        } else {
            if (!ds.index)
                throw data_error("AugmentCache: dataset '" + ds.name + "' has no index");
            EpisodeConfig full = config;
            full.a_augment = a_max_;
            aug = augment(ep, *ds.index, full);
        }
        it = store_.emplace(key.str(), std::move(aug)).first;
    }
    if (a == it->second.per_class)
        return it->second;
    return slice_augmented(it->second, a);
}

namespace {

AugmentedEpisode fetch_episode(const DatasetBundle& ds, Split split, const EpisodeConfig& config,
                               std::uint64_t episode_index, AugmentCache* cache) {
    if (cache)
        return cache->get(ds, split, config, episode_index, config.a_augment);
    Episode ep = sample_episode(*ds.eval, ds.text, split, config, episode_index);
    if (config.a_augment == 0) {
        AugmentedEpisode aug;
        aug.base = std::move(ep);
        return aug;
    }
    if (!ds.index)
        throw data_error("dataset '" + ds.name + "' has no retrieval index");
    return augment(ep, *ds.index, config);
}

std::vector<std::size_t> query_labels(const Episode& ep) {
    std::vector<std::size_t> labels;
    labels.reserve(ep.query.size());
    for (const auto& row : ep.query)
        labels.push_back(row.class_index);
    return labels;
}

double episode_accuracy(const TrainedModel& model, const AugmentedEpisode& aug) {
    switch (model.method) {
    case Method::maml: {
        Features f = build_features(aug, model.similarity_channel);
        MamlConfig cfg = model.maml;
        cfg.inner_lr_support = model.eta_s;
        cfg.inner_lr_retrieval = model.eta_r;
        MlpParams adapted = maml_inner_adapt(model.params, f.support_x, cfg);
        BatchView q = batch_view(f.query_x);
        ForwardPass fwd = mlp_forward(adapted, q);
        const std::size_t k = model.params.output_dim();
        std::vector<std::size_t> pred(f.query_x.count());
        for (std::size_t i = 0; i < pred.size(); ++i)
            pred[i] = argmax_row(fwd.logits().data() + i * k, k);
        return accuracy_of(pred, f.query_x.labels);
    }
    case Method::protonet: {
        auto res = protonet_episode(model.params, aug, model.proto, model.similarity_channel,
                                    false);
        return accuracy_of(res.predictions, query_labels(aug.base));
    }
    default:
        throw data_error("episode_accuracy: not a trained method");
    }
}

EvalStats stats_from(const std::vector<double>& per_episode) {
    EvalStats s;
    s.episodes = per_episode.size();
    if (per_episode.empty())
        return s;
    double mean = std::accumulate(per_episode.begin(), per_episode.end(), 0.0) /
                  static_cast<double>(per_episode.size());
    double var = 0.0;
    for (double a : per_episode)
        var += (a - mean) * (a - mean);
    var /= static_cast<double>(per_episode.size());
    s.accuracy = mean;
    s.episode_std = std::sqrt(var);
    return s;
}

bool split_supports(const DatasetBundle& ds, Split split, const EpisodeConfig& config) {
    auto by_label = rows_by_label(*ds.eval, split);
    std::size_t eligible = 0;
    for (const auto& [label, rows] : by_label)
        eligible += rows.size() >= config.k_shot + config.q_query;
    return eligible >= config.n_way;
}

} // namespace

EvalStats evaluate_model(const TrainedModel& model, const DatasetBundle& ds, Split split,
                         int episodes, const EpisodeConfig& episode_cfg, std::uint64_t seed,
                         AugmentCache* cache) {
    EpisodeConfig ec = episode_cfg;
    ec.seed = seed;
    std::vector<double> per_episode;
    per_episode.reserve(episodes);
    for (int e = 0; e < episodes; ++e) {
        AugmentedEpisode aug = fetch_episode(ds, split, ec, e, cache);
        per_episode.push_back(episode_accuracy(model, aug));
    }
    return stats_from(per_episode);
}

EvalStats evaluate_untrained(Method method, const DatasetBundle& ds, Split split, int episodes,
                             const EpisodeConfig& episode_cfg, std::uint64_t seed,
                             bool similarity_channel, AugmentCache* cache) {
    if (method != Method::lr && method != Method::zs)
        throw data_error("evaluate_untrained: method must be lr or zs");
    EpisodeConfig ec = episode_cfg;
    ec.seed = seed;
    if (method == Method::zs)
        ec.a_augment = 0; // zero-shot ignores support and retrieval entirely

    std::vector<double> per_episode;
    per_episode.reserve(episodes);
    for (int e = 0; e < episodes; ++e) {
        AugmentedEpisode aug = fetch_episode(ds, split, ec, e, cache);
        if (method == Method::lr) {
            Features f = build_features(aug, similarity_channel);
            auto pred = lr_fit_predict(f.support_x, f.query_x);
            per_episode.push_back(accuracy_of(pred, f.query_x.labels));
        } else {
            auto pred = zero_shot_predict(aug.base.query, aug.base.class_text);
            per_episode.push_back(accuracy_of(pred, query_labels(aug.base)));
        }
    }
    return stats_from(per_episode);
}

TrainedModel train_model(const MethodConfig& cfg, const DatasetBundle& ds,
                         const EpisodeConfig& episode_cfg, const TrainOptions& opts,
                         std::uint64_t seed, AugmentCache* cache, TrainReport* curves) {
    EpisodeConfig ec = episode_cfg;
    ec.seed = seed;
    const std::size_t input_width = ds.eval->dim + (opts.similarity_channel ? 1 : 0);
    const bool can_validate =
        opts.val_interval > 0 && opts.val_episodes > 0 && split_supports(ds, Split::val, ec);

    TrainedModel model;
    model.similarity_channel = opts.similarity_channel;

    if (std::holds_alternative<MamlConfig>(cfg)) {
        const auto& mc = std::get<MamlConfig>(cfg);
        model.method = Method::maml;
        model.maml = mc;
        model.params = make_mlp(input_width, mc.hidden, ec.n_way,
                                derive_key({seed, hash_str("maml-init")}));
        if (mc.zero_output_init)
            std::fill(model.params.layers.back().w.begin(), model.params.layers.back().w.end(),
                      0.0);
        MamlLearner learner;
        learner.params = model.params;
        learner.eta_s = mc.inner_lr_support;
        learner.eta_r = mc.inner_lr_retrieval;

        for (int step = 0; step < opts.max_steps; ++step) {
            std::vector<AugmentedEpisode> batch;
            batch.reserve(opts.batch_size);
            for (int b = 0; b < opts.batch_size; ++b)
                batch.push_back(fetch_episode(ds, Split::train, ec,
                                              static_cast<std::uint64_t>(step) * opts.batch_size + b,
                                              cache));
            OuterStats stats = maml_outer_step(learner, batch, mc, opts.similarity_channel);
            if (curves) {
                curves->train_loss_curve.push_back(stats.query_loss);
                if (can_validate && (step + 1) % opts.val_interval == 0) {
                    TrainedModel snapshot = model;
                    snapshot.params = learner.params;
                    snapshot.eta_s = learner.eta_s;
                    snapshot.eta_r = learner.eta_r;
                    curves->val_accuracy_curve.push_back(
                        evaluate_model(snapshot, ds, Split::val, opts.val_episodes, episode_cfg,
                                       seed, cache)
                            .accuracy);
                }
            }
        }
        model.params = std::move(learner.params);
        model.eta_s = learner.eta_s;
        model.eta_r = learner.eta_r;
    } else {
        const auto& pc = std::get<ProtoConfig>(cfg);
        if (pc.hidden.empty())
            throw data_error("train_model: protonet head needs at least one layer width");
        model.method = Method::protonet;
        model.proto = pc;
        std::vector<std::size_t> hidden(pc.hidden.begin(), pc.hidden.end() - 1);
        model.params = make_mlp(input_width, hidden, pc.hidden.back(),
                                derive_key({seed, hash_str("proto-init")}));
        AdamState opt;

        for (int step = 0; step < opts.max_steps; ++step) {
            Gradients grad = zeros_like(model.params);
            double loss = 0.0;
            const double inv_batch = 1.0 / static_cast<double>(opts.batch_size);
            for (int b = 0; b < opts.batch_size; ++b) {
                AugmentedEpisode aug = fetch_episode(
                    ds, Split::train, ec, static_cast<std::uint64_t>(step) * opts.batch_size + b,
                    cache);
                auto res = protonet_episode(model.params, aug, pc, opts.similarity_channel, true);
                grad_axpy(grad, inv_batch, *res.grads);
                loss += inv_batch * res.loss;
            }
            adam_update(model.params, opt, grad, pc.outer_lr);
            check_finite(model.params, "protonet training");
            if (curves) {
                curves->train_loss_curve.push_back(loss);
                if (can_validate && (step + 1) % opts.val_interval == 0)
                    curves->val_accuracy_curve.push_back(
                        evaluate_model(model, ds, Split::val, opts.val_episodes, episode_cfg, seed,
                                       cache)
                            .accuracy);
            }
        }
    }
    if (curves) {
        curves->steps = opts.max_steps;
        curves->input_width = input_width;
    }
    return model;
}

TrainReport train_learner(const MethodConfig& cfg, const DatasetBundle& ds,
                          const EpisodeConfig& episode_cfg, const TrainOptions& opts,
                          std::span<const std::uint64_t> seeds, AugmentCache* cache) {
    if (seeds.empty())
        throw data_error("train_learner: need at least one seed");

    TrainReport report;
    report.input_width = ds.eval->dim + (opts.similarity_channel ? 1 : 0);
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        TrainReport* curves = s == 0 ? &report : nullptr;
        TrainedModel model = train_model(cfg, ds, episode_cfg, opts, seeds[s], cache, curves);
        EvalStats stats =
            evaluate_model(model, ds, Split::test, opts.eval_episodes, episode_cfg, seeds[s], cache);
        report.per_seed.push_back({seeds[s], stats.accuracy, stats.episode_std});
    }
    report.steps = opts.max_steps;

    double mean = 0.0;
    for (const auto& r : report.per_seed)
        mean += r.test_accuracy;
    mean /= static_cast<double>(report.per_seed.size());
    double var = 0.0;
    for (const auto& r : report.per_seed)
        var += (r.test_accuracy - mean) * (r.test_accuracy - mean);
    var /= static_cast<double>(report.per_seed.size());
    report.final_test_accuracy = mean;
    report.accuracy_std = std::sqrt(var);
    return report;
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const TrainedModel& model, int step, std::uint64_t seed,
                     const EpisodeConfig& episode_cfg, const std::filesystem::path& path) {
    nlohmann::json header;
    header["method"] = to_string(model.method);
    header["step"] = step;
    header["seed"] = seed;
    header["similarity_channel"] = model.similarity_channel;
    header["eta_s"] = model.eta_s;
    header["eta_r"] = model.eta_r;
    header["maml"] = {{"inner_lr_support", model.maml.inner_lr_support},
                      {"inner_lr_retrieval", model.maml.inner_lr_retrieval},
                      {"outer_lr", model.maml.outer_lr},
                      {"inner_steps", model.maml.inner_steps},
                      {"hidden", model.maml.hidden},
                      {"weighted_loss", model.maml.weighted_loss},
                      {"learn_inner_lrs", model.maml.learn_inner_lrs}};
    header["proto"] = {{"hidden", model.proto.hidden},
                       {"outer_lr", model.proto.outer_lr},
                       {"include_retrieved_in_prototypes",
                        model.proto.include_retrieved_in_prototypes}};
    header["episode"] = {{"n_way", episode_cfg.n_way},     {"k_shot", episode_cfg.k_shot},
                         {"q_query", episode_cfg.q_query}, {"a_augment", episode_cfg.a_augment},
                         {"alpha_t", episode_cfg.alpha_t}, {"seed", episode_cfg.seed}};
    auto layers = nlohmann::json::array();
    for (const auto& l : model.params.layers)
        layers.push_back({{"in", l.in}, {"out", l.out}});
    header["layers"] = std::move(layers);

    const std::string json = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw data_error("cannot open for writing: " + path.string());
    std::uint64_t len = json.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    for (const auto& l : model.params.layers) {
        out.write(reinterpret_cast<const char*>(l.w.data()),
                  static_cast<std::streamsize>(l.w.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(l.b.data()),
                  static_cast<std::streamsize>(l.b.size() * sizeof(double)));
    }
    if (!out)
        throw data_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("cannot open checkpoint: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string json(len, '\0');
    in.read(json.data(), static_cast<std::streamsize>(len));
    if (!in)
        throw data_error("truncated checkpoint header: " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad checkpoint header " + path.string() + ": " + e.what());
    }

    Checkpoint ck;
    ck.step = header.at("step").get<int>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.model.method = method_from_string(header.at("method").get<std::string>());
    ck.model.similarity_channel = header.at("similarity_channel").get<bool>();
    ck.model.eta_s = header.at("eta_s").get<double>();
    ck.model.eta_r = header.at("eta_r").get<double>();
    const auto& m = header.at("maml");
    ck.model.maml.inner_lr_support = m.at("inner_lr_support").get<double>();
    ck.model.maml.inner_lr_retrieval = m.at("inner_lr_retrieval").get<double>();
    ck.model.maml.outer_lr = m.at("outer_lr").get<double>();
    ck.model.maml.inner_steps = m.at("inner_steps").get<int>();
    ck.model.maml.hidden = m.at("hidden").get<std::vector<std::size_t>>();
    ck.model.maml.weighted_loss = m.at("weighted_loss").get<bool>();
    ck.model.maml.learn_inner_lrs = m.at("learn_inner_lrs").get<bool>();
    const auto& p = header.at("proto");
    ck.model.proto.hidden = p.at("hidden").get<std::vector<std::size_t>>();
    ck.model.proto.outer_lr = p.at("outer_lr").get<double>();
    ck.model.proto.include_retrieved_in_prototypes =
        p.at("include_retrieved_in_prototypes").get<bool>();
    const auto& e = header.at("episode");
    ck.episode_cfg.n_way = e.at("n_way").get<std::size_t>();
    ck.episode_cfg.k_shot = e.at("k_shot").get<std::size_t>();
    ck.episode_cfg.q_query = e.at("q_query").get<std::size_t>();
    ck.episode_cfg.a_augment = e.at("a_augment").get<std::size_t>();
    ck.episode_cfg.alpha_t = e.at("alpha_t").get<double>();
    ck.episode_cfg.seed = e.at("seed").get<std::uint64_t>();

    for (const auto& l : header.at("layers")) {
        Layer layer;
        layer.in = l.at("in").get<std::size_t>();
        layer.out = l.at("out").get<std::size_t>();
        layer.w.resize(layer.in * layer.out);
        layer.b.resize(layer.out);
        in.read(reinterpret_cast<char*>(layer.w.data()),
                static_cast<std::streamsize>(layer.w.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(layer.b.data()),
                static_cast<std::streamsize>(layer.b.size() * sizeof(double)));
        ck.model.params.layers.push_back(std::move(layer));
    }
    if (!in)
        throw data_error("truncated checkpoint blob: " + path.string());
    return ck;
}

} // namespace fewshot
