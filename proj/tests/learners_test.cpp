#include "fewshot/learners.hpp"

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace fewshot;

namespace {

// A small augmented episode with deterministic contents. Retrieved scores
// land strictly inside (0, 1) so the weighted loss path is exercised.
AugmentedEpisode toy_episode(std::size_t n_way, std::size_t k_shot, std::size_t a, std::size_t q,
                             std::size_t dim, std::uint64_t seed) {
    SplitMix64 rng(derive_key({seed, hash_str("toy-episode")}));
    auto unit = [&] {
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
    };

    AugmentedEpisode aug;
    aug.per_class = a;
    int id = 0;
    for (std::size_t c = 0; c < n_way; ++c) {
        aug.base.classes.push_back("cls" + std::to_string(c));
        aug.base.class_text.push_back(unit());
        for (std::size_t i = 0; i < k_shot; ++i)
            aug.base.support.push_back({"s" + std::to_string(id++), unit(), c});
        for (std::size_t i = 0; i < q; ++i)
            aug.base.query.push_back({"q" + std::to_string(id++), unit(), c});
    }
    for (std::size_t c = 0; c < n_way; ++c)
        for (std::size_t i = 0; i < a; ++i)
            aug.retrieved.push_back(
                {"r" + std::to_string(id++), unit(), 0.3 + 0.4 * rng.uniform(), c});
    return aug;
}

} // namespace

// ---- logistic regression ----------------------------------------------------

TEST_CASE("lr separates two classes with zero noise") {
    FeatureMatrix support, query;
    support.width = query.width = 3;
    support.data = {1.0, 0.0, 0.0, -1.0, 0.0, 0.0};
    support.labels = {0, 1};
    support.weights = {1.0, 1.0};
    support.origin = {RowOrigin::support, RowOrigin::support};
    query.data = {1.0, 0.0, 0.0, -1.0, 0.0, 0.0};
    query.labels = {0, 1};
    query.weights = {1.0, 1.0};
    query.origin = {RowOrigin::query, RowOrigin::query};

    auto pred = lr_fit_predict(support, query);
    CHECK(pred == std::vector<std::size_t>{0, 1});
}

TEST_CASE("lr memorizes one support point per class") {
    AugmentedEpisode aug = toy_episode(4, 1, 0, 1, 8, 17);
    for (std::size_t c = 0; c < 4; ++c)
        aug.base.query[c].vec = aug.base.support[c].vec;
    Features f = build_features(aug, false);
    auto pred = lr_fit_predict(f.support_x, f.query_x);
    CHECK(pred == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("lr rejects single-class input") {
    FeatureMatrix support, query;
    support.width = query.width = 2;
    support.data = {1.0, 0.0, 0.0, 1.0};
    support.labels = {0, 0};
    support.weights = {1.0, 1.0};
    support.origin = {RowOrigin::support, RowOrigin::support};
    query = support;
    CHECK_THROWS_AS(lr_fit_predict(support, query), data_error);
}

// ---- MAML -------------------------------------------------------------------

TEST_CASE("inner adaptation with zero steps is the identity") {
    AugmentedEpisode aug = toy_episode(3, 2, 1, 1, 6, 23);
    Features f = build_features(aug, false);
    MlpParams p = make_mlp(6, std::vector<std::size_t>{4}, 3, 24);
    MamlConfig cfg;
    cfg.inner_steps = 0;
    MlpParams adapted = maml_inner_adapt(p, f.support_x, cfg);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        CHECK(adapted.layers[l].w == p.layers[l].w);
        CHECK(adapted.layers[l].b == p.layers[l].b);
    }
}

TEST_CASE("zero retrieval rate adapts on support rows alone") {
    AugmentedEpisode aug = toy_episode(3, 2, 2, 1, 6, 29);
    Features with_retrieved = build_features(aug, false);
    AugmentedEpisode bare = slice_augmented(aug, 0);
    Features support_only = build_features(bare, false);

    MlpParams p = make_mlp(6, std::vector<std::size_t>{5}, 3, 30);
    MamlConfig cfg;
    cfg.inner_steps = 3;
    cfg.inner_lr_retrieval = 0.0;
    MlpParams a = maml_inner_adapt(p, with_retrieved.support_x, cfg);
    MlpParams b = maml_inner_adapt(p, support_only.support_x, cfg);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        CHECK(a.layers[l].w == b.layers[l].w);
        CHECK(a.layers[l].b == b.layers[l].b);
    }
}

TEST_CASE("one inner step on a linear model matches the closed form") {
    // 2-way, d = 2, one affine layer, one support row per class; the group
    // gradient is the mean of (p - onehot) x input over the two support rows.
    FeatureMatrix support;
    support.width = 2;
    support.data = {0.8, -0.6, -0.6, 0.8};
    support.labels = {0, 1};
    support.weights = {1.0, 1.0};
    support.origin = {RowOrigin::support, RowOrigin::support};

    MlpParams p = make_mlp(2, std::vector<std::size_t>{}, 2, 41);
    MamlConfig cfg;
    cfg.inner_steps = 1;
    cfg.inner_lr_support = 0.04;

    auto softmax2 = [](double a, double b) {
        double m = std::max(a, b);
        double ea = std::exp(a - m), eb = std::exp(b - m);
        return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
    };
    double gw[4] = {0, 0, 0, 0};
    double gb[2] = {0, 0};
    for (int i = 0; i < 2; ++i) {
        const double* x = support.data.data() + 2 * i;
        double l0 = p.layers[0].w[0] * x[0] + p.layers[0].w[1] * x[1] + p.layers[0].b[0];
        double l1 = p.layers[0].w[2] * x[0] + p.layers[0].w[3] * x[1] + p.layers[0].b[1];
        auto [p0, p1] = softmax2(l0, l1);
        double d0 = 0.5 * (p0 - (i == 0 ? 1.0 : 0.0));
        double d1 = 0.5 * (p1 - (i == 1 ? 1.0 : 0.0));
        gw[0] += d0 * x[0];
        gw[1] += d0 * x[1];
        gw[2] += d1 * x[0];
        gw[3] += d1 * x[1];
        gb[0] += d0;
        gb[1] += d1;
    }

    MlpParams adapted = maml_inner_adapt(p, support, cfg);
    for (int i = 0; i < 4; ++i)
        CHECK(adapted.layers[0].w[i] ==
              doctest::Approx(p.layers[0].w[i] - 0.04 * gw[i]).epsilon(1e-12));
    for (int i = 0; i < 2; ++i)
        CHECK(adapted.layers[0].b[i] ==
              doctest::Approx(p.layers[0].b[i] - 0.04 * gb[i]).epsilon(1e-12));
}

TEST_CASE("first-order meta-gradient matches the analytic expression for one inner step") {
    AugmentedEpisode aug = toy_episode(2, 1, 0, 2, 2, 47);
    Features f = build_features(aug, false);
    MlpParams p = make_mlp(2, std::vector<std::size_t>{}, 2, 48);
    MamlConfig cfg;
    cfg.inner_steps = 1;

    // Analytic: theta' = theta - eta * G_support(theta); the first-order
    // meta-gradient is the query CE gradient at theta', i.e. the mean of
    // (p' - onehot) x query input.
    MlpParams adapted = maml_inner_adapt(p, f.support_x, cfg);
    BatchView q = batch_view(f.query_x);
    ForwardPass fwd = mlp_forward(adapted, q);
    auto probs = softmax_rows(fwd.logits(), f.query_x.count(), 2);

    double gw[4] = {0, 0, 0, 0};
    double gb[2] = {0, 0};
    const double inv = 1.0 / static_cast<double>(f.query_x.count());
    for (std::size_t i = 0; i < f.query_x.count(); ++i) {
        const double* x = f.query_x.data.data() + 2 * i;
        for (int c = 0; c < 2; ++c) {
            double d = inv * (probs[i * 2 + c] -
                              (static_cast<std::size_t>(c) == f.query_x.labels[i] ? 1.0 : 0.0));
            gw[c * 2 + 0] += d * x[0];
            gw[c * 2 + 1] += d * x[1];
            gb[c] += d;
        }
    }

    MamlLearner learner;
    learner.params = p;
    learner.eta_s = cfg.inner_lr_support;
    learner.eta_r = cfg.inner_lr_retrieval;
    std::vector<AugmentedEpisode> batch{aug};
    OuterStats stats = maml_outer_step(learner, batch, cfg, false);
    for (int i = 0; i < 4; ++i)
        CHECK(stats.meta_grad.layers[0].w[i] == doctest::Approx(gw[i]).epsilon(1e-10));
    for (int i = 0; i < 2; ++i)
        CHECK(stats.meta_grad.layers[0].b[i] == doctest::Approx(gb[i]).epsilon(1e-10));
}

TEST_CASE("a batch of identical episodes reduces to the single-episode meta-gradient") {
    AugmentedEpisode aug = toy_episode(3, 1, 1, 2, 5, 53);
    MlpParams p = make_mlp(5, std::vector<std::size_t>{4}, 3, 54);
    MamlConfig cfg;
    cfg.inner_steps = 2;

    auto run = [&](std::size_t copies) {
        MamlLearner learner;
        learner.params = p;
        learner.eta_s = cfg.inner_lr_support;
        learner.eta_r = cfg.inner_lr_retrieval;
        std::vector<AugmentedEpisode> batch(copies, aug);
        return maml_outer_step(learner, batch, cfg, false);
    };
    OuterStats one = run(1);
    OuterStats four = run(4);
    for (std::size_t l = 0; l < one.meta_grad.layers.size(); ++l) {
        for (std::size_t i = 0; i < one.meta_grad.layers[l].w.size(); ++i)
            CHECK(four.meta_grad.layers[l].w[i] ==
                  doctest::Approx(one.meta_grad.layers[l].w[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < one.meta_grad.layers[l].b.size(); ++i)
            CHECK(four.meta_grad.layers[l].b[i] ==
                  doctest::Approx(one.meta_grad.layers[l].b[i]).epsilon(1e-12));
    }
}

TEST_CASE("zero outer rate leaves meta-parameters unchanged") {
    AugmentedEpisode aug = toy_episode(2, 1, 1, 1, 4, 59);
    MlpParams p = make_mlp(4, std::vector<std::size_t>{3}, 2, 60);
    MamlConfig cfg;
    cfg.inner_steps = 1;
    cfg.outer_lr = 0.0;
    MamlLearner learner;
    learner.params = p;
    learner.eta_s = cfg.inner_lr_support;
    learner.eta_r = cfg.inner_lr_retrieval;
    std::vector<AugmentedEpisode> batch{aug};
    maml_outer_step(learner, batch, cfg, false);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        CHECK(learner.params.layers[l].w == p.layers[l].w);
        CHECK(learner.params.layers[l].b == p.layers[l].b);
    }
}

TEST_CASE("learned inner rates stay clamped and move") {
    AugmentedEpisode aug = toy_episode(3, 1, 2, 2, 5, 61);
    // Similarity channel on: the model input is one wider than the episode dim.
    MlpParams p = make_mlp(6, std::vector<std::size_t>{4}, 3, 62);
    MamlConfig cfg;
    cfg.inner_steps = 2;
    cfg.learn_inner_lrs = true;
    cfg.weighted_loss = true;
    cfg.outer_lr = 0.01;
    MamlLearner learner;
    learner.params = p;
    learner.eta_s = cfg.inner_lr_support;
    learner.eta_r = cfg.inner_lr_retrieval;
    std::vector<AugmentedEpisode> batch{aug};
    for (int step = 0; step < 5; ++step)
        maml_outer_step(learner, batch, cfg, true);
    CHECK(learner.eta_s >= 1e-4);
    CHECK(learner.eta_s <= 1.0);
    CHECK(learner.eta_r >= 1e-4);
    CHECK(learner.eta_r <= 1.0);
    CHECK(learner.eta_s != cfg.inner_lr_support);
}

TEST_CASE("one weighted inner step decreases the weighted support loss") {
    AugmentedEpisode aug = toy_episode(3, 2, 2, 1, 6, 67);
    Features f = build_features(aug, true);
    MlpParams p = make_mlp(7, std::vector<std::size_t>{5}, 3, 68);
    MamlConfig cfg;
    cfg.inner_steps = 1;
    cfg.inner_lr_support = 1e-3;
    cfg.inner_lr_retrieval = 1e-3;
    cfg.weighted_loss = true;

    auto support_loss = [&](const MlpParams& m) {
        BatchView view = batch_view(f.support_x);
        ForwardPass fwd = mlp_forward(m, view);
        std::vector<double> w(f.support_x.count());
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = f.support_x.origin[i] == RowOrigin::retrieved ? f.support_x.weights[i] : 1.0;
        return cross_entropy(fwd.logits(), f.support_x.count(), 3, f.support_x.labels, w);
    };
    const double before = support_loss(p);
    MlpParams adapted = maml_inner_adapt(p, f.support_x, cfg);
    CHECK(support_loss(adapted) < before);
}

// ---- ProtoNet ---------------------------------------------------------------

TEST_CASE("identity head, one support row: queries go to the nearest support vector") {
    AugmentedEpisode aug = toy_episode(3, 1, 0, 2, 3, 71);
    MlpParams p;
    Layer l;
    l.in = l.out = 3;
    l.w.assign(9, 0.0);
    l.w[0] = l.w[4] = l.w[8] = 1.0;
    l.b.assign(3, 0.0);
    p.layers.push_back(l);

    aug.base.query[0].vec = aug.base.support[2].vec;
    aug.base.query[0].class_index = 2;
    ProtoConfig cfg;
    auto res = protonet_episode(p, aug, cfg, false, false);
    CHECK(res.predictions[0] == 2);
}

TEST_CASE("prototype of (0,0) and (2,2) is (1,1)") {
    AugmentedEpisode aug;
    aug.per_class = 0;
    aug.base.classes = {"a", "b"};
    aug.base.class_text = {{1.f, 0.f}, {0.f, 1.f}};
    aug.base.support.push_back({"s0", {0.f, 0.f}, 0});
    aug.base.support.push_back({"s1", {2.f, 2.f}, 0});
    aug.base.support.push_back({"s2", {-1.f, -1.f}, 1});
    aug.base.query.push_back({"q0", {1.f, 1.f}, 0});

    MlpParams p;
    Layer l;
    l.in = l.out = 2;
    l.w = {1.0, 0.0, 0.0, 1.0};
    l.b = {0.0, 0.0};
    p.layers.push_back(l);

    ProtoConfig cfg;
    auto res = protonet_episode(p, aug, cfg, false, false);
    // The query sits exactly on class a's prototype (1,1); class b's
    // prototype is (-1,-1), squared distance 8.
    CHECK(res.predictions[0] == 0);
    const double expected = std::log(1.0 + std::exp(-8.0));
    CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("protonet predictions are invariant to support permutation and class relabeling") {
    AugmentedEpisode aug = toy_episode(4, 3, 2, 2, 6, 73);
    MlpParams p = make_mlp(6, std::vector<std::size_t>{}, 5, 74);
    ProtoConfig cfg;
    auto base = protonet_episode(p, aug, cfg, false, false);

    AugmentedEpisode shuffled = aug;
    std::swap(shuffled.base.support[0], shuffled.base.support[2]);
    std::swap(shuffled.base.support[5], shuffled.base.support[9]);
    auto perm = protonet_episode(p, shuffled, cfg, false, false);
    CHECK(base.predictions == perm.predictions);
    CHECK(base.loss == doctest::Approx(perm.loss).epsilon(1e-12));

    AugmentedEpisode relabeled = aug;
    auto flip = [](std::size_t c) { return c == 0 ? 1 : c == 1 ? 0 : c; };
    for (auto& row : relabeled.base.support)
        row.class_index = flip(row.class_index);
    for (auto& row : relabeled.base.query)
        row.class_index = flip(row.class_index);
    for (auto& row : relabeled.retrieved)
        row.class_index = flip(row.class_index);
    std::swap(relabeled.base.classes[0], relabeled.base.classes[1]);
    std::swap(relabeled.base.class_text[0], relabeled.base.class_text[1]);
    auto rel = protonet_episode(p, relabeled, cfg, false, false);
    for (std::size_t i = 0; i < base.predictions.size(); ++i)
        CHECK(rel.predictions[i] == flip(base.predictions[i]));
}

TEST_CASE("protonet gradients match central finite differences") {
    // Through prototypes, retrieved rows and the similarity channel.
    AugmentedEpisode aug = toy_episode(3, 2, 2, 2, 5, 79);
    MlpParams p = make_mlp(6, std::vector<std::size_t>{}, 4, 80);
    ProtoConfig cfg;

    auto res = protonet_episode(p, aug, cfg, true, true);
    REQUIRE(res.grads.has_value());

    auto loss = [&](const MlpParams& m) { return protonet_episode(m, aug, cfg, true, false).loss; };
    std::size_t flat = 0;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        for (std::size_t i = 0; i < p.layers[l].w.size(); ++i, ++flat) {
            double fd = testutil::central_difference(p, flat, 1e-3, loss);
            CHECK(testutil::rel_error(res.grads->layers[l].w[i], fd) < 1e-4);
        }
        for (std::size_t i = 0; i < p.layers[l].b.size(); ++i, ++flat) {
            double fd = testutil::central_difference(p, flat, 1e-3, loss);
            CHECK(testutil::rel_error(res.grads->layers[l].b[i], fd) < 1e-4);
        }
    }
}

TEST_CASE("excluding retrieved rows from prototypes ignores them completely") {
    AugmentedEpisode aug = toy_episode(3, 2, 3, 2, 5, 83);
    MlpParams p = make_mlp(5, std::vector<std::size_t>{}, 4, 84);
    ProtoConfig cfg;
    cfg.include_retrieved_in_prototypes = false;
    auto with = protonet_episode(p, aug, cfg, false, false);
    auto bare = protonet_episode(p, slice_augmented(aug, 0), cfg, false, false);
    CHECK(with.predictions == bare.predictions);
    CHECK(with.loss == doctest::Approx(bare.loss).epsilon(1e-12));
}

// ---- zero-shot ----------------------------------------------------------------

TEST_CASE("query equal to a class text embedding predicts that class") {
    AugmentedEpisode aug = toy_episode(5, 1, 0, 1, 6, 89);
    std::vector<EpisodeRow> queries;
    queries.push_back({"q", aug.base.class_text[3], 3});
    auto pred = zero_shot_predict(queries, aug.base.class_text);
    CHECK(pred[0] == 3);
}

TEST_CASE("orthogonal query falls back to class 0 by tie-break") {
    std::vector<std::vector<float>> text{{1.f, 0.f, 0.f}, {0.f, 1.f, 0.f}};
    std::vector<EpisodeRow> queries;
    queries.push_back({"q", {0.f, 0.f, 1.f}, 0});
    auto pred = zero_shot_predict(queries, text);
    CHECK(pred[0] == 0);
}

TEST_CASE("zero-shot prediction is invariant under positive query scaling") {
    AugmentedEpisode aug = toy_episode(4, 1, 0, 3, 8, 97);
    auto base = zero_shot_predict(aug.base.query, aug.base.class_text);
    std::vector<EpisodeRow> scaled = aug.base.query;
    for (auto& q : scaled)
        for (auto& v : q.vec)
            v *= 37.5f;
    CHECK(zero_shot_predict(scaled, aug.base.class_text) == base);
}

TEST_CASE("zero query vector is rejected") {
    std::vector<std::vector<float>> text{{1.f, 0.f}, {0.f, 1.f}};
    std::vector<EpisodeRow> queries;
    queries.push_back({"q", {0.f, 0.f}, 0});
    CHECK_THROWS_AS(zero_shot_predict(queries, text), data_error);
}

// ---- training plumbing ---------------------------------------------------------

namespace {

DatasetBundle tiny_bundle(std::uint64_t seed) {
    SyntheticSpec spec{67, 8, 20, 12, 0.2, 0.05, 0.1, seed};
    SyntheticData data = generate_synthetic(spec);
    DatasetBundle ds;
    ds.name = "tiny" + std::to_string(seed);
    ds.eval = std::make_shared<EmbeddingCorpus>(std::move(data.eval));
    ds.text = std::move(data.text);
    auto retrieval = std::make_shared<EmbeddingCorpus>(std::move(data.retrieval));
    ds.index = std::make_shared<VectorIndex>(build_index(retrieval, IndexMode::exact));
    return ds;
}

} // namespace

TEST_CASE("the augment cache reproduces direct augmentation for every requested A") {
    DatasetBundle ds = tiny_bundle(111);
    EpisodeConfig ec;
    ec.n_way = 4;
    ec.q_query = 2;
    ec.seed = 9;
    AugmentCache cache(3);
    for (std::uint64_t e = 0; e < 5; ++e) {
        for (std::size_t a : {std::size_t(0), std::size_t(1), std::size_t(3)}) {
            EpisodeConfig want = ec;
            want.a_augment = a;
            AugmentedEpisode direct =
                augment(sample_episode(*ds.eval, ds.text, Split::train, want, e), *ds.index, want);
            AugmentedEpisode cached = cache.get(ds, Split::train, want, e, a);
            REQUIRE(cached.retrieved.size() == direct.retrieved.size());
            for (std::size_t i = 0; i < direct.retrieved.size(); ++i) {
                CHECK(cached.retrieved[i].id == direct.retrieved[i].id);
                CHECK(cached.retrieved[i].score == direct.retrieved[i].score);
            }
            for (std::size_t i = 0; i < direct.base.support.size(); ++i)
                CHECK(cached.base.support[i].id == direct.base.support[i].id);
        }
    }
}

TEST_CASE("training runs are bit-reproducible for a fixed seed") {
    DatasetBundle ds = tiny_bundle(112);
    EpisodeConfig ec;
    ec.n_way = 5;
    ec.a_augment = 1;
    ec.q_query = 2;
    TrainOptions opts;
    opts.max_steps = 3;
    opts.batch_size = 2;
    opts.val_interval = 0;
    MamlConfig mc;
    mc.inner_steps = 2;

    TrainedModel a = train_model(mc, ds, ec, opts, 21);
    TrainedModel b = train_model(mc, ds, ec, opts, 21);
    for (std::size_t l = 0; l < a.params.layers.size(); ++l) {
        CHECK(a.params.layers[l].w == b.params.layers[l].w);
        CHECK(a.params.layers[l].b == b.params.layers[l].b);
    }
    TrainedModel c = train_model(mc, ds, ec, opts, 22);
    CHECK(a.params.layers[0].w != c.params.layers[0].w);
}

TEST_CASE("zero output init starts the maml head flat") {
    DatasetBundle ds = tiny_bundle(113);
    EpisodeConfig ec;
    ec.n_way = 5;
    ec.q_query = 2;
    TrainOptions opts;
    opts.max_steps = 0;
    opts.val_interval = 0;
    MamlConfig mc;
    mc.zero_output_init = true;
    TrainedModel model = train_model(mc, ds, ec, opts, 3);
    for (double w : model.params.layers.back().w)
        CHECK(w == 0.0);
    MamlConfig plain;
    TrainedModel other = train_model(plain, ds, ec, opts, 3);
    bool any_nonzero = false;
    for (double w : other.params.layers.back().w)
        any_nonzero |= w != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("train reports carry loss and validation curves") {
    DatasetBundle ds = tiny_bundle(114);
    EpisodeConfig ec;
    ec.n_way = 5;
    ec.q_query = 2;
    TrainOptions opts;
    opts.max_steps = 4;
    opts.batch_size = 2;
    opts.val_interval = 2;
    opts.val_episodes = 3;
    opts.eval_episodes = 5;
    std::vector<std::uint64_t> seeds{1};
    TrainReport report = train_learner(ProtoConfig{}, ds, ec, opts,
                                       std::span<const std::uint64_t>(seeds));
    CHECK(report.train_loss_curve.size() == 4);
    CHECK(report.val_accuracy_curve.size() == 2);
    for (double v : report.val_accuracy_curve) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (double l : report.train_loss_curve)
        CHECK(l >= 0.0);
}

// ---- checkpoints ---------------------------------------------------------------

TEST_CASE("checkpoint round trip preserves parameters bit for bit") {
    TrainedModel model;
    model.method = Method::maml;
    model.params = make_mlp(7, std::vector<std::size_t>{6, 3}, 4, 101);
    model.eta_s = 0.037;
    model.eta_r = 0.012;
    model.similarity_channel = true;
    model.maml.inner_steps = 9;
    model.maml.weighted_loss = true;
    model.proto.hidden = {32};
    EpisodeConfig ec;
    ec.n_way = 4;
    ec.a_augment = 7;

    auto path = std::filesystem::temp_directory_path() / "fewshot_ckpt_test.bin";
    save_checkpoint(model, 123, 77, ec, path);
    Checkpoint ck = load_checkpoint(path);
    std::filesystem::remove(path);

    CHECK(ck.step == 123);
    CHECK(ck.seed == 77);
    CHECK(ck.model.method == Method::maml);
    CHECK(ck.model.similarity_channel);
    CHECK(ck.model.eta_s == model.eta_s);
    CHECK(ck.model.maml.inner_steps == 9);
    CHECK(ck.episode_cfg.n_way == 4);
    CHECK(ck.episode_cfg.a_augment == 7);
    REQUIRE(ck.model.params.layers.size() == model.params.layers.size());
    for (std::size_t l = 0; l < model.params.layers.size(); ++l) {
        CHECK(ck.model.params.layers[l].w == model.params.layers[l].w);
        CHECK(ck.model.params.layers[l].b == model.params.layers[l].b);
    }
}
