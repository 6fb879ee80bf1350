#include "fewshot/augment.hpp"

#include "fewshot/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fewshot {

std::vector<float> compose_query_embedding(std::span<const float> e_t,
                                           const std::vector<std::vector<float>>& support_vectors,
                                           double alpha_t) {
    if (alpha_t < 0.0 || alpha_t > 1.0)
        throw data_error("compose_query_embedding: alpha_t must lie in [0, 1]");
    if (support_vectors.empty())
        throw data_error("compose_query_embedding: need at least one support vector");
    const std::size_t d = e_t.size();
    for (const auto& v : support_vectors)
        if (v.size() != d)
            throw data_error("compose_query_embedding: dim mismatch");

    std::vector<double> mixed(d, 0.0);
    for (const auto& v : support_vectors)
        for (std::size_t j = 0; j < d; ++j)
            mixed[j] += v[j];
    const double k = static_cast<double>(support_vectors.size());
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        mixed[j] = alpha_t * e_t[j] + (1.0 - alpha_t) * (mixed[j] / k);
        norm2 += mixed[j] * mixed[j];
    }
    double norm = std::sqrt(norm2);
    if (norm < 1e-12)
        throw data_error("degenerate query: text and support embeddings cancel");

    std::vector<float> out(d);
    for (std::size_t j = 0; j < d; ++j)
        out[j] = static_cast<float>(mixed[j] / norm);
    return out;
}

AugmentedEpisode augment(const Episode& episode, const VectorIndex& index,
                         const EpisodeConfig& config) {
    AugmentedEpisode aug;
    aug.base = episode;
    aug.per_class = config.a_augment;
    if (config.a_augment == 0)
        return aug;

    std::set<std::string> support_ids;
    for (const auto& row : episode.support)
        support_ids.insert(row.id);

    const std::size_t n = episode.classes.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<std::vector<float>> support_vecs;
        for (const auto& row : episode.support)
            if (row.class_index == c)
                support_vecs.push_back(row.vec);

        auto query = compose_query_embedding(episode.class_text[c], support_vecs, config.alpha_t);
        // Over-fetch by K so the support-id exclusion cannot starve the class.
        auto hits = index.search(std::span<const float>(query),
                                 config.a_augment + config.k_shot);

        std::size_t taken = 0;
        for (const auto& hit : hits) {
            if (taken == config.a_augment)
                break;
            if (support_ids.count(hit.id))
                continue;
            aug.retrieved.push_back({hit.id, hit.vector, hit.score, c});
            ++taken;
        }
        if (taken < config.a_augment)
            throw data_error("augment: index too small to yield " +
                             std::to_string(config.a_augment) + " hits after exclusion for class '" +
                             episode.classes[c] + "'");
    }
    return aug;
}

AugmentedEpisode slice_augmented(const AugmentedEpisode& aug, std::size_t a) {
    if (a > aug.per_class)
        throw data_error("slice_augmented: requested more rows than cached");
    AugmentedEpisode out;
    out.base = aug.base;
    out.per_class = a;
    if (a == 0)
        return out;
    const std::size_t n = aug.base.classes.size();
    out.retrieved.reserve(n * a);
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t i = 0; i < a; ++i)
            out.retrieved.push_back(aug.retrieved[c * aug.per_class + i]);
    return out;
}

Features build_features(const AugmentedEpisode& aug, bool similarity_channel) {
    const Episode& ep = aug.base;
    if (ep.support.empty())
        throw data_error("build_features: episode has no support rows");
    const std::size_t d = ep.support.front().vec.size();
    for (const auto& r : aug.retrieved)
        if (r.vec.size() != d)
            throw data_error("build_features: dim mismatch in retrieved rows");

    const std::size_t width = similarity_channel ? d + 1 : d;

    auto push_row = [&](FeatureMatrix& m, std::span<const float> vec, std::size_t label,
                        double weight, RowOrigin origin, double channel) {
        for (std::size_t j = 0; j < d; ++j)
            m.data.push_back(static_cast<double>(vec[j]));
        if (similarity_channel)
            m.data.push_back(channel);
        m.labels.push_back(label);
        m.weights.push_back(weight);
        m.origin.push_back(origin);
    };

    Features f;
    f.support_x.width = width;
    f.query_x.width = width;

    for (const auto& row : ep.support)
        push_row(f.support_x, row.vec, row.class_index, 1.0, RowOrigin::support, 1.0);
    for (const auto& row : aug.retrieved) {
        double clamped = std::clamp(row.score, 0.0, 1.0);
        push_row(f.support_x, row.vec, row.class_index, clamped, RowOrigin::retrieved, clamped);
    }
    for (const auto& row : ep.query)
        push_row(f.query_x, row.vec, row.class_index, 1.0, RowOrigin::query, 1.0);

    return f;
}

} // namespace fewshot
