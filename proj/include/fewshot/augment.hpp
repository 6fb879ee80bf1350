#pragma once

#include "fewshot/episode.hpp"
#include "fewshot/index.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fewshot {

struct RetrievedRow {
    std::string id;
    std::vector<float> vec;
    double score = 0.0;          // cosine score from the search
    std::size_t class_index = 0; // the class whose query fetched this row
};

// Episode plus A retrieved rows per class, class-major. Retrieved ids never
// duplicate a support id of the same episode; duplicates across classes are
// allowed.
struct AugmentedEpisode {
    Episode base;
    std::size_t per_class = 0; // retrieved rows per class (A)
    std::vector<RetrievedRow> retrieved;
};

enum class RowOrigin : std::uint8_t { support, retrieved, query };

// Design matrix in f64 (training arithmetic is double throughout). With the
// similarity channel on, width is d+1: support and query rows carry exactly
// 1.0 in the extra column, retrieved rows their cosine score clamped to [0,1].
// Per-row loss weights mirror the channel values.
struct FeatureMatrix {
    std::size_t width = 0;
    std::vector<double> data; // count() * width
    std::vector<std::size_t> labels;
    std::vector<double> weights;
    std::vector<RowOrigin> origin;

    std::size_t count() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * width, width}; }
};

struct Features {
    FeatureMatrix support_x; // support rows (class-major) then retrieved rows (class-major)
    FeatureMatrix query_x;
};

// normalize(alpha_t * e_t + (1 - alpha_t) * mean(support)). Errors out if
// the blend cancels to the zero vector.
std::vector<float> compose_query_embedding(std::span<const float> e_t,
                                           const std::vector<std::vector<float>>& support_vectors,
                                           double alpha_t);

// Per class: compose the query embedding, search top-(A+K), and keep the
// first A hits whose ids are not in the episode's support set.
AugmentedEpisode augment(const Episode& episode, const VectorIndex& index,
                         const EpisodeConfig& config);

// Keep only the first `a` retrieved rows per class. For an exact-mode index
// this equals augment() run at a_augment = a, since exact top lists are
// prefixes of longer ones.
AugmentedEpisode slice_augmented(const AugmentedEpisode& aug, std::size_t a);

Features build_features(const AugmentedEpisode& aug, bool similarity_channel);

} // namespace fewshot
