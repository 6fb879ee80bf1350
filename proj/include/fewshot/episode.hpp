#pragma once

#include "fewshot/corpus.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fewshot {

struct EpisodeConfig {
    std::size_t n_way = 10;
    std::size_t k_shot = 1;
    std::size_t q_query = 5;
    std::size_t a_augment = 0;
    double alpha_t = 0.8; // weight on the class text embedding in the retrieval query
    std::uint64_t seed = 0;
};

struct EpisodeRow {
    std::string id;
    std::vector<float> vec;
    std::size_t class_index = 0;
};

// One N-way task: K support and Q query rows per class, plus the class text
// embeddings. Support and query ids never overlap; class indices follow the
// sampled class order.
struct Episode {
    std::vector<std::string> classes;            // size N
    std::vector<EpisodeRow> support;             // N*K, class-major
    std::vector<EpisodeRow> query;               // N*Q, class-major
    std::vector<std::vector<float>> class_text;  // size N
};

// Draws N distinct classes, then K+Q distinct rows per class. The RNG stream
// is a pure function of (config.seed, split, episode_index): episodes replay
// identically regardless of sampling order or parallel scheduling.
Episode sample_episode(const EmbeddingCorpus& corpus, const ClassTextEmbeddings& text, Split split,
                       const EpisodeConfig& config, std::uint64_t episode_index);

// batch_size episodes at consecutive indices starting from start_index.
std::vector<Episode> sample_batch(const EmbeddingCorpus& corpus, const ClassTextEmbeddings& text,
                                  Split split, const EpisodeConfig& config,
                                  std::uint64_t start_index, std::size_t batch_size);

} // namespace fewshot
