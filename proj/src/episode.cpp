#include "fewshot/episode.hpp"

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

Episode sample_episode(const EmbeddingCorpus& corpus, const ClassTextEmbeddings& text, Split split,
                       const EpisodeConfig& config, std::uint64_t episode_index) {
    if (config.n_way < 2)
        throw data_error("sample_episode: n_way must be at least 2");
    if (config.k_shot < 1 || config.q_query < 1)
        throw data_error("sample_episode: k_shot and q_query must be positive");

    const std::size_t per_class = config.k_shot + config.q_query;
    auto by_label = rows_by_label(corpus, split);

    // Classes eligible for this episode shape; rows_by_label is ordered, so
    // the candidate list is deterministic.
    std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> eligible;
    for (const auto& entry : by_label)
        if (entry.second.size() >= per_class)
            eligible.push_back(&entry);
    if (eligible.size() < config.n_way)
        throw data_error("sample_episode: split '" + to_string(split) + "' has " +
                         std::to_string(eligible.size()) + " classes with at least " +
                         std::to_string(per_class) + " rows, need " +
                         std::to_string(config.n_way));

    SplitMix64 rng(derive_key({config.seed, hash_str(to_string(split)), episode_index,
                               hash_str("episode")}));

    Episode ep;
    auto class_picks = sample_without_replacement(rng, eligible.size(), config.n_way);
    for (std::size_t c = 0; c < config.n_way; ++c) {
        const auto& [label, rows] = *eligible[class_picks[c]];
        ep.classes.push_back(label);

        auto it = text.entries.find(label);
        if (it == text.entries.end())
            throw data_error("sample_episode: no text embedding for class '" + label + "'");
        ep.class_text.push_back(it->second);

        auto row_picks = sample_without_replacement(rng, rows.size(), per_class);
        for (std::size_t i = 0; i < per_class; ++i) {
            std::size_t row = rows[row_picks[i]];
            auto vec = corpus.row(row);
            EpisodeRow er{corpus.meta[row].id, {vec.begin(), vec.end()}, c};
            if (i < config.k_shot)
                ep.support.push_back(std::move(er));
            else
                ep.query.push_back(std::move(er));
        }
    }

    return ep;
}

std::vector<Episode> sample_batch(const EmbeddingCorpus& corpus, const ClassTextEmbeddings& text,
                                  Split split, const EpisodeConfig& config,
                                  std::uint64_t start_index, std::size_t batch_size) {
    std::vector<Episode> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i)
        batch.push_back(sample_episode(corpus, text, split, config, start_index + i));
    return batch;
}

} // namespace fewshot
