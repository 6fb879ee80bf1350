#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fewshot {

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct RowMeta {
    std::string id;
    std::string label;
    Split split = Split::train;
};

// An embedding matrix with per-row metadata. Serves both as an evaluation
// dataset (episodes are sampled from it) and as a retrieval repository
// (indexes are built over it). Rows are unit-norm f32; immutable after load,
// safe for concurrent reads.
struct EmbeddingCorpus {
    std::size_t dim = 0;
    std::vector<float> vectors; // rows() * dim, row-major
    std::vector<RowMeta> meta;

    std::size_t rows() const { return meta.size(); }
    std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }

    // Sorted unique labels.
    std::vector<std::string> labels() const;
};

// label -> ascending row indices, restricted to one split.
std::map<std::string, std::vector<std::size_t>> rows_by_label(const EmbeddingCorpus& corpus, Split split);

// One unit vector per class name (the precomputed text embedding of the
// class-name template string used when the corpus was prepared).
struct ClassTextEmbeddings {
    std::size_t dim = 0;
    std::map<std::string, std::vector<float>> entries;
};

// Parameters for the synthetic stand-in corpus: class centroids on the unit
// sphere, eval/retrieval rows as noisy copies, plus unrelated distractor rows.
// Generation is a pure function of this struct.
struct SyntheticSpec {
    std::size_t n_classes = 10;
    std::size_t per_class = 20;        // evaluation rows per class
    std::size_t corpus_per_class = 500; // retrieval rows per class
    std::size_t dim = 64;
    double intra_class_noise = 0.2;
    double text_noise = 0.05;
    double distractor_fraction = 0.0; // fraction of retrieval rows with no class
    std::uint64_t seed = 0;
};

struct SyntheticData {
    EmbeddingCorpus eval;
    EmbeddingCorpus retrieval;
    ClassTextEmbeddings text;
};

// Binary corpus file: header {magic "RAFC", version u32, dim u32, count u64},
// little-endian f32 row-major payload, sidecar JSON manifest at <path>.json
// with {dim, rows: [{id, label, split}], classes: [string]}.
EmbeddingCorpus load_corpus(const std::filesystem::path& path);
void save_corpus(const EmbeddingCorpus& corpus, const std::filesystem::path& path);

// Text embeddings reuse the corpus format with id = label = class name.
ClassTextEmbeddings load_text_embeddings(const std::filesystem::path& path);
void save_text_embeddings(const ClassTextEmbeddings& text, const std::filesystem::path& path);

SyntheticData generate_synthetic(const SyntheticSpec& spec);

} // namespace fewshot
