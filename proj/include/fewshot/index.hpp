#pragma once

#include "fewshot/corpus.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fewshot {

enum class IndexMode { exact, ann };

struct AnnParams {
    std::size_t nlist = 64;
    std::size_t nprobe = 8;
    std::uint64_t seed = 0; // k-means init/repair stream
};

struct SearchHit {
    std::string id;
    double score; // dot product of unit vectors, in [-1, 1]
    std::vector<float> vector;
};

// Cosine top-A search over a corpus. Exact mode scans every row; ann mode is
// an inverted-file structure: k-means centroids partition the rows and a
// query scans only the nprobe nearest lists. Equal scores break ties by
// ascending id. Immutable once built; concurrent search is safe.
class VectorIndex {
public:
    static VectorIndex build(std::shared_ptr<const EmbeddingCorpus> corpus, IndexMode mode,
                             AnnParams params = {});

    // Query is L2-normalized internally, so results are invariant under
    // positive scaling. Returns min(a, rows()) hits, best first.
    std::vector<SearchHit> search(std::span<const float> query, std::size_t a) const;
    std::vector<SearchHit> search(std::span<const double> query, std::size_t a) const;

    IndexMode mode() const { return mode_; }
    std::size_t dim() const { return corpus_->dim; }
    std::size_t rows() const { return corpus_->rows(); }
    const EmbeddingCorpus& corpus() const { return *corpus_; }
    std::shared_ptr<const EmbeddingCorpus> corpus_ptr() const { return corpus_; }
    std::size_t nlist() const { return nlist_; }
    std::size_t nprobe() const { return nprobe_; }
    const std::vector<std::vector<std::uint32_t>>& inverted_lists() const { return lists_; }

    // Same structure with a different probe count (nprobe is a search-time
    // knob; centroids and lists are shared).
    VectorIndex with_nprobe(std::size_t nprobe) const;

    // Persistence: JSON descriptor at `path`, vectors in the corpus file
    // format at `<path>.vectors` (+ manifest), centroids at `<path>.centroids`.
    void save(const std::filesystem::path& path) const;
    static VectorIndex load(const std::filesystem::path& path);

private:
    VectorIndex() = default;

    std::vector<SearchHit> search_normalized(const std::vector<double>& query, std::size_t a) const;

    std::shared_ptr<const EmbeddingCorpus> corpus_;
    IndexMode mode_ = IndexMode::exact;
    std::size_t nlist_ = 0;
    std::size_t nprobe_ = 0;
    std::vector<double> scan_;      // f64 copy of the corpus matrix for scoring
    std::vector<double> centroids_; // nlist * dim (ann only)
    std::vector<std::vector<std::uint32_t>> lists_; // row indices per centroid (ann only)
};

inline VectorIndex build_index(std::shared_ptr<const EmbeddingCorpus> corpus, IndexMode mode,
                               AnnParams params = {}) {
    return VectorIndex::build(std::move(corpus), mode, params);
}

// Precomputes the small exact index actually used by experiments: the union
// of the top-per_image_k neighbors of every evaluation row and the
// top-per_class_k neighbors of every class text embedding.
VectorIndex build_compact_index(const VectorIndex& full, const EmbeddingCorpus& eval_corpus,
                                const ClassTextEmbeddings& text, std::size_t per_image_k = 20,
                                std::size_t per_class_k = 100);

// Mean over queries of |top-a(candidate) ∩ top-a(reference)| / a.
double measure_recall(const VectorIndex& reference, const VectorIndex& candidate,
                      std::span<const std::vector<float>> queries, std::size_t a);

} // namespace fewshot
