#include "fewshot/index.hpp"

#include "fewshot/error.hpp"
#include "fewshot/dot.hpp"
#include "fewshot/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace fewshot {

namespace {

std::vector<double> normalize_query(std::span<const double> query, std::size_t dim) {
    if (query.size() != dim)
        throw data_error("query dim " + std::to_string(query.size()) + " does not match index dim " +
                         std::to_string(dim));
    double norm2 = 0.0;
    for (double x : query)
        norm2 += x * x;
    double norm = std::sqrt(norm2);
    if (norm == 0.0)
        throw data_error("cannot search with the zero vector");
    std::vector<double> out(query.begin(), query.end());
    for (auto& x : out)
        x /= norm;
    return out;
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double t = a[j] - b[j];
        acc += t * t;
    }
    return acc;
}

struct KmeansResult {
    std::vector<double> centroids;
    std::vector<std::vector<std::uint32_t>> lists;
};

// Lloyd iterations with farthest-point init. Empty clusters steal the row
// farthest from the centroid of the currently largest cluster.
KmeansResult kmeans(const std::vector<double>& data, std::size_t n, std::size_t d, std::size_t k,
                    std::uint64_t seed) {
    constexpr int kIterations = 25;
    SplitMix64 rng(derive_key({seed, hash_str("kmeans")}));

    KmeansResult res;
    res.centroids.assign(k * d, 0.0);

    // Farthest-point init: seed with a random row, then repeatedly take the
    // row with the largest distance to its nearest chosen centroid.
    std::vector<double> min_dist(n, std::numeric_limits<double>::max());
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy_n(data.data() + first * d, d, res.centroids.data());
    for (std::size_t c = 1; c < k; ++c) {
        const double* prev = res.centroids.data() + (c - 1) * d;
        std::size_t far = 0;
        double far_dist = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double dist = sq_dist(data.data() + i * d, prev, d);
            if (dist < min_dist[i])
                min_dist[i] = dist;
            if (min_dist[i] > far_dist) {
                far_dist = min_dist[i];
                far = i;
            }
        }
        std::copy_n(data.data() + far * d, d, res.centroids.data() + c * d);
    }

    std::vector<std::uint32_t> assign(n, 0);
    for (int iter = 0; iter < kIterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = data.data() + i * d;
            std::size_t best = 0;
            double best_dist = sq_dist(row, res.centroids.data(), d);
            for (std::size_t c = 1; c < k; ++c) {
                double dist = sq_dist(row, res.centroids.data() + c * d, d);
                if (dist < best_dist) {
                    best_dist = dist;
                    best = c;
                }
            }
            assign[i] = static_cast<std::uint32_t>(best);
        }

        std::vector<std::size_t> sizes(k, 0);
        for (auto a : assign)
            sizes[a] += 1;

        // Repair empty clusters before recomputing means.
        for (std::size_t c = 0; c < k; ++c) {
            while (sizes[c] == 0) {
                std::size_t donor =
                    std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
                if (sizes[donor] <= 1)
                    throw data_error("k-means cannot fill empty cluster: too few rows");
                std::size_t far = n;
                double far_dist = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (assign[i] != donor)
                        continue;
                    double dist =
                        sq_dist(data.data() + i * d, res.centroids.data() + donor * d, d);
                    if (dist > far_dist) {
                        far_dist = dist;
                        far = i;
                    }
                }
                assign[far] = static_cast<std::uint32_t>(c);
                sizes[donor] -= 1;
                sizes[c] += 1;
            }
        }

        std::fill(res.centroids.begin(), res.centroids.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double* cen = res.centroids.data() + assign[i] * d;
            const double* row = data.data() + i * d;
            for (std::size_t j = 0; j < d; ++j)
                cen[j] += row[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            double* cen = res.centroids.data() + c * d;
            for (std::size_t j = 0; j < d; ++j)
                cen[j] /= static_cast<double>(sizes[c]);
        }
    }

    res.lists.assign(k, {});
    for (std::size_t i = 0; i < n; ++i)
        res.lists[assign[i]].push_back(static_cast<std::uint32_t>(i));
    return res;
}

constexpr char kCentroidMagic[4] = {'R', 'A', 'F', 'D'};

void write_centroids(const std::filesystem::path& path, const std::vector<double>& centroids,
                     std::size_t dim, std::size_t count) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw data_error("cannot open for writing: " + path.string());
    out.write(kCentroidMagic, 4);
    std::uint32_t version = 1, d32 = static_cast<std::uint32_t>(dim);
    std::uint64_t c64 = count;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&d32), sizeof(d32));
    out.write(reinterpret_cast<const char*>(&c64), sizeof(c64));
    out.write(reinterpret_cast<const char*>(centroids.data()),
              static_cast<std::streamsize>(centroids.size() * sizeof(double)));
    if (!out)
        throw data_error("write failed: " + path.string());
}

std::vector<double> read_centroids(const std::filesystem::path& path, std::size_t dim,
                                   std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("cannot open centroid file: " + path.string());
    char magic[4];
    std::uint32_t version = 0, d32 = 0;
    std::uint64_t c64 = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&d32), sizeof(d32));
    in.read(reinterpret_cast<char*>(&c64), sizeof(c64));
    if (!in || std::memcmp(magic, kCentroidMagic, 4) != 0 || version != 1 || d32 != dim ||
        c64 != count)
        throw data_error("malformed centroid file: " + path.string());
    std::vector<double> out(dim * count);
    in.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (!in)
        throw data_error("truncated centroid file: " + path.string());
    return out;
}

} // namespace

VectorIndex VectorIndex::build(std::shared_ptr<const EmbeddingCorpus> corpus, IndexMode mode,
                               AnnParams params) {
    if (!corpus)
        throw data_error("build_index: null corpus");
    VectorIndex idx;
    idx.corpus_ = std::move(corpus);
    idx.mode_ = mode;
    idx.scan_.assign(idx.corpus_->vectors.begin(), idx.corpus_->vectors.end());

    if (mode == IndexMode::ann) {
        const std::size_t n = idx.corpus_->rows();
        if (n == 0)
            throw data_error("build_index: ann mode needs a non-empty corpus");
        if (params.nlist == 0)
            throw data_error("build_index: nlist must be positive in ann mode");
        if (params.nlist > n)
            throw data_error("build_index: nlist " + std::to_string(params.nlist) +
                             " exceeds corpus rows " + std::to_string(n));
        if (params.nprobe == 0 || params.nprobe > params.nlist)
            throw data_error("build_index: nprobe must lie in [1, nlist]");
        idx.nlist_ = params.nlist;
        idx.nprobe_ = params.nprobe;
        auto km = kmeans(idx.scan_, n, idx.corpus_->dim, params.nlist, params.seed);
        idx.centroids_ = std::move(km.centroids);
        idx.lists_ = std::move(km.lists);
    }
    return idx;
}

VectorIndex VectorIndex::with_nprobe(std::size_t nprobe) const {
    if (mode_ != IndexMode::ann)
        return *this;
    if (nprobe == 0 || nprobe > nlist_)
        throw data_error("nprobe must lie in [1, nlist]");
    VectorIndex idx = *this;
    idx.nprobe_ = nprobe;
    return idx;
}

std::vector<SearchHit> VectorIndex::search(std::span<const float> query, std::size_t a) const {
    std::vector<double> q(query.begin(), query.end());
    return search_normalized(normalize_query(q, dim()), a);
}

std::vector<SearchHit> VectorIndex::search(std::span<const double> query, std::size_t a) const {
    return search_normalized(normalize_query(query, dim()), a);
}

std::vector<SearchHit> VectorIndex::search_normalized(const std::vector<double>& query,
                                                      std::size_t a) const {
    const std::size_t d = dim();
    const std::size_t n = rows();
    if (a == 0)
        return {};

    std::vector<std::uint32_t> candidates;
    if (mode_ == IndexMode::exact) {
        candidates.resize(n);
        std::iota(candidates.begin(), candidates.end(), 0u);
    } else {
        // Rank centroids by distance to the query, probe the nearest lists.
        std::vector<std::pair<double, std::uint32_t>> order(nlist_);
        for (std::size_t c = 0; c < nlist_; ++c)
            order[c] = {sq_dist(query.data(), centroids_.data() + c * d, d),
                        static_cast<std::uint32_t>(c)};
        std::sort(order.begin(), order.end());
        for (std::size_t p = 0; p < nprobe_; ++p) {
            const auto& list = lists_[order[p].second];
            candidates.insert(candidates.end(), list.begin(), list.end());
        }
    }

    std::vector<std::pair<double, std::uint32_t>> scored;
    scored.reserve(candidates.size());
    for (std::uint32_t row : candidates) {
        const double* v = scan_.data() + static_cast<std::size_t>(row) * d;
        scored.emplace_back(dot(v, query.data(), d), row);
    }

    auto better = [this](const std::pair<double, std::uint32_t>& lhs,
                         const std::pair<double, std::uint32_t>& rhs) {
        if (lhs.first != rhs.first)
            return lhs.first > rhs.first;
        return corpus_->meta[lhs.second].id < corpus_->meta[rhs.second].id;
    };
    std::size_t keep = std::min(a, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(), better);
    scored.resize(keep);

    std::vector<SearchHit> hits;
    hits.reserve(keep);
    for (const auto& [score, row] : scored) {
        auto vec = corpus_->row(row);
        hits.push_back({corpus_->meta[row].id, score, {vec.begin(), vec.end()}});
    }
    return hits;
}

VectorIndex build_compact_index(const VectorIndex& full, const EmbeddingCorpus& eval_corpus,
                                const ClassTextEmbeddings& text, std::size_t per_image_k,
                                std::size_t per_class_k) {
    if (eval_corpus.rows() == 0)
        throw data_error("build_compact_index: empty evaluation corpus");
    if (eval_corpus.dim != full.dim())
        throw data_error("build_compact_index: dim mismatch");

    const EmbeddingCorpus& base = full.corpus();
    std::map<std::string, std::size_t> row_of_id;
    for (std::size_t i = 0; i < base.rows(); ++i)
        row_of_id[base.meta[i].id] = i;

    std::set<std::size_t> keep;
    auto absorb = [&](const std::vector<SearchHit>& hits) {
        for (const auto& h : hits)
            keep.insert(row_of_id.at(h.id));
    };

    for (std::size_t i = 0; i < eval_corpus.rows(); ++i)
        absorb(full.search(eval_corpus.row(i), per_image_k));
    for (const auto& [label, vec] : text.entries)
        absorb(full.search(std::span<const float>(vec), per_class_k));

    if (keep.empty())
        throw data_error("build_compact_index: empty union");

    auto compact = std::make_shared<EmbeddingCorpus>();
    compact->dim = base.dim;
    compact->vectors.reserve(keep.size() * base.dim);
    compact->meta.reserve(keep.size());
    for (std::size_t row : keep) {
        auto v = base.row(row);
        compact->vectors.insert(compact->vectors.end(), v.begin(), v.end());
        compact->meta.push_back(base.meta[row]);
    }
    return VectorIndex::build(std::move(compact), IndexMode::exact);
}

double measure_recall(const VectorIndex& reference, const VectorIndex& candidate,
                      std::span<const std::vector<float>> queries, std::size_t a) {
    if (a == 0)
        throw data_error("measure_recall: a must be positive");
    if (reference.dim() != candidate.dim())
        throw data_error("measure_recall: dim mismatch");
    if (queries.empty())
        throw data_error("measure_recall: no queries");

    double total = 0.0;
    for (const auto& q : queries) {
        auto ref_hits = reference.search(std::span<const float>(q), a);
        auto cand_hits = candidate.search(std::span<const float>(q), a);
        std::set<std::string> ref_ids;
        for (const auto& h : ref_hits)
            ref_ids.insert(h.id);
        std::size_t overlap = 0;
        for (const auto& h : cand_hits)
            overlap += ref_ids.count(h.id);
        total += static_cast<double>(overlap) / static_cast<double>(a);
    }
    return total / static_cast<double>(queries.size());
}

void VectorIndex::save(const std::filesystem::path& path) const {
    const std::string vectors_name = path.filename().string() + ".vectors";
    const std::string centroids_name = path.filename().string() + ".centroids";
    const auto dir = path.parent_path();

    save_corpus(*corpus_, dir / vectors_name);

    nlohmann::json desc;
    desc["mode"] = mode_ == IndexMode::exact ? "exact" : "ann";
    desc["dim"] = dim();
    desc["rows"] = rows();
    desc["vectors_file"] = vectors_name;
    if (mode_ == IndexMode::ann) {
        desc["nlist"] = nlist_;
        desc["nprobe"] = nprobe_;
        desc["centroids_file"] = centroids_name;
        write_centroids(dir / centroids_name, centroids_, dim(), nlist_);
        std::vector<std::size_t> offsets;
        std::vector<std::uint32_t> entries;
        offsets.reserve(lists_.size() + 1);
        offsets.push_back(0);
        for (const auto& list : lists_) {
            entries.insert(entries.end(), list.begin(), list.end());
            offsets.push_back(entries.size());
        }
        desc["inverted_lists"] = {{"offsets", offsets}, {"entries", entries}};
    }

    std::ofstream out(path);
    if (!out)
        throw data_error("cannot open for writing: " + path.string());
    out << desc.dump(2) << "\n";
    if (!out)
        throw data_error("write failed: " + path.string());
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw data_error("cannot open index descriptor: " + path.string());
    nlohmann::json desc;
    try {
        in >> desc;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad index descriptor " + path.string() + ": " + e.what());
    }

    const auto dir = path.parent_path();
    auto corpus = std::make_shared<EmbeddingCorpus>(
        load_corpus(dir / desc.at("vectors_file").get<std::string>()));

    VectorIndex idx;
    idx.scan_.assign(corpus->vectors.begin(), corpus->vectors.end());
    const std::string mode = desc.at("mode").get<std::string>();
    if (mode == "exact") {
        idx.mode_ = IndexMode::exact;
    } else if (mode == "ann") {
        idx.mode_ = IndexMode::ann;
        idx.nlist_ = desc.at("nlist").get<std::size_t>();
        idx.nprobe_ = desc.at("nprobe").get<std::size_t>();
        if (idx.nlist_ == 0 || idx.nprobe_ == 0 || idx.nprobe_ > idx.nlist_)
            throw data_error("bad nlist/nprobe in " + path.string());
        idx.centroids_ =
            read_centroids(dir / desc.at("centroids_file").get<std::string>(), corpus->dim,
                           idx.nlist_);
        const auto& lists = desc.at("inverted_lists");
        const auto offsets = lists.at("offsets").get<std::vector<std::size_t>>();
        const auto entries = lists.at("entries").get<std::vector<std::uint32_t>>();
        if (offsets.size() != idx.nlist_ + 1 || offsets.back() != entries.size() ||
            entries.size() != corpus->rows())
            throw data_error("inconsistent inverted lists in " + path.string());
        idx.lists_.resize(idx.nlist_);
        for (std::size_t c = 0; c < idx.nlist_; ++c)
            idx.lists_[c].assign(entries.begin() + offsets[c], entries.begin() + offsets[c + 1]);
    } else {
        throw data_error("unknown index mode '" + mode + "' in " + path.string());
    }
    idx.corpus_ = std::move(corpus);
    return idx;
}

} // namespace fewshot
