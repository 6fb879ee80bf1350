#include "fewshot/corpus.hpp"

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

static_assert(std::endian::native == std::endian::little, "corpus files are little-endian");

namespace fewshot {

namespace {

constexpr char kMagic[4] = {'R', 'A', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8;

// Normalization is skipped when the norm is already within 1e-6 of one, so
// loading a saved corpus reproduces its vectors bit-for-bit.
void normalize_rows(std::vector<float>& vectors, std::size_t dim, std::size_t rows) {
    for (std::size_t r = 0; r < rows; ++r) {
        float* v = vectors.data() + r * dim;
        double norm2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j)
            norm2 += static_cast<double>(v[j]) * static_cast<double>(v[j]);
        double norm = std::sqrt(norm2);
        if (norm == 0.0)
            throw data_error("corpus row " + std::to_string(r) + " is the zero vector");
        if (std::abs(norm - 1.0) > 1e-6) {
            for (std::size_t j = 0; j < dim; ++j)
                v[j] = static_cast<float>(static_cast<double>(v[j]) / norm);
        }
    }
}

std::vector<float> unit_from_double(const std::vector<double>& v) {
    double norm2 = 0.0;
    for (double x : v)
        norm2 += x * x;
    double norm = std::sqrt(norm2);
    if (norm == 0.0)
        throw data_error("cannot normalize zero vector");
    std::vector<float> out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j)
        out[j] = static_cast<float>(v[j] / norm);
    return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

// 70/15/15 class counts by largest remainder.
std::array<std::size_t, 3> split_counts(std::size_t n_classes) {
    const double frac[3] = {0.70, 0.15, 0.15};
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
        double exact = frac[s] * static_cast<double>(n_classes);
        counts[s] = static_cast<std::size_t>(exact);
        rem[s] = exact - static_cast<double>(counts[s]);
        assigned += counts[s];
    }
    while (assigned < n_classes) {
        int best = 0;
        for (int s = 1; s < 3; ++s)
            if (rem[s] > rem[best])
                best = s;
        counts[best] += 1;
        rem[best] = -1.0;
        assigned += 1;
    }
    return counts;
}

} // namespace

std::string to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train")
        return Split::train;
    if (s == "val")
        return Split::val;
    if (s == "test")
        return Split::test;
    throw data_error("unknown split '" + s + "'");
}

std::vector<std::string> EmbeddingCorpus::labels() const {
    std::set<std::string> uniq;
    for (const auto& m : meta)
        uniq.insert(m.label);
    return {uniq.begin(), uniq.end()};
}

std::map<std::string, std::vector<std::size_t>> rows_by_label(const EmbeddingCorpus& corpus,
                                                              Split split) {
    std::map<std::string, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < corpus.rows(); ++i)
        if (corpus.meta[i].split == split)
            out[corpus.meta[i].label].push_back(i);
    return out;
}

void save_corpus(const EmbeddingCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw data_error("cannot open for writing: " + path.string());

    out.write(kMagic, 4);
    std::uint32_t version = kVersion;
    std::uint32_t dim = static_cast<std::uint32_t>(corpus.dim);
    std::uint64_t count = corpus.rows();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(corpus.vectors.data()),
              static_cast<std::streamsize>(corpus.vectors.size() * sizeof(float)));
    if (!out)
        throw data_error("write failed: " + path.string());
    out.close();

    nlohmann::json manifest;
    manifest["dim"] = corpus.dim;
    auto rows = nlohmann::json::array();
    for (const auto& m : corpus.meta)
        rows.push_back({{"id", m.id}, {"label", m.label}, {"split", to_string(m.split)}});
    manifest["rows"] = std::move(rows);
    manifest["classes"] = corpus.labels();

    std::ofstream mf(manifest_path(path));
    if (!mf)
        throw data_error("cannot open for writing: " + manifest_path(path).string());
    mf << manifest.dump(2) << "\n";
    if (!mf)
        throw data_error("write failed: " + manifest_path(path).string());
}

EmbeddingCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in)
        throw data_error("cannot open corpus file: " + path.string());
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    char magic[4];
    std::uint32_t version = 0, dim = 0;
    std::uint64_t count = 0;
    if (file_size < kHeaderBytes || !in.read(magic, 4))
        throw data_error("malformed header: " + path.string());
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw data_error("malformed header: " + path.string());
    if (version != kVersion)
        throw data_error("unsupported corpus version " + std::to_string(version));
    if (dim == 0)
        throw data_error("malformed header: dim 0 in " + path.string());
    if (file_size != kHeaderBytes + count * dim * sizeof(float))
        throw data_error("row count mismatch: payload does not match declared count in " +
                         path.string());

    EmbeddingCorpus corpus;
    corpus.dim = dim;
    corpus.vectors.resize(static_cast<std::size_t>(count) * dim);
    in.read(reinterpret_cast<char*>(corpus.vectors.data()),
            static_cast<std::streamsize>(corpus.vectors.size() * sizeof(float)));
    if (!in)
        throw data_error("truncated payload: " + path.string());

    std::ifstream mf(manifest_path(path));
    if (!mf)
        throw data_error("missing manifest: " + manifest_path(path).string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad manifest " + manifest_path(path).string() + ": " + e.what());
    }
    if (manifest.contains("dim") && manifest["dim"].get<std::size_t>() != dim)
        throw data_error("dim mismatch between binary and manifest: " + path.string());
    if (!manifest.contains("rows") || !manifest["rows"].is_array())
        throw data_error("manifest has no rows array: " + manifest_path(path).string());
    if (manifest["rows"].size() != count)
        throw data_error("row count mismatch: manifest lists " +
                         std::to_string(manifest["rows"].size()) + " rows, binary holds " +
                         std::to_string(count));

    corpus.meta.reserve(count);
    std::set<std::string> seen;
    for (const auto& r : manifest["rows"]) {
        RowMeta m;
        m.id = r.at("id").get<std::string>();
        m.label = r.at("label").get<std::string>();
        m.split = split_from_string(r.at("split").get<std::string>());
        if (!seen.insert(m.id).second)
            throw data_error("duplicate id '" + m.id + "' in " + manifest_path(path).string());
        corpus.meta.push_back(std::move(m));
    }

    normalize_rows(corpus.vectors, corpus.dim, corpus.rows());
    return corpus;
}

void save_text_embeddings(const ClassTextEmbeddings& text, const std::filesystem::path& path) {
    EmbeddingCorpus corpus;
    corpus.dim = text.dim;
    for (const auto& [label, vec] : text.entries) {
        corpus.vectors.insert(corpus.vectors.end(), vec.begin(), vec.end());
        corpus.meta.push_back({label, label, Split::train});
    }
    save_corpus(corpus, path);
}

ClassTextEmbeddings load_text_embeddings(const std::filesystem::path& path) {
    EmbeddingCorpus corpus = load_corpus(path);
    ClassTextEmbeddings text;
    text.dim = corpus.dim;
    for (std::size_t i = 0; i < corpus.rows(); ++i) {
        auto row = corpus.row(i);
        text.entries[corpus.meta[i].label] = {row.begin(), row.end()};
    }
    return text;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes < 2)
        throw data_error("synthetic spec needs at least 2 classes");
    if (spec.dim == 0)
        throw data_error("synthetic spec needs dim > 0");
    if (spec.distractor_fraction < 0.0 || spec.distractor_fraction >= 1.0)
        throw data_error("distractor_fraction must lie in [0, 1)");
    if (spec.intra_class_noise < 0.0 || spec.text_noise < 0.0)
        throw data_error("noise levels must be non-negative");

    const std::size_t d = spec.dim;

    // Class centroids: random unit vectors, kept in double for row synthesis.
    std::vector<std::vector<double>> centroids(spec.n_classes, std::vector<double>(d));
    {
        SplitMix64 rng(derive_key({spec.seed, hash_str("centroids")}));
        for (auto& c : centroids) {
            double norm2 = 0.0;
            for (auto& x : c) {
                x = rng.gaussian();
                norm2 += x * x;
            }
            double norm = std::sqrt(norm2);
            if (norm == 0.0)
                norm = 1.0;
            for (auto& x : c)
                x /= norm;
        }
    }

    std::vector<std::string> labels(spec.n_classes);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "c%llu-%03zu",
                      static_cast<unsigned long long>(spec.seed), c);
        labels[c] = buf;
    }

    auto counts = split_counts(spec.n_classes);
    auto split_of_class = [&](std::size_t c) {
        if (c < counts[0])
            return Split::train;
        if (c < counts[0] + counts[1])
            return Split::val;
        return Split::test;
    };

    auto noisy_row = [&](SplitMix64& rng, const std::vector<double>& mu, double sigma) {
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j)
            v[j] = mu[j] + sigma * rng.gaussian();
        return unit_from_double(v);
    };

    SyntheticData out;
    out.eval.dim = d;
    out.retrieval.dim = d;
    out.text.dim = d;

    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        SplitMix64 rng(derive_key({spec.seed, hash_str("eval"), c}));
        Split split = split_of_class(c);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            auto v = noisy_row(rng, centroids[c], spec.intra_class_noise);
            out.eval.vectors.insert(out.eval.vectors.end(), v.begin(), v.end());
            out.eval.meta.push_back({labels[c] + "-e" + std::to_string(i), labels[c], split});
        }
    }

    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        SplitMix64 rng(derive_key({spec.seed, hash_str("retrieval"), c}));
        for (std::size_t i = 0; i < spec.corpus_per_class; ++i) {
            auto v = noisy_row(rng, centroids[c], spec.intra_class_noise);
            out.retrieval.vectors.insert(out.retrieval.vectors.end(), v.begin(), v.end());
            out.retrieval.meta.push_back(
                {labels[c] + "-r" + std::to_string(i), labels[c], Split::train});
        }
    }

    // Distractors on top of the class rows, sized so they make up
    // distractor_fraction of the final corpus.
    const std::size_t class_rows = spec.n_classes * spec.corpus_per_class;
    const std::size_t n_distractors = static_cast<std::size_t>(std::llround(
        static_cast<double>(class_rows) * spec.distractor_fraction /
        (1.0 - spec.distractor_fraction)));
    if (n_distractors > 0) {
        SplitMix64 rng(derive_key({spec.seed, hash_str("distractors")}));
        std::vector<double> v(d);
        for (std::size_t i = 0; i < n_distractors; ++i) {
            for (auto& x : v)
                x = rng.gaussian();
            auto u = unit_from_double(v);
            out.retrieval.vectors.insert(out.retrieval.vectors.end(), u.begin(), u.end());
            out.retrieval.meta.push_back(
                {"noise" + std::to_string(spec.seed) + "-" + std::to_string(i), "noise",
                 Split::train});
        }
    }

    {
        SplitMix64 rng(derive_key({spec.seed, hash_str("text")}));
        for (std::size_t c = 0; c < spec.n_classes; ++c)
            out.text.entries[labels[c]] = noisy_row(rng, centroids[c], spec.text_noise);
    }

    return out;
}

} // namespace fewshot
