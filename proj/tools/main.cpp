#include "fewshot/corpus.hpp"
#include "fewshot/error.hpp"
#include "fewshot/harness.hpp"
#include "fewshot/index.hpp"
#include "fewshot/learners.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace {

using namespace fewshot;

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos)
            comma = csv.size();
        seeds.push_back(std::stoull(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    if (seeds.empty())
        throw data_error("--seeds: no seeds given");
    return seeds;
}

int cmd_gen_synthetic(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen-synthetic",
                                   "Generate a synthetic evaluation corpus, retrieval corpus and "
                                   "class text embeddings");
    auto opts = std::make_shared<SyntheticSpec>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--classes", opts->n_classes, "Number of classes")->capture_default_str();
    cmd->add_option("--per-class", opts->per_class, "Evaluation rows per class")
        ->capture_default_str();
    cmd->add_option("--corpus-per-class", opts->corpus_per_class, "Retrieval rows per class")
        ->capture_default_str();
    cmd->add_option("--dim", opts->dim, "Embedding width")->capture_default_str();
    cmd->add_option("--noise", opts->intra_class_noise, "Within-class noise sigma")
        ->capture_default_str();
    cmd->add_option("--text-noise", opts->text_noise, "Class text embedding noise sigma")
        ->capture_default_str();
    cmd->add_option("--distractor-fraction", opts->distractor_fraction,
                    "Fraction of retrieval rows drawn from no class")
        ->capture_default_str();
    cmd->add_option("--seed", opts->seed, "Generator seed")->capture_default_str();
    cmd->add_option("--out", *out, "Output path prefix")->required();
    cmd->callback([opts, out] {
        SyntheticData data = generate_synthetic(*opts);
        save_corpus(data.eval, *out + ".eval.bin");
        save_corpus(data.retrieval, *out + ".retrieval.bin");
        save_text_embeddings(data.text, *out + ".text.bin");
        std::cout << "eval rows " << data.eval.rows() << ", retrieval rows "
                  << data.retrieval.rows() << ", classes " << data.text.entries.size() << "\n";
    });
    return 0;
}

int cmd_build_index(CLI::App& app) {
    auto* cmd = app.add_subcommand("build-index", "Build a search index over a corpus");
    auto corpus_path = std::make_shared<std::string>();
    auto mode = std::make_shared<std::string>("exact");
    auto params = std::make_shared<AnnParams>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--corpus", *corpus_path, "Corpus to index")->required();
    cmd->add_option("--mode", *mode, "exact or ann")->capture_default_str();
    cmd->add_option("--nlist", params->nlist, "ANN cluster count")->capture_default_str();
    cmd->add_option("--nprobe", params->nprobe, "ANN probed clusters")->capture_default_str();
    cmd->add_option("--seed", params->seed, "k-means seed")->capture_default_str();
    cmd->add_option("--out", *out, "Index descriptor path")->required();
    cmd->callback([corpus_path, mode, params, out] {
        auto corpus = std::make_shared<EmbeddingCorpus>(load_corpus(*corpus_path));
        IndexMode m;
        if (*mode == "exact")
            m = IndexMode::exact;
        else if (*mode == "ann")
            m = IndexMode::ann;
        else
            throw data_error("--mode must be exact or ann");
        VectorIndex index = build_index(std::move(corpus), m, *params);
        index.save(*out);
        std::cout << "indexed " << index.rows() << " rows (" << *mode << ")\n";
    });
    return 0;
}

int cmd_build_compact_index(CLI::App& app) {
    auto* cmd = app.add_subcommand("build-compact-index",
                                   "Precompute the compact index from per-row and per-class "
                                   "neighbor unions");
    auto index_path = std::make_shared<std::string>();
    auto corpus_path = std::make_shared<std::string>();
    auto text_path = std::make_shared<std::string>();
    auto per_image = std::make_shared<std::size_t>(20);
    auto per_class = std::make_shared<std::size_t>(100);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--index", *index_path, "Full index descriptor")->required();
    cmd->add_option("--corpus", *corpus_path, "Evaluation corpus")->required();
    cmd->add_option("--text-embeddings", *text_path, "Class text embeddings")->required();
    cmd->add_option("--per-image-k", *per_image, "Neighbors kept per evaluation row")
        ->capture_default_str();
    cmd->add_option("--per-class-k", *per_class, "Neighbors kept per class text embedding")
        ->capture_default_str();
    cmd->add_option("--out", *out, "Compact index descriptor path")->required();
    cmd->callback([index_path, corpus_path, text_path, per_image, per_class, out] {
        VectorIndex full = VectorIndex::load(*index_path);
        EmbeddingCorpus eval = load_corpus(*corpus_path);
        ClassTextEmbeddings text = load_text_embeddings(*text_path);
        VectorIndex compact = build_compact_index(full, eval, text, *per_image, *per_class);
        compact.save(*out);
        std::cout << "compact index holds " << compact.rows() << " of " << full.rows()
                  << " rows\n";
    });
    return 0;
}

int cmd_eval_recall(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval-recall",
                                   "Measure top-a recall of a candidate index against a reference "
                                   "using episode retrieval queries");
    auto ref_path = std::make_shared<std::string>();
    auto cand_path = std::make_shared<std::string>();
    auto corpus_path = std::make_shared<std::string>();
    auto text_path = std::make_shared<std::string>();
    auto split = std::make_shared<std::string>("test");
    auto episodes = std::make_shared<int>(20);
    auto a = std::make_shared<std::size_t>(20);
    auto ec = std::make_shared<EpisodeConfig>();
    cmd->add_option("--reference", *ref_path, "Reference index descriptor")->required();
    cmd->add_option("--candidate", *cand_path, "Candidate index descriptor")->required();
    cmd->add_option("--corpus", *corpus_path, "Evaluation corpus")->required();
    cmd->add_option("--text-embeddings", *text_path, "Class text embeddings")->required();
    cmd->add_option("--split", *split, "Split to sample episodes from")->capture_default_str();
    cmd->add_option("--episodes", *episodes, "Episodes to sample")->capture_default_str();
    cmd->add_option("--a", *a, "Recall depth")->capture_default_str();
    cmd->add_option("--n-way", ec->n_way, "Classes per episode")->capture_default_str();
    cmd->add_option("--k-shot", ec->k_shot, "Support rows per class")->capture_default_str();
    cmd->add_option("--queries", ec->q_query, "Query rows per class")->capture_default_str();
    cmd->add_option("--alpha-t", ec->alpha_t, "Text embedding weight in the retrieval query")
        ->capture_default_str();
    cmd->add_option("--seed", ec->seed, "Episode seed")->capture_default_str();
    cmd->callback([ref_path, cand_path, corpus_path, text_path, split, episodes, a, ec] {
        VectorIndex reference = VectorIndex::load(*ref_path);
        VectorIndex candidate = VectorIndex::load(*cand_path);
        EmbeddingCorpus corpus = load_corpus(*corpus_path);
        ClassTextEmbeddings text = load_text_embeddings(*text_path);

        std::vector<std::vector<float>> queries;
        for (int e = 0; e < *episodes; ++e) {
            Episode ep = sample_episode(corpus, text, split_from_string(*split), *ec, e);
            for (std::size_t c = 0; c < ep.classes.size(); ++c) {
                std::vector<std::vector<float>> support;
                for (const auto& row : ep.support)
                    if (row.class_index == c)
                        support.push_back(row.vec);
                queries.push_back(
                    compose_query_embedding(ep.class_text[c], support, ec->alpha_t));
            }
        }
        double recall = measure_recall(reference, candidate, queries, *a);
        std::printf("recall=%.6f\n", recall);
    });
    return 0;
}

int cmd_run(CLI::App& app) {
    auto* cmd = app.add_subcommand("run", "Run an experiment and write a CSV of result rows");
    auto mode = std::make_shared<std::string>();
    auto spec = std::make_shared<ExperimentSpec>();
    auto methods = std::make_shared<std::vector<std::string>>();
    auto augments = std::make_shared<std::vector<std::size_t>>();
    auto seeds_csv = std::make_shared<std::string>("0");
    auto meta = std::make_shared<std::string>("none");
    auto corpus_a = std::make_shared<std::string>();
    auto text_a = std::make_shared<std::string>();
    auto index_a = std::make_shared<std::string>();
    auto retrieval_a = std::make_shared<std::string>();
    auto corpus_b = std::make_shared<std::string>();
    auto text_b = std::make_shared<std::string>();
    auto index_b = std::make_shared<std::string>();
    auto retrieval_b = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();

    cmd->add_option("mode", *mode, "sweep, ablation or cross-eval")->required();
    cmd->add_option("--corpus", *corpus_a, "Evaluation corpus")->required();
    cmd->add_option("--text-embeddings", *text_a, "Class text embeddings")->required();
    cmd->add_option("--index", *index_a, "Prebuilt index descriptor");
    cmd->add_option("--retrieval-corpus", *retrieval_a,
                    "Retrieval corpus (builds an exact index when --index is absent)");
    cmd->add_option("--corpus-b", *corpus_b, "Second evaluation corpus (cross-eval)");
    cmd->add_option("--text-embeddings-b", *text_b, "Second class text embeddings (cross-eval)");
    cmd->add_option("--index-b", *index_b, "Second prebuilt index (cross-eval)");
    cmd->add_option("--retrieval-corpus-b", *retrieval_b, "Second retrieval corpus (cross-eval)");
    cmd->add_option("--method", *methods, "Method (repeatable): lr, maml, protonet, zs")
        ->required();
    cmd->add_option("--augment", *augments, "Retrieved rows per class A (repeatable)");
    cmd->add_option("--seeds", *seeds_csv, "Comma-separated seed list")->capture_default_str();
    cmd->add_option("--meta-retrieval", *meta, "none, fine, coarse or both")
        ->capture_default_str();
    cmd->add_option("--n-way", spec->episode.n_way, "Classes per episode")->capture_default_str();
    cmd->add_option("--k-shot", spec->episode.k_shot, "Support rows per class")
        ->capture_default_str();
    cmd->add_option("--queries", spec->episode.q_query, "Query rows per class")
        ->capture_default_str();
    cmd->add_option("--alpha-t", spec->episode.alpha_t,
                    "Text embedding weight in the retrieval query")
        ->capture_default_str();
    cmd->add_option("--inner-steps", spec->maml.inner_steps, "Inner adaptation steps")
        ->capture_default_str();
    cmd->add_option("--max-steps", spec->train.max_steps, "Meta-training steps")
        ->capture_default_str();
    cmd->add_option("--batch-size", spec->train.batch_size, "Episodes per meta step")
        ->capture_default_str();
    cmd->add_option("--eval-episodes", spec->train.eval_episodes, "Test episodes per seed")
        ->capture_default_str();
    cmd->add_option("--name", *name, "Experiment name in the CSV (defaults to the mode)");
    cmd->add_option("--out", *out, "CSV output path")->required();

    cmd->callback([=] {
        auto load_bundle = [](const std::string& corpus_path, const std::string& text_path,
                              const std::string& index_path, const std::string& retrieval_path,
                              bool need_index) {
            DatasetBundle ds;
            ds.name = corpus_path;
            ds.eval = std::make_shared<EmbeddingCorpus>(load_corpus(corpus_path));
            ds.text = load_text_embeddings(text_path);
            if (!index_path.empty()) {
                ds.index = std::make_shared<VectorIndex>(VectorIndex::load(index_path));
            } else if (!retrieval_path.empty()) {
                auto retrieval =
                    std::make_shared<EmbeddingCorpus>(load_corpus(retrieval_path));
                ds.index = std::make_shared<VectorIndex>(
                    build_index(std::move(retrieval), IndexMode::exact));
            } else if (need_index) {
                throw data_error("need --index or --retrieval-corpus when any --augment > 0");
            }
            return ds;
        };

        for (const auto& m : *methods)
            spec->methods.push_back(method_from_string(m));
        if (!augments->empty())
            spec->a_sweep = *augments;
        spec->seeds = parse_seeds(*seeds_csv);
        spec->meta_retrieval = meta_retrieval_from_string(*meta);
        spec->name = name->empty() ? *mode : *name;
        spec->dataset_a = *corpus_a;
        spec->dataset_b = *corpus_b;

        bool need_index = false;
        for (std::size_t a : spec->a_sweep)
            need_index |= a > 0;

        DatasetBundle ds_a = load_bundle(*corpus_a, *text_a, *index_a, *retrieval_a, need_index);

        std::vector<ResultRow> rows;
        if (*mode == "sweep") {
            rows = run_sweep(*spec, ds_a);
        } else if (*mode == "ablation") {
            rows = run_ablation(*spec, ds_a);
        } else if (*mode == "cross-eval") {
            if (corpus_b->empty() || text_b->empty())
                throw data_error("cross-eval needs --corpus-b and --text-embeddings-b");
            DatasetBundle ds_b =
                load_bundle(*corpus_b, *text_b, *index_b, *retrieval_b, need_index);
            rows = run_cross_eval(*spec, ds_a, ds_b);
        } else {
            throw data_error("run mode must be sweep, ablation or cross-eval");
        }
        emit_csv(rows, *out);
        std::cout << rows.size() << " rows -> " << *out << "\n";
    });
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Episodic few-shot classification with retrieval augmentation"};
    app.require_subcommand(1);

    cmd_gen_synthetic(app);
    cmd_build_index(app);
    cmd_build_compact_index(app);
    cmd_eval_recall(app);
    cmd_run(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const fewshot::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const fewshot::data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
