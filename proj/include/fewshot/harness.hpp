#pragma once

#include "fewshot/learners.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fewshot {

enum class MetaRetrieval { none, fine, coarse, both };

std::string to_string(MetaRetrieval m);
MetaRetrieval meta_retrieval_from_string(const std::string& s);

struct ExperimentSpec {
    std::string name = "sweep";
    std::string dataset_a;
    std::string dataset_b;
    std::vector<Method> methods;
    std::vector<std::size_t> a_sweep = {0};
    MetaRetrieval meta_retrieval = MetaRetrieval::none; // sweep mode; ablation runs all four
    std::vector<std::uint64_t> seeds = {0};
    EpisodeConfig episode;
    MamlConfig maml;
    ProtoConfig proto;
    TrainOptions train;
};

struct ResultRow {
    std::string experiment;
    std::string dataset_train;
    std::string dataset_eval;
    Method method = Method::lr;
    std::size_t a = 0;
    MetaRetrieval meta_retrieval = MetaRetrieval::none;
    std::uint64_t seed = 0;
    double test_accuracy = 0.0;
    double accuracy_std = 0.0; // std of per-episode accuracies within this run
    double wall_time_seconds = 0.0;
};

// One row per (method, A, seed); ZS collapses the A axis to a single row per
// seed. Rows come back sorted by (experiment, method, A, ..., seed).
std::vector<ResultRow> run_sweep(const ExperimentSpec& spec, const DatasetBundle& ds);

// Runs every method under meta_retrieval in {none, fine, coarse, both}.
// ZS ignores both axes and is emitted only under none.
std::vector<ResultRow> run_ablation(const ExperimentSpec& spec, const DatasetBundle& ds);

// Trains on each dataset and evaluates on both test splits, so same-dataset
// and cross-dataset rows pair up. ZS/LR have no meta-training; their rows are
// repeated under both train labels with identical accuracy.
std::vector<ResultRow> run_cross_eval(const ExperimentSpec& spec, const DatasetBundle& ds_a,
                                      const DatasetBundle& ds_b);

// RFC-4180 CSV; accuracies with 4 decimals.
void emit_csv(std::span<const ResultRow> rows, const std::filesystem::path& path);
std::vector<ResultRow> parse_csv(const std::filesystem::path& path);

} // namespace fewshot
