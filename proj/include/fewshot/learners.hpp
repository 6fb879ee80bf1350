#pragma once

#include "fewshot/augment.hpp"
#include "fewshot/mlp.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace fewshot {

enum class Method { lr, maml, protonet, zs };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct MamlConfig {
    double inner_lr_support = 0.04;   // eta_s
    double inner_lr_retrieval = 0.04; // eta_r
    double outer_lr = 0.001;
    int inner_steps = 5; // desk-scale default; 100 reproduces the reference setup
    std::vector<std::size_t> hidden = {128, 32};
    bool weighted_loss = false;   // scale retrieved rows' CE terms by similarity
    bool learn_inner_lrs = false; // meta-learn eta_s / eta_r
    bool zero_output_init = false; // start the output layer flat (no slot preference)
};

struct ProtoConfig {
    std::vector<std::size_t> hidden = {64};
    double outer_lr = 0.01;
    bool include_retrieved_in_prototypes = true;
};

struct LrConfig {
    double lambda = 1.0; // L2 penalty on weights (not biases)
    int max_iter = 500;
    double tol = 1e-6; // inf-norm of the gradient
};

// ---- logistic regression ----------------------------------------------------

// Multinomial LR fit per task on the support matrix (retrieved rows included,
// all loss weights forced to 1), argmax prediction on the query matrix.
std::vector<std::size_t> lr_fit_predict(const FeatureMatrix& support_x,
                                        const FeatureMatrix& query_x, const LrConfig& cfg = {});

// ---- MAML -------------------------------------------------------------------

// Inner loop: per step, the support-origin and retrieved-origin rows each
// contribute their own weighted-mean gradient, stepped with eta_s and eta_r
// respectively. With weighted_loss, retrieved rows' CE terms are scaled by
// their similarity weight.
MlpParams maml_inner_adapt(const MlpParams& params, const FeatureMatrix& support_x,
                           const MamlConfig& cfg);

struct InnerAdaptTrace {
    MlpParams params;
    Gradients sum_support;   // per-group inner gradients summed over steps
    Gradients sum_retrieved;
};

InnerAdaptTrace maml_inner_adapt_traced(const MlpParams& params, const FeatureMatrix& support_x,
                                        const MamlConfig& cfg);

struct AdamState {
    Gradients m, v;
    std::int64_t t = 0;
};

// Meta-parameters plus the adaptive pieces owned by one training run.
struct MamlLearner {
    MlpParams params;
    double eta_s = 0.04;
    double eta_r = 0.04;
    AdamState opt;
};

struct OuterStats {
    double query_loss = 0.0;
    double query_accuracy = 0.0;
    Gradients meta_grad; // mean first-order meta-gradient over the batch
};

// First-order meta step: the query-loss gradient at adapted parameters,
// averaged over the batch, drives an Adam update of the meta-parameters.
// With learn_inner_lrs, eta_s/eta_r follow the stop-gradient approximation
// dL_q/deta ≈ -grad(L_q)(theta') · (summed inner gradient of that group),
// then clamp to [1e-4, 1].
OuterStats maml_outer_step(MamlLearner& learner, std::span<const AugmentedEpisode> batch,
                           const MamlConfig& cfg, bool similarity_channel);

// ---- ProtoNet ---------------------------------------------------------------

struct ProtoEpisodeResult {
    double loss = 0.0;
    std::vector<std::size_t> predictions; // one per query row
    std::optional<Gradients> grads;       // present when train
};

// Embeds every row through the head; prototypes are plain means of the
// embedded support rows per class (plus retrieved rows when configured);
// query logits are negative squared distances to the prototypes.
ProtoEpisodeResult protonet_episode(const MlpParams& params, const AugmentedEpisode& aug,
                                    const ProtoConfig& cfg, bool similarity_channel, bool train);

// ---- zero-shot ----------------------------------------------------------------

// argmax over classes of cosine similarity; ties go to the lowest class index.
std::vector<std::size_t> zero_shot_predict(std::span<const EpisodeRow> query_rows,
                                           std::span<const std::vector<float>> class_text);

// ---- training harness ---------------------------------------------------------

struct DatasetBundle {
    std::string name;
    std::shared_ptr<const EmbeddingCorpus> eval;
    ClassTextEmbeddings text;
    std::shared_ptr<const VectorIndex> index; // may be null when a_augment = 0
};

// Per-(split, episode) retrieval results at some a_max, sliced on demand.
// Slicing is exact for exact-mode indexes, so every consumer sees the same
// rows an uncached augment() call would produce.
class AugmentCache {
public:
    explicit AugmentCache(std::size_t a_max) : a_max_(a_max) {}

    AugmentedEpisode get(const DatasetBundle& ds, Split split, const EpisodeConfig& config,
                         std::uint64_t episode_index, std::size_t a);

    void clear() { store_.clear(); }
    std::size_t a_max() const { return a_max_; }

private:
    std::size_t a_max_;
    std::map<std::string, AugmentedEpisode> store_;
};

struct TrainOptions {
    int max_steps = 200;
    int batch_size = 8;
    int eval_episodes = 200;
    int val_interval = 20;
    int val_episodes = 20;
    bool similarity_channel = false;
    int workers = 0; // harness seed-level parallelism; 0 = hardware concurrency
};

using MethodConfig = std::variant<MamlConfig, ProtoConfig>;

struct TrainedModel {
    Method method = Method::maml;
    MlpParams params;
    double eta_s = 0.04;
    double eta_r = 0.04;
    MamlConfig maml;
    ProtoConfig proto;
    bool similarity_channel = false;
};

struct EvalStats {
    double accuracy = 0.0;
    double episode_std = 0.0; // std of per-episode accuracies
    std::size_t episodes = 0;
};

struct TrainReport {
    int steps = 0;
    std::size_t input_width = 0;
    std::vector<double> train_loss_curve;   // first seed
    std::vector<double> val_accuracy_curve; // first seed
    double final_test_accuracy = 0.0;       // mean over seeds
    double accuracy_std = 0.0;              // std over seeds
    struct SeedResult {
        std::uint64_t seed = 0;
        double test_accuracy = 0.0;
        double episode_std = 0.0;
    };
    std::vector<SeedResult> per_seed;
};

TrainedModel train_model(const MethodConfig& cfg, const DatasetBundle& ds,
                         const EpisodeConfig& episode_cfg, const TrainOptions& opts,
                         std::uint64_t seed, AugmentCache* cache = nullptr,
                         TrainReport* curves = nullptr);

EvalStats evaluate_model(const TrainedModel& model, const DatasetBundle& ds, Split split,
                         int episodes, const EpisodeConfig& episode_cfg, std::uint64_t seed,
                         AugmentCache* cache = nullptr);

// LR and ZS adapt (or not) per episode; there is nothing to meta-train.
EvalStats evaluate_untrained(Method method, const DatasetBundle& ds, Split split, int episodes,
                             const EpisodeConfig& episode_cfg, std::uint64_t seed,
                             bool similarity_channel, AugmentCache* cache = nullptr);

// Meta-trains on the train split, validates periodically, reports test
// accuracy per seed plus mean and std across seeds.
TrainReport train_learner(const MethodConfig& cfg, const DatasetBundle& ds,
                          const EpisodeConfig& episode_cfg, const TrainOptions& opts,
                          std::span<const std::uint64_t> seeds, AugmentCache* cache = nullptr);

// ---- checkpoints ---------------------------------------------------------------

// Single file: u64 JSON-header length, JSON header (configs, step, seed),
// then the f64 parameter blob in layer order (weights then bias per layer).
void save_checkpoint(const TrainedModel& model, int step, std::uint64_t seed,
                     const EpisodeConfig& episode_cfg, const std::filesystem::path& path);

struct Checkpoint {
    TrainedModel model;
    int step = 0;
    std::uint64_t seed = 0;
    EpisodeConfig episode_cfg;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace fewshot
