#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "causalab/model.hpp"
#include "causalab/world.hpp"

namespace causalab::train {

using model::ModelBundle;
using numkit::Tensor;

enum class Stage { pretrain, finetune };

const char* stage_name(Stage s);

struct TrainConfig {
    Stage stage = Stage::pretrain;
    int batch_size = 8;
    double learning_rate = 0.15;
    int steps = 300;
    int steps_per_epoch = 300;
    uint64_t seed = 0;
    double momentum = 0.9;  // SGD with momentum, fixed choice
    int checkpoint_every = 0;  // 0 = final checkpoint only
    // 0 streams a fresh scene per sample; N > 0 cycles a fixed pool of N
    // scenes (the overfit setting).
    int dataset_scenes = 0;
    // Alternate caption and presence-probe samples; captions only when off.
    bool probe_mix = true;

    void validate() const;
};

struct StepLog {
    int step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
};

// Trainable tensors for a stage: pretrain touches the projector and the
// intervention branches only; finetune everything except the frozen encoder
// prototypes and the dictionaries (which are never parameters).
std::vector<std::pair<std::string, Tensor>> trainable_parameters(const ModelBundle& bundle,
                                                                 Stage stage);

// Owns the bundle while training. Scene and probe draws come from a single
// stream seeded by cfg.seed, so arms sharing a seed consume identical data.
class TrainState {
public:
    TrainState() = default;
    TrainState(ModelBundle bundle, world::World w, TrainConfig cfg);

    // Advances n optimizer steps. Aborts with a diagnostic on non-finite loss.
    void run_steps(int n);
    int current_step() const { return step_; }
    bool started() const { return started_; }
    const TrainConfig& config() const;
    const ModelBundle& bundle() const { return bundle_; }
    ModelBundle snapshot() const { return bundle_.deep_copy(); }
    const std::vector<StepLog>& curve() const { return curve_; }

private:
    bool started_ = false;
    int step_ = 0;
    long ordinal_ = 0;  // samples consumed, drives fixed-pool cycling
    ModelBundle bundle_;
    world::World world_;
    TrainConfig cfg_;
    std::unique_ptr<numkit::Rng> stream_;
    std::vector<world::SceneInstance> pool_;
    std::vector<std::pair<std::string, Tensor>> trainables_;
    std::vector<Tensor> velocity_;
    std::vector<StepLog> curve_;

    double train_one_sample();
};

struct TrainOutput {
    std::vector<StepLog> curve;
    ModelBundle final_bundle;
    std::vector<std::pair<int, ModelBundle>> checkpoints;  // (step, snapshot)
};

TrainOutput train_stage(ModelBundle bundle, const world::World& w, const TrainConfig& cfg);

std::string curve_to_csv(const std::vector<StepLog>& curve);

// Experiment arms for the paired comparison and the ablation grid.
struct Arm {
    std::string name;
    bool causal_projector = false;
    bool causal_final_layer = false;
    model::AttnVariant variant = model::AttnVariant::shared_kv;
};

Arm make_arm(const std::string& placement, model::AttnVariant variant);
std::vector<Arm> default_arms();  // baseline + both-causal

struct ExperimentConfig {
    world::WorldConfig world_cfg;
    model::ModelConfig model_cfg;  // placement flags come from the arm
    TrainConfig pretrain;
    TrainConfig finetune;
    int dictionary_scenes = 1000;
    int eval_scene_count = 1500;
    int pope_per_scene = 2;
    double dict_fraction = 0.1;
    // The causal pretraining deltas: doubled batch, halved learning rate.
    double causal_batch_mult = 2.0;
    double causal_lr_mult = 0.5;
    int profile_center = 0;
    int profile_k = 3;
    std::filesystem::path out_dir;
};

struct ArmRunResult {
    std::string arm;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    uint64_t config_hash = 0;
    // Filled when ok:
    double chair_s = 0.0, chair_i = 0.0, recall = 0.0;
    double pope_rnd = 0.0, pope_pop = 0.0, pope_adv = 0.0;
    double partner_false_yes = 0.0;
    double prehead_separation_ratio = 0.0;
    double prehead_spearman_rho = 0.0;
    std::filesystem::path checkpoint_path;
    std::filesystem::path report_path;
    std::filesystem::path profile_path;
};

struct ExperimentResult {
    std::vector<ArmRunResult> runs;
    std::filesystem::path manifest_path;
    std::filesystem::path summary_csv_path;
};

// Per seed: one shared non-causal estimation run and dictionary build, then
// per arm the two-stage training, evaluation and the layer profile. Failures
// are recorded per arm and the remaining arms continue.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<uint64_t>& model_seeds,
                                const std::vector<Arm>& arms);

}  // namespace causalab::train
