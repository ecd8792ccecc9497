#pragma once

#include <set>
#include <string>
#include <vector>

#include "causalab/model.hpp"
#include "causalab/trainer.hpp"
#include "causalab/world.hpp"

namespace causalab::evalkit {

using model::ModelBundle;
using world::CooccurrenceMatrix;
using world::SceneInstance;
using world::World;

struct ChairScores {
    double chair_s = 0.0;  // fraction of captions with >= 1 hallucinated category
    double chair_i = 0.0;  // hallucinated mentions / total mentions
    double recall = 0.0;   // covered ground-truth categories / total ground-truth categories
};

struct CaptionEval {
    std::set<int> mentioned;  // deduplicated per caption
    std::set<int> truth;
};

// Standard CHAIR definitions; mentions are per-caption category sets so
// duplicates count once.
ChairScores chair_metrics(const std::vector<CaptionEval>& captions);

enum class PopeRegime { rnd, pop, adv };

const char* pope_regime_name(PopeRegime r);

struct PopeProbe {
    int scene_index = 0;
    int category = 0;
    bool positive = false;
};

// Per scene, up to per_scene positive probes (present categories) and the
// same number of negatives chosen by the regime:
//   rnd: uniform absent category
//   pop: globally most frequent absent categories
//   adv: absent categories with the highest co-occurrence with any present one
// Ties break by ascending id. Scenes covering every category are skipped.
std::vector<PopeProbe> build_pope_probes(const std::vector<SceneInstance>& scenes,
                                         const CooccurrenceMatrix& cooccurrence,
                                         PopeRegime regime, int per_scene, uint64_t seed);

double pope_accuracy(const ModelBundle& bundle, const std::vector<SceneInstance>& scenes,
                     const std::vector<PopeProbe>& probes, const World& w);

struct HallucinationReport {
    double chair_s = 0.0;
    double chair_i = 0.0;
    double recall = 0.0;
    double pope_rnd = 0.0;
    double pope_pop = 0.0;
    double pope_adv = 0.0;
    // Fraction of "yes" answers when probing an absent bias partner in scenes
    // that contain its center: the co-occurrence hallucination rate.
    double partner_false_yes = 0.0;
    long partner_probes = 0;
    int n_eval = 0;

    std::string to_json() const;
    static std::string csv_header();
    std::string to_csv_row(const std::string& arm, uint64_t seed) const;
};

// Captions via greedy decoding plus all three POPE regimes over the scenes.
HallucinationReport evaluate_bundle(const ModelBundle& bundle,
                                    const std::vector<SceneInstance>& scenes, const World& w,
                                    int pope_per_scene, uint64_t probe_seed);

double partner_false_yes_rate(const ModelBundle& bundle,
                              const std::vector<SceneInstance>& scenes, const World& w,
                              long* probe_count = nullptr);

std::string probes_to_json(const std::vector<PopeProbe>& probes);

struct AblationCell {
    std::string placement;
    std::string variant;  // "-" for the baseline row
    int seeds_ok = 0;
    int seeds_total = 0;
    // Mean and sample standard deviation over successful seeds.
    double chair_s_mean = 0.0, chair_s_sd = 0.0;
    double chair_i_mean = 0.0, chair_i_sd = 0.0;
    double recall_mean = 0.0, recall_sd = 0.0;
    double pope_rnd_mean = 0.0, pope_rnd_sd = 0.0;
    double pope_pop_mean = 0.0, pope_pop_sd = 0.0;
    double pope_adv_mean = 0.0, pope_adv_sd = 0.0;
    double partner_false_yes_mean = 0.0, partner_false_yes_sd = 0.0;
};

struct AblationGrid {
    std::vector<AblationCell> cells;
    std::vector<train::ArmRunResult> runs;
    std::filesystem::path grid_csv_path;
    std::filesystem::path runs_csv_path;
};

// Placement × variant grid over shared seeds: baseline plus every causal
// placement under every requested variant. Per-cell failures are recorded
// and the grid continues.
AblationGrid ablation_grid(const train::ExperimentConfig& cfg,
                           const std::vector<uint64_t>& seeds,
                           const std::vector<std::string>& placements,
                           const std::vector<model::AttnVariant>& variants);

}  // namespace causalab::evalkit
