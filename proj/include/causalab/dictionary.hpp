#pragma once

#include <vector>

#include "causalab/model.hpp"
#include "causalab/trainer.hpp"
#include "causalab/world.hpp"

namespace causalab::dict {

using model::ConfounderDictionary;
using model::ModelBundle;
using numkit::Tensor;

enum class Tap { post_projector, final_hidden_visual, final_hidden_textual };

// Per-category running sums of activations at a tap.
struct CategoryAccumulator {
    int categories = 0;
    int width = 0;
    Tensor sums;               // K × width
    std::vector<long> counts;  // K

    static CategoryAccumulator make(int categories, int width);
    void add(int category, const Tensor& activations, int row);
    // Shards combine associatively, enabling parallel collection.
    void merge(const CategoryAccumulator& other);
};

// Runs the (non-causal) estimation bundle over the scenes and attributes
// activations to categories: visual taps map soft tokens to their object's
// category, the textual tap maps caption category-token positions.
// The bundle must have both causal flags off.
CategoryAccumulator collect_category_activations(const ModelBundle& bundle,
                                                 const std::vector<world::SceneInstance>& scenes,
                                                 const world::World& w, Tap tap);

// Row k = sums[k] / counts[k]. A zero-count category is a coverage error.
ConfounderDictionary build_dictionary(const CategoryAccumulator& acc,
                                      ConfounderDictionary::Modality modality);

struct DictionarySet {
    ConfounderDictionary proj_v;
    ConfounderDictionary final_v;
    ConfounderDictionary final_t;
};

// All three dictionaries from one estimation checkpoint.
DictionarySet build_all_dictionaries(const ModelBundle& estimation_bundle,
                                     const std::vector<world::SceneInstance>& scenes,
                                     const world::World& w);

// Snapshot of the (non-causal) run after ceil(fraction * steps_per_epoch)
// optimizer steps; advances the state to that step if needed.
ModelBundle estimation_checkpoint(train::TrainState& state, double fraction = 0.1);

}  // namespace causalab::dict
