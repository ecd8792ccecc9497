#include "causalab/dictionary.hpp"

#include <cmath>
#include <stdexcept>

namespace causalab::dict {

CategoryAccumulator CategoryAccumulator::make(int categories, int width) {
    CategoryAccumulator acc;
    acc.categories = categories;
    acc.width = width;
    acc.sums = Tensor::zeros({categories, width});
    acc.counts.assign(static_cast<size_t>(categories), 0);
    return acc;
}

void CategoryAccumulator::add(int category, const Tensor& activations, int row) {
    if (category < 0 || category >= categories) {
        throw std::out_of_range("CategoryAccumulator::add: category out of range");
    }
    for (int j = 0; j < width; ++j) {
        sums.at(category, j) += activations.at(row, j);
    }
    counts[static_cast<size_t>(category)] += 1;
}

void CategoryAccumulator::merge(const CategoryAccumulator& other) {
    if (other.categories != categories || other.width != width) {
        throw std::invalid_argument("CategoryAccumulator::merge: shape mismatch");
    }
    for (int k = 0; k < categories; ++k) {
        for (int j = 0; j < width; ++j) {
            sums.at(k, j) += other.sums.at(k, j);
        }
        counts[static_cast<size_t>(k)] += other.counts[static_cast<size_t>(k)];
    }
}

CategoryAccumulator collect_category_activations(const ModelBundle& bundle,
                                                 const std::vector<world::SceneInstance>& scenes,
                                                 const world::World& w, Tap tap) {
    if (bundle.config.any_causal()) {
        throw std::invalid_argument(
            "collect_category_activations: estimation bundle must be non-causal");
    }
    CategoryAccumulator acc =
        CategoryAccumulator::make(w.config.categories, bundle.config.sigma);
    for (const auto& scene : scenes) {
        numkit::Graph g;
        const Tensor features = model::encode_visual(scene, w);
        const model::HiddenStates hs = model::forward_states(g, bundle, features, scene.caption);
        switch (tap) {
            case Tap::post_projector:
                for (size_t i = 0; i < scene.present.size(); ++i) {
                    acc.add(scene.present[i], hs.soft_tokens, static_cast<int>(i));
                }
                break;
            case Tap::final_hidden_visual:
                for (size_t i = 0; i < scene.present.size(); ++i) {
                    acc.add(scene.present[i], hs.final_hidden, static_cast<int>(i));
                }
                break;
            case Tap::final_hidden_textual:
                for (size_t t = 0; t < scene.caption.size(); ++t) {
                    const int cat = w.vocab.token_category(scene.caption[t]);
                    if (cat >= 0) {
                        acc.add(cat, hs.final_hidden, hs.n_soft + static_cast<int>(t));
                    }
                }
                break;
        }
    }
    return acc;
}

ConfounderDictionary build_dictionary(const CategoryAccumulator& acc,
                                      ConfounderDictionary::Modality modality) {
    ConfounderDictionary d;
    d.modality = modality;
    d.entries = Tensor::zeros({acc.categories, acc.width});
    d.sample_counts = acc.counts;
    for (int k = 0; k < acc.categories; ++k) {
        const long n = acc.counts[static_cast<size_t>(k)];
        if (n < 1) {
            throw std::runtime_error("build_dictionary: category " + std::to_string(k) +
                                     " has no observed activations");
        }
        for (int j = 0; j < acc.width; ++j) {
            d.entries.at(k, j) = acc.sums.at(k, j) / static_cast<double>(n);
        }
    }
    return d;
}

ModelBundle estimation_checkpoint(train::TrainState& state, double fraction) {
    if (!state.started()) {
        throw std::logic_error("estimation_checkpoint: training has not started");
    }
    if (fraction <= 0.0 || fraction > 1.0) {
        throw std::invalid_argument("estimation_checkpoint: fraction must be in (0,1]");
    }
    if (state.bundle().config.any_causal()) {
        throw std::invalid_argument("estimation_checkpoint: run must be non-causal");
    }
    const int target = static_cast<int>(
        std::ceil(fraction * state.config().steps_per_epoch));
    if (state.current_step() > target) {
        throw std::logic_error("estimation_checkpoint: run already past the target step");
    }
    state.run_steps(target - state.current_step());
    return state.snapshot();
}

DictionarySet build_all_dictionaries(const ModelBundle& estimation_bundle,
                                     const std::vector<world::SceneInstance>& scenes,
                                     const world::World& w) {
    DictionarySet set;
    set.proj_v = build_dictionary(
        collect_category_activations(estimation_bundle, scenes, w, Tap::post_projector),
        ConfounderDictionary::Modality::visual);
    set.final_v = build_dictionary(
        collect_category_activations(estimation_bundle, scenes, w, Tap::final_hidden_visual),
        ConfounderDictionary::Modality::visual);
    set.final_t = build_dictionary(
        collect_category_activations(estimation_bundle, scenes, w, Tap::final_hidden_textual),
        ConfounderDictionary::Modality::textual);
    return set;
}

}  // namespace causalab::dict
