#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "causalab/rng.hpp"
#include "causalab/tensor.hpp"

namespace causalab::world {

using numkit::Rng;
using numkit::Tensor;

// One directed co-occurrence bias: whenever `center` is present, `partner`
// is forced present with probability `p_co`.
struct BiasPair {
    int center = 0;
    int partner = 0;
    double p_co = 0.0;
};

struct WorldConfig {
    int categories = 12;  // K
    int feature_dim = 16;
    double noise_std = 0.1;
    std::vector<BiasPair> bias_pairs = {{0, 1, 0.8}, {0, 2, 0.8}, {0, 3, 0.8}};
    double base_rate = 0.15;
    int max_objects = 4;
    uint64_t seed = 0;
    std::vector<std::string> category_names;  // optional; defaults generated

    void validate() const;
};

// Token ids are fixed by construction: specials first, then the caption
// template, then one token per category.
struct Vocabulary {
    std::vector<std::string> tokens;
    int bos = 0;
    int eos = 1;
    int yes = 2;
    int no = 3;
    int query = 4;
    int template_start = 5;
    int template_len = 2;
    int category_start = 7;

    int size() const { return static_cast<int>(tokens.size()); }
    int category_token(int category) const { return category_start + category; }
    bool is_category_token(int token) const;
    int token_category(int token) const;  // -1 if not a category token
};

struct World {
    WorldConfig config;
    Tensor prototypes;  // K × feature_dim, frozen
    std::vector<std::string> category_names;
    Vocabulary vocab;
};

struct SceneInstance {
    std::vector<int> present;   // ascending category ids
    Tensor features;            // |present| × feature_dim
    std::vector<int> caption;   // BOS template cats EOS
};

struct CooccurrenceMatrix {
    int categories = 0;
    std::vector<long> counts;  // K×K, symmetric, diagonal = totals

    long at(int i, int j) const { return counts[static_cast<size_t>(i) * categories + j]; }
    long& at(int i, int j) { return counts[static_cast<size_t>(i) * categories + j]; }
    long total(int i) const { return at(i, i); }
};

// Deterministic given cfg.seed. Prototypes are rejection-resampled until all
// pairwise cosines are below 0.5; gives up after 1000 attempts.
World build_world(const WorldConfig& cfg);

// Independent base-rate presence, then conditional partner forcing, then
// truncation to max_objects with centers and partners kept first. Empty
// draws are resampled internally.
SceneInstance sample_scene(const World& world, Rng& rng);

std::vector<SceneInstance> sample_scenes(const World& world, Rng& rng, int count);

// categories = 0 infers the count from the scenes' highest id.
CooccurrenceMatrix cooccurrence_counts(const std::vector<SceneInstance>& scenes,
                                       int categories = 0);

// Descending by counts[center][.], ties broken by ascending id, center excluded.
std::vector<int> top_k_cooccurring(const CooccurrenceMatrix& matrix, int center, int k);

// Category ids mentioned in a caption, deduplicated ascending.
std::vector<int> parse_caption_categories(const Vocabulary& vocab, const std::vector<int>& caption);

std::string world_to_json(const World& world);
World world_from_json(const std::string& text);
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

std::string scenes_to_jsonl(const std::vector<SceneInstance>& scenes);
std::vector<SceneInstance> scenes_from_jsonl(const std::string& text, int feature_dim);
void save_scenes(const std::vector<SceneInstance>& scenes, const std::filesystem::path& path);
std::vector<SceneInstance> load_scenes(const std::filesystem::path& path, int feature_dim);

}  // namespace causalab::world
