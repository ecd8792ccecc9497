#pragma once

#include <array>
#include <string>
#include <vector>

#include "causalab/model.hpp"
#include "causalab/world.hpp"

namespace causalab::analysis {

using model::ModelBundle;
using numkit::Tensor;
using world::CooccurrenceMatrix;
using world::SceneInstance;
using world::World;

struct TapId {
    enum class Kind { encoder_out, projector_out, decoder_layer, pre_head };
    Kind kind = Kind::encoder_out;
    int layer = 0;  // 1-based, decoder_layer only

    std::string name() const;
    static std::vector<TapId> all(int n_layers);
};

enum class Modality { visual, textual };

struct TapCapture {
    TapId tap;
    Modality modality = Modality::visual;
    Tensor means;              // K × width
    std::vector<long> counts;  // per category
    int min_count = 0;
    std::vector<int> undersampled;  // categories below the reporting minimum
};

// Per-category mean activations at each tap over one forward pass per scene.
// Visual attribution follows the dictionary module (soft token -> object
// category); textual attribution uses caption category-token positions.
std::vector<TapCapture> capture_means(const ModelBundle& bundle,
                                      const std::vector<SceneInstance>& scenes, const World& w,
                                      const std::vector<TapId>& taps, Modality modality,
                                      long min_count = 30);

struct Pca3 {
    Tensor coords;  // K × 3
    std::array<double, 3> explained_variance{0.0, 0.0, 0.0};
    bool rank_deficient = false;
};

// Column-centered projection onto the top-3 right singular vectors, computed
// by one-sided Jacobi SVD of the data matrix. Sign convention: the largest
// magnitude loading of each component is positive.
Pca3 pca3(const Tensor& means);

struct EntanglementReport {
    TapId tap;
    int center = 0;
    std::vector<int> partners;
    double separation_ratio = 0.0;  // mean dist to partners / mean dist to non-partners
    double spearman_rho = 0.0;      // distance vs co-occurrence over all pairs
    Pca3 pca;

    std::string to_json() const;
};

// Cosine distances in the full-width mean space; PCA is attached only for
// plotting. k defaults to 10 clamped to K-2.
EntanglementReport entanglement_metrics(const TapCapture& capture,
                                        const CooccurrenceMatrix& cooccurrence, int center,
                                        int k = 10);

// Full tap series from encoder_out through pre_head for one center.
std::vector<EntanglementReport> layer_profile(const ModelBundle& bundle,
                                              const std::vector<SceneInstance>& scenes,
                                              const World& w,
                                              const CooccurrenceMatrix& cooccurrence, int center,
                                              int k = 10, long min_count = 30);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

double cosine_distance(const Tensor& means, int a, int b);

std::string profile_to_json(const std::vector<EntanglementReport>& profile);
std::string profile_to_csv(const std::vector<EntanglementReport>& profile,
                           const std::string& label);

}  // namespace causalab::analysis
