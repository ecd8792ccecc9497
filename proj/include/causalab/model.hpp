#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "causalab/graph.hpp"
#include "causalab/tensor.hpp"
#include "causalab/world.hpp"

namespace causalab::model {

using numkit::Graph;
using numkit::Rng;
using numkit::Tensor;

// Projection-matrix layouts for the confounder cross-attention.
enum class AttnVariant { shared_kv, independent_kv, q_and_o, q_and_v };

const char* attn_variant_name(AttnVariant v);
AttnVariant attn_variant_from_name(const std::string& name);

struct ModelConfig {
    int sigma = 32;  // hidden size
    int n_layers = 4;
    int n_heads = 2;
    int vocab_size = 0;   // from the world vocabulary
    int feature_dim = 16; // from the world
    int max_seq_len = 24;
    bool causal_projector = false;
    bool causal_final_layer = false;
    AttnVariant attn_variant = AttnVariant::shared_kv;

    void validate() const;
    bool any_causal() const { return causal_projector || causal_final_layer; }
};

struct ConfounderDictionary {
    enum class Modality { visual, textual };
    Modality modality = Modality::visual;
    Tensor entries;  // K × sigma, frozen
    std::vector<long> sample_counts;

    bool defined() const { return entries.defined(); }
};

// One confounder attention branch. Exactly the matrices required by the
// variant are allocated; shared_kv keeps a single W_kv aliased as key and
// value map.
struct CrossAttentionParams {
    Tensor w_kv;  // shared_kv
    Tensor w_k;   // independent_kv
    Tensor w_v;   // independent_kv, q_and_v
    Tensor w_q;   // q_and_o, q_and_v
    Tensor w_o;   // all but q_and_v

    static CrossAttentionParams init(AttnVariant variant, int sigma, Rng& rng);
    std::vector<Tensor> tensors(AttnVariant variant) const;
};

struct DecoderLayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor w_q, w_k, w_v, w_o;       // sigma × sigma
    Tensor ln2_gain, ln2_bias;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// The toy MLLM. The encoder is the frozen identity over prototype+noise
// features; the projector lifts features to the hidden size; a decoder-only
// transformer fuses soft tokens with text; the LM head ties the token
// embeddings.
struct ModelBundle {
    ModelConfig config;
    Tensor prototypes;        // frozen copy from the world
    Tensor token_embeddings;  // vocab × sigma (tied LM head)
    Tensor pos_embeddings;    // max_seq_len × sigma
    Tensor proj_w1, proj_b1, proj_w2, proj_b2;  // g_f: feature_dim → sigma → sigma
    CrossAttentionParams proj_intervention;     // over D_v (when causal_projector)
    std::vector<DecoderLayerParams> layers;
    Tensor ln_f_gain, ln_f_bias;
    CrossAttentionParams final_visual, final_textual;  // when causal_final_layer
    ConfounderDictionary dict_proj_v;   // post-projector visual averages
    ConfounderDictionary dict_final_v;  // final-hidden visual averages
    ConfounderDictionary dict_final_t;  // final-hidden textual averages

    static ModelBundle init(const ModelConfig& cfg, const world::World& w, uint64_t seed);
    // Same weights, different placement flags. Intervention params of
    // disabled modules stay allocated but unused.
    ModelBundle with_flags(bool causal_projector, bool causal_final_layer) const;
    ModelBundle deep_copy() const;

    void attach_dictionaries(ConfounderDictionary proj_v, ConfounderDictionary final_v,
                             ConfounderDictionary final_t);
    void require_dictionaries() const;

    // Stable name → tensor table used by checkpoints, the optimizer and the
    // gradient checker. Frozen tensors (prototypes, dictionaries) excluded.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_frozen() const;
};

struct HiddenStates {
    Tensor soft_tokens;                 // n_obj × sigma
    std::vector<Tensor> layer_outputs;  // n_layers tensors, seq × sigma
    Tensor final_hidden;                // after optional intervention
    Tensor pre_head;                    // after final layer norm
    int n_soft = 0;
    int n_text = 0;
};

// The frozen encoder: returns the scene's stored feature vectors.
Tensor encode_visual(const world::SceneInstance& scene, const world::World& w);

// softmax(Q Kᵀ/√sigma) V (Wo) with Q/K/V per the variant; see AttnVariant.
Tensor confounder_cross_attention(Graph& g, const Tensor& queries,
                                  const ConfounderDictionary& dict,
                                  const CrossAttentionParams& params, AttnVariant variant,
                                  int sigma);

// Baseline projector g_f: GELU MLP feature_dim → sigma → sigma.
Tensor baseline_projector(Graph& g, const ModelBundle& b, const Tensor& features);

// g_f(F_v) plus the confounder branch; queries are lifted to sigma by g_f's
// first linear layer.
Tensor causal_projector(Graph& g, const ModelBundle& b, const Tensor& features);

// Soft tokens then text tokens through pre-norm decoder blocks under a
// causal mask; captures per-layer activations for the analysis taps.
HiddenStates decoder_forward(Graph& g, const ModelBundle& b, const Tensor& soft_tokens,
                             const std::vector<int>& tokens);

// h + CrossAttn(h, D_v) + CrossAttn(h, D_t), residual at the final layer.
Tensor causal_intervention(Graph& g, const ModelBundle& b, const Tensor& h_final);

// Full pipeline: projector (causal or baseline per flags), decoder,
// optional final-layer intervention, final layer norm.
HiddenStates forward_states(Graph& g, const ModelBundle& b, const Tensor& features,
                            const std::vector<int>& tokens);

// logits = pre_head · Eᵀ with tied embeddings.
Tensor next_token_logits(Graph& g, const ModelBundle& b, const HiddenStates& h);

// Greedy argmax decode from BOS after the soft tokens; stops at EOS or when
// the sequence budget is exhausted.
std::vector<int> generate_caption(const ModelBundle& b, const world::SceneInstance& scene,
                                  const world::World& w, int max_len);

// Soft tokens + BOS + QUERY + category token; argmax restricted to {YES, NO}.
bool answer_probe(const ModelBundle& b, const world::SceneInstance& scene, int category,
                  const world::World& w);

// Checkpoint format: one JSON header line (format version, config, tensor
// table with offsets, dictionary metadata) followed by concatenated
// little-endian float64 payloads. Round-trips byte-exactly.
std::string bundle_to_bytes(const ModelBundle& b);
ModelBundle bundle_from_bytes(const std::string& bytes);
void save_bundle(const ModelBundle& b, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

std::string dictionary_to_bytes(const ConfounderDictionary& d);
ConfounderDictionary dictionary_from_bytes(const std::string& bytes);
void save_dictionary(const ConfounderDictionary& d, const std::filesystem::path& path);
ConfounderDictionary load_dictionary(const std::filesystem::path& path);

}  // namespace causalab::model
