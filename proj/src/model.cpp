#include "causalab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace causalab::model {

const char* attn_variant_name(AttnVariant v) {
    switch (v) {
        case AttnVariant::shared_kv: return "shared_kv";
        case AttnVariant::independent_kv: return "independent_kv";
        case AttnVariant::q_and_o: return "q_and_o";
        case AttnVariant::q_and_v: return "q_and_v";
    }
    throw std::invalid_argument("attn_variant_name: unknown variant");
}

AttnVariant attn_variant_from_name(const std::string& name) {
    if (name == "shared_kv") return AttnVariant::shared_kv;
    if (name == "independent_kv") return AttnVariant::independent_kv;
    if (name == "q_and_o") return AttnVariant::q_and_o;
    if (name == "q_and_v") return AttnVariant::q_and_v;
    throw std::invalid_argument("unknown attention variant: " + name);
}

void ModelConfig::validate() const {
    if (sigma < 2 || n_layers < 1 || n_heads < 1 || vocab_size < 2 || feature_dim < 1 ||
        max_seq_len < 2) {
        throw std::invalid_argument("ModelConfig: invalid dimensions");
    }
    if (sigma % n_heads != 0) {
        throw std::invalid_argument("ModelConfig: sigma must be divisible by n_heads");
    }
}

namespace {

constexpr double kInitStd = 0.08;

Tensor causal_mask(int n) {
    Tensor mask = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            mask.at(i, j) = -1e30;
        }
    }
    return mask;
}

}  // namespace

CrossAttentionParams CrossAttentionParams::init(AttnVariant variant, int sigma, Rng& rng) {
    CrossAttentionParams p;
    auto weight = [&]() { return Tensor::randn({sigma, sigma}, rng, kInitStd, true); };
    // W_o starts at zero so a fresh causal branch is the identity function;
    // training begins exactly at the baseline model.
    auto zero_out = [&]() { return Tensor::zeros({sigma, sigma}, true); };
    switch (variant) {
        case AttnVariant::shared_kv:
            p.w_kv = weight();
            p.w_o = zero_out();
            break;
        case AttnVariant::independent_kv:
            p.w_k = weight();
            p.w_v = weight();
            p.w_o = zero_out();
            break;
        case AttnVariant::q_and_o:
            p.w_q = weight();
            p.w_o = zero_out();
            break;
        case AttnVariant::q_and_v:
            p.w_q = weight();
            p.w_v = weight();
            break;
    }
    return p;
}

std::vector<Tensor> CrossAttentionParams::tensors(AttnVariant variant) const {
    switch (variant) {
        case AttnVariant::shared_kv: return {w_kv, w_o};
        case AttnVariant::independent_kv: return {w_k, w_v, w_o};
        case AttnVariant::q_and_o: return {w_q, w_o};
        case AttnVariant::q_and_v: return {w_q, w_v};
    }
    throw std::invalid_argument("CrossAttentionParams::tensors: unknown variant");
}

ModelBundle ModelBundle::init(const ModelConfig& cfg, const world::World& w, uint64_t seed) {
    cfg.validate();
    if (cfg.vocab_size != w.vocab.size() || cfg.feature_dim != w.config.feature_dim) {
        throw std::invalid_argument("ModelBundle::init: config does not match world");
    }
    ModelBundle b;
    b.config = cfg;
    b.prototypes = w.prototypes.clone();  // frozen, requires_grad stays false

    // Base weights draw from one stream, intervention weights from another,
    // so arms that share a seed share every non-intervention tensor.
    Rng base(numkit::derive_seed(seed, "model-base"));
    b.token_embeddings = Tensor::randn({cfg.vocab_size, cfg.sigma}, base, kInitStd, true);
    b.pos_embeddings = Tensor::randn({cfg.max_seq_len, cfg.sigma}, base, kInitStd, true);
    b.proj_w1 = Tensor::randn({cfg.feature_dim, cfg.sigma}, base, kInitStd, true);
    b.proj_b1 = Tensor::zeros({cfg.sigma}, true);
    b.proj_w2 = Tensor::randn({cfg.sigma, cfg.sigma}, base, kInitStd, true);
    b.proj_b2 = Tensor::zeros({cfg.sigma}, true);
    const int mlp_hidden = 4 * cfg.sigma;
    b.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& layer : b.layers) {
        layer.ln1_gain = Tensor::full({cfg.sigma}, 1.0, true);
        layer.ln1_bias = Tensor::zeros({cfg.sigma}, true);
        layer.w_q = Tensor::randn({cfg.sigma, cfg.sigma}, base, kInitStd, true);
        layer.w_k = Tensor::randn({cfg.sigma, cfg.sigma}, base, kInitStd, true);
        layer.w_v = Tensor::randn({cfg.sigma, cfg.sigma}, base, kInitStd, true);
        layer.w_o = Tensor::randn({cfg.sigma, cfg.sigma}, base, kInitStd, true);
        layer.ln2_gain = Tensor::full({cfg.sigma}, 1.0, true);
        layer.ln2_bias = Tensor::zeros({cfg.sigma}, true);
        layer.mlp_w1 = Tensor::randn({cfg.sigma, mlp_hidden}, base, kInitStd, true);
        layer.mlp_b1 = Tensor::zeros({mlp_hidden}, true);
        layer.mlp_w2 = Tensor::randn({mlp_hidden, cfg.sigma}, base, kInitStd, true);
        layer.mlp_b2 = Tensor::zeros({cfg.sigma}, true);
    }
    b.ln_f_gain = Tensor::full({cfg.sigma}, 1.0, true);
    b.ln_f_bias = Tensor::zeros({cfg.sigma}, true);

    Rng causal(numkit::derive_seed(seed, "model-intervention"));
    if (cfg.causal_projector) {
        b.proj_intervention = CrossAttentionParams::init(cfg.attn_variant, cfg.sigma, causal);
    }
    if (cfg.causal_final_layer) {
        b.final_visual = CrossAttentionParams::init(cfg.attn_variant, cfg.sigma, causal);
        b.final_textual = CrossAttentionParams::init(cfg.attn_variant, cfg.sigma, causal);
    }
    return b;
}

ModelBundle ModelBundle::with_flags(bool causal_projector, bool causal_final_layer) const {
    ModelBundle b = *this;  // tensors share storage
    b.config.causal_projector = causal_projector;
    b.config.causal_final_layer = causal_final_layer;
    return b;
}

ModelBundle ModelBundle::deep_copy() const {
    const std::string bytes = bundle_to_bytes(*this);
    return bundle_from_bytes(bytes);
}

void ModelBundle::attach_dictionaries(ConfounderDictionary proj_v, ConfounderDictionary final_v,
                                      ConfounderDictionary final_t) {
    auto check = [&](const ConfounderDictionary& d, ConfounderDictionary::Modality m,
                     const char* name) {
        if (!d.defined()) return;
        if (d.modality != m) {
            throw std::invalid_argument(std::string("attach_dictionaries: wrong modality for ") + name);
        }
        if (d.entries.cols() != config.sigma) {
            throw std::invalid_argument(std::string("attach_dictionaries: width mismatch for ") + name);
        }
    };
    check(proj_v, ConfounderDictionary::Modality::visual, "dict_proj_v");
    check(final_v, ConfounderDictionary::Modality::visual, "dict_final_v");
    check(final_t, ConfounderDictionary::Modality::textual, "dict_final_t");
    dict_proj_v = std::move(proj_v);
    dict_final_v = std::move(final_v);
    dict_final_t = std::move(final_t);
}

void ModelBundle::require_dictionaries() const {
    if (config.causal_projector && !dict_proj_v.defined()) {
        throw std::invalid_argument("causal projector enabled but dict_proj_v missing");
    }
    if (config.causal_final_layer && (!dict_final_v.defined() || !dict_final_t.defined())) {
        throw std::invalid_argument("causal final layer enabled but final dictionaries missing");
    }
}

namespace {

void append_cross_attention(std::vector<std::pair<std::string, Tensor>>& out,
                            const std::string& prefix, const CrossAttentionParams& p) {
    if (p.w_kv.defined()) out.emplace_back(prefix + ".w_kv", p.w_kv);
    if (p.w_k.defined()) out.emplace_back(prefix + ".w_k", p.w_k);
    if (p.w_v.defined()) out.emplace_back(prefix + ".w_v", p.w_v);
    if (p.w_q.defined()) out.emplace_back(prefix + ".w_q", p.w_q);
    if (p.w_o.defined()) out.emplace_back(prefix + ".w_o", p.w_o);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_embeddings", token_embeddings);
    out.emplace_back("pos_embeddings", pos_embeddings);
    out.emplace_back("projector.w1", proj_w1);
    out.emplace_back("projector.b1", proj_b1);
    out.emplace_back("projector.w2", proj_w2);
    out.emplace_back("projector.b2", proj_b2);
    append_cross_attention(out, "projector_intervention", proj_intervention);
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i);
        const DecoderLayerParams& l = layers[i];
        out.emplace_back(p + ".ln1_gain", l.ln1_gain);
        out.emplace_back(p + ".ln1_bias", l.ln1_bias);
        out.emplace_back(p + ".w_q", l.w_q);
        out.emplace_back(p + ".w_k", l.w_k);
        out.emplace_back(p + ".w_v", l.w_v);
        out.emplace_back(p + ".w_o", l.w_o);
        out.emplace_back(p + ".ln2_gain", l.ln2_gain);
        out.emplace_back(p + ".ln2_bias", l.ln2_bias);
        out.emplace_back(p + ".mlp_w1", l.mlp_w1);
        out.emplace_back(p + ".mlp_b1", l.mlp_b1);
        out.emplace_back(p + ".mlp_w2", l.mlp_w2);
        out.emplace_back(p + ".mlp_b2", l.mlp_b2);
    }
    out.emplace_back("ln_f.gain", ln_f_gain);
    out.emplace_back("ln_f.bias", ln_f_bias);
    append_cross_attention(out, "final_visual", final_visual);
    append_cross_attention(out, "final_textual", final_textual);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_frozen() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("prototypes", prototypes);
    if (dict_proj_v.defined()) out.emplace_back("dict_proj_v.entries", dict_proj_v.entries);
    if (dict_final_v.defined()) out.emplace_back("dict_final_v.entries", dict_final_v.entries);
    if (dict_final_t.defined()) out.emplace_back("dict_final_t.entries", dict_final_t.entries);
    return out;
}

Tensor encode_visual(const world::SceneInstance& scene, const world::World& w) {
    if (scene.features.cols() != w.config.feature_dim) {
        throw std::invalid_argument("encode_visual: scene feature width does not match world");
    }
    for (int c : scene.present) {
        if (c < 0 || c >= w.config.categories) {
            throw std::invalid_argument("encode_visual: scene category outside world");
        }
    }
    return scene.features;
}

Tensor confounder_cross_attention(Graph& g, const Tensor& queries,
                                  const ConfounderDictionary& dict,
                                  const CrossAttentionParams& params, AttnVariant variant,
                                  int sigma) {
    if (!dict.defined()) {
        throw std::invalid_argument("confounder_cross_attention: dictionary missing");
    }
    if (dict.entries.cols() != sigma || queries.cols() != sigma) {
        throw std::invalid_argument("confounder_cross_attention: width mismatch");
    }
    auto need = [&](const Tensor& t, const char* name) {
        if (!t.defined()) {
            throw std::invalid_argument(std::string("confounder_cross_attention: variant needs ") + name);
        }
    };
    const double inv_sqrt_sigma = 1.0 / std::sqrt(static_cast<double>(sigma));
    const Tensor& d = dict.entries;
    Tensor scores, values;
    bool apply_w_o = true;
    switch (variant) {
        case AttnVariant::shared_kv: {
            need(params.w_kv, "w_kv");
            need(params.w_o, "w_o");
            const Tensor dk = g.matmul(d, params.w_kv);
            scores = g.scale(g.matmul_nt(queries, dk), inv_sqrt_sigma);
            values = dk;
            break;
        }
        case AttnVariant::independent_kv: {
            need(params.w_k, "w_k");
            need(params.w_v, "w_v");
            need(params.w_o, "w_o");
            scores = g.scale(g.matmul_nt(queries, g.matmul(d, params.w_k)), inv_sqrt_sigma);
            values = g.matmul(d, params.w_v);
            break;
        }
        case AttnVariant::q_and_o: {
            need(params.w_q, "w_q");
            need(params.w_o, "w_o");
            scores = g.scale(g.matmul_nt(g.matmul(queries, params.w_q), d), inv_sqrt_sigma);
            values = d;
            break;
        }
        case AttnVariant::q_and_v: {
            need(params.w_q, "w_q");
            need(params.w_v, "w_v");
            scores = g.scale(g.matmul_nt(g.matmul(queries, params.w_q), d), inv_sqrt_sigma);
            values = g.matmul(d, params.w_v);
            apply_w_o = false;
            break;
        }
    }
    const Tensor attended = g.matmul(g.softmax_rows(scores), values);
    return apply_w_o ? g.matmul(attended, params.w_o) : attended;
}

Tensor baseline_projector(Graph& g, const ModelBundle& b, const Tensor& features) {
    const Tensor h1 = g.gelu(g.add_rowvec(g.matmul(features, b.proj_w1), b.proj_b1));
    return g.add_rowvec(g.matmul(h1, b.proj_w2), b.proj_b2);
}

Tensor causal_projector(Graph& g, const ModelBundle& b, const Tensor& features) {
    if (!b.config.causal_projector) {
        throw std::logic_error("causal_projector: flag not set on this bundle");
    }
    if (!b.dict_proj_v.defined()) {
        throw std::invalid_argument("causal_projector: dictionary missing");
    }
    // Queries are lifted to sigma with g_f's first linear layer; Eq. 8 writes
    // the attention directly over f_v but f_v lives in encoder width.
    const Tensor queries = g.add_rowvec(g.matmul(features, b.proj_w1), b.proj_b1);
    const Tensor branch = confounder_cross_attention(g, queries, b.dict_proj_v,
                                                     b.proj_intervention, b.config.attn_variant,
                                                     b.config.sigma);
    return g.add(baseline_projector(g, b, features), branch);
}

HiddenStates decoder_forward(Graph& g, const ModelBundle& b, const Tensor& soft_tokens,
                             const std::vector<int>& tokens) {
    const ModelConfig& cfg = b.config;
    const int n_soft = soft_tokens.rows();
    const int n_text = static_cast<int>(tokens.size());
    const int seq = n_soft + n_text;
    if (seq > cfg.max_seq_len) {
        throw std::invalid_argument("decoder_forward: sequence exceeds max_seq_len");
    }

    Tensor x = soft_tokens;
    if (n_text > 0) {
        x = g.concat_rows(soft_tokens, g.gather_rows(b.token_embeddings, tokens));
    }
    std::vector<int> positions(static_cast<size_t>(seq));
    for (int i = 0; i < seq; ++i) positions[static_cast<size_t>(i)] = i;
    x = g.add(x, g.gather_rows(b.pos_embeddings, positions));

    const Tensor mask = causal_mask(seq);
    const int head_dim = cfg.sigma / cfg.n_heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));

    HiddenStates hs;
    hs.soft_tokens = soft_tokens;
    hs.n_soft = n_soft;
    hs.n_text = n_text;
    hs.layer_outputs.reserve(b.layers.size());
    for (const DecoderLayerParams& layer : b.layers) {
        const Tensor xn = g.layer_norm(x, layer.ln1_gain, layer.ln1_bias);
        const Tensor q = g.matmul(xn, layer.w_q);
        const Tensor k = g.matmul(xn, layer.w_k);
        const Tensor v = g.matmul(xn, layer.w_v);
        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(cfg.n_heads));
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Tensor qh = g.slice_cols(q, h * head_dim, head_dim);
            const Tensor kh = g.slice_cols(k, h * head_dim, head_dim);
            const Tensor vh = g.slice_cols(v, h * head_dim, head_dim);
            const Tensor scores = g.add(g.scale(g.matmul_nt(qh, kh), inv_sqrt_hd), mask);
            heads.push_back(g.matmul(g.softmax_rows(scores), vh));
        }
        const Tensor merged = cfg.n_heads == 1 ? heads.front() : g.concat_cols(heads);
        x = g.add(x, g.matmul(merged, layer.w_o));
        const Tensor xm = g.layer_norm(x, layer.ln2_gain, layer.ln2_bias);
        const Tensor m1 = g.gelu(g.add_rowvec(g.matmul(xm, layer.mlp_w1), layer.mlp_b1));
        x = g.add(x, g.add_rowvec(g.matmul(m1, layer.mlp_w2), layer.mlp_b2));
        hs.layer_outputs.push_back(x);
    }
    hs.final_hidden = x;
    hs.pre_head = x;  // forward_states overwrites after optional intervention
    return hs;
}

Tensor causal_intervention(Graph& g, const ModelBundle& b, const Tensor& h_final) {
    if (!b.config.causal_final_layer) {
        throw std::logic_error("causal_intervention: flag not set on this bundle");
    }
    if (!b.dict_final_v.defined() || !b.dict_final_t.defined()) {
        throw std::invalid_argument("causal_intervention: dictionaries missing");
    }
    const Tensor visual = confounder_cross_attention(g, h_final, b.dict_final_v, b.final_visual,
                                                     b.config.attn_variant, b.config.sigma);
    const Tensor textual = confounder_cross_attention(g, h_final, b.dict_final_t, b.final_textual,
                                                      b.config.attn_variant, b.config.sigma);
    return g.add(g.add(h_final, visual), textual);
}

HiddenStates forward_states(Graph& g, const ModelBundle& b, const Tensor& features,
                            const std::vector<int>& tokens) {
    b.require_dictionaries();
    const Tensor soft = b.config.causal_projector ? causal_projector(g, b, features)
                                                  : baseline_projector(g, b, features);
    HiddenStates hs = decoder_forward(g, b, soft, tokens);
    if (b.config.causal_final_layer) {
        hs.final_hidden = causal_intervention(g, b, hs.final_hidden);
    }
    hs.pre_head = g.layer_norm(hs.final_hidden, b.ln_f_gain, b.ln_f_bias);
    return hs;
}

Tensor next_token_logits(Graph& g, const ModelBundle& b, const HiddenStates& h) {
    return g.matmul_nt(h.pre_head, b.token_embeddings);
}

namespace {

int argmax_row(const Tensor& logits, int row) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j) {
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    }
    return best;
}

}  // namespace

std::vector<int> generate_caption(const ModelBundle& b, const world::SceneInstance& scene,
                                  const world::World& w, int max_len) {
    const Tensor features = encode_visual(scene, w);
    std::vector<int> tokens = {w.vocab.bos};
    const int text_budget = std::min(max_len, b.config.max_seq_len - features.rows());
    while (static_cast<int>(tokens.size()) < text_budget) {
        Graph g;
        const HiddenStates hs = forward_states(g, b, features, tokens);
        const Tensor logits = next_token_logits(g, b, hs);
        const int next = argmax_row(logits, logits.rows() - 1);
        tokens.push_back(next);
        if (next == w.vocab.eos) break;
    }
    return tokens;
}

bool answer_probe(const ModelBundle& b, const world::SceneInstance& scene, int category,
                  const world::World& w) {
    if (category < 0 || category >= w.config.categories) {
        throw std::invalid_argument("answer_probe: unknown category");
    }
    const Tensor features = encode_visual(scene, w);
    const std::vector<int> tokens = {w.vocab.bos, w.vocab.query, w.vocab.category_token(category)};
    Graph g;
    const HiddenStates hs = forward_states(g, b, features, tokens);
    const Tensor logits = next_token_logits(g, b, hs);
    const int last = logits.rows() - 1;
    return logits.at(last, w.vocab.yes) >= logits.at(last, w.vocab.no);
}

}  // namespace causalab::model
