#include <map>

#include <json.hpp>

#include "causalab/io.hpp"
#include "causalab/model.hpp"

namespace causalab::model {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

json config_to_json(const ModelConfig& cfg) {
    json j;
    j["sigma"] = cfg.sigma;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["vocab_size"] = cfg.vocab_size;
    j["feature_dim"] = cfg.feature_dim;
    j["max_seq_len"] = cfg.max_seq_len;
    j["causal_projector"] = cfg.causal_projector;
    j["causal_final_layer"] = cfg.causal_final_layer;
    j["attn_variant"] = attn_variant_name(cfg.attn_variant);
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.sigma = j.at("sigma").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.causal_projector = j.at("causal_projector").get<bool>();
    cfg.causal_final_layer = j.at("causal_final_layer").get<bool>();
    cfg.attn_variant = attn_variant_from_name(j.at("attn_variant").get<std::string>());
    return cfg;
}

const char* modality_name(ConfounderDictionary::Modality m) {
    return m == ConfounderDictionary::Modality::visual ? "visual" : "textual";
}

ConfounderDictionary::Modality modality_from_name(const std::string& s) {
    if (s == "visual") return ConfounderDictionary::Modality::visual;
    if (s == "textual") return ConfounderDictionary::Modality::textual;
    throw std::invalid_argument("unknown dictionary modality: " + s);
}

struct TensorEntry {
    std::string name;
    Tensor tensor;
};

std::string serialize(const json& header_extra, const std::vector<TensorEntry>& entries) {
    json header = header_extra;
    json table = json::array();
    size_t offset = 0;
    for (const auto& e : entries) {
        json t;
        t["name"] = e.name;
        t["shape"] = e.tensor.shape();
        t["offset"] = offset;
        table.push_back(t);
        offset += static_cast<size_t>(e.tensor.size()) * sizeof(double);
    }
    header["tensors"] = table;
    header["payload_bytes"] = offset;
    std::string out = header.dump();
    out.push_back('\n');
    const size_t payload_start = out.size();
    out.reserve(payload_start + offset);
    for (const auto& e : entries) {
        io::append_f64le(out, e.tensor.data(), static_cast<size_t>(e.tensor.size()));
    }
    return out;
}

struct Parsed {
    json header;
    std::string bytes;
    size_t payload_start = 0;

    Tensor read_tensor(const json& entry, bool requires_grad) const {
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t = Tensor::zeros(shape, requires_grad);
        const size_t offset = payload_start + entry.at("offset").get<size_t>();
        io::read_f64le(bytes, offset, t.data(), static_cast<size_t>(t.size()));
        return t;
    }
};

Parsed parse(const std::string& bytes, const char* expected_format) {
    const size_t nl = bytes.find('\n');
    if (nl == std::string::npos) {
        throw std::runtime_error("checkpoint: missing header line");
    }
    Parsed p;
    p.header = json::parse(bytes.substr(0, nl));
    if (p.header.at("format").get<std::string>() != expected_format ||
        p.header.at("version").get<int>() != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported format or version");
    }
    p.bytes = bytes;
    p.payload_start = nl + 1;
    return p;
}

}  // namespace

std::string bundle_to_bytes(const ModelBundle& b) {
    json header;
    header["format"] = "causalab-checkpoint";
    header["version"] = kCheckpointVersion;
    header["config"] = config_to_json(b.config);
    json dicts = json::object();
    auto dict_meta = [&](const ConfounderDictionary& d) {
        json j;
        j["modality"] = modality_name(d.modality);
        j["sample_counts"] = d.sample_counts;
        return j;
    };
    if (b.dict_proj_v.defined()) dicts["dict_proj_v"] = dict_meta(b.dict_proj_v);
    if (b.dict_final_v.defined()) dicts["dict_final_v"] = dict_meta(b.dict_final_v);
    if (b.dict_final_t.defined()) dicts["dict_final_t"] = dict_meta(b.dict_final_t);
    header["dictionaries"] = dicts;

    std::vector<TensorEntry> entries;
    for (const auto& [name, tensor] : b.named_parameters()) {
        entries.push_back({name, tensor});
    }
    for (const auto& [name, tensor] : b.named_frozen()) {
        entries.push_back({name, tensor});
    }
    return serialize(header, entries);
}

ModelBundle bundle_from_bytes(const std::string& bytes) {
    const Parsed p = parse(bytes, "causalab-checkpoint");
    ModelBundle b;
    b.config = config_from_json(p.header.at("config"));
    b.config.validate();

    std::map<std::string, json> table;
    for (const auto& entry : p.header.at("tensors")) {
        table[entry.at("name").get<std::string>()] = entry;
    }
    auto has = [&](const std::string& name) { return table.count(name) > 0; };
    auto load = [&](const std::string& name, bool requires_grad) {
        auto it = table.find(name);
        if (it == table.end()) {
            throw std::runtime_error("checkpoint: missing tensor " + name);
        }
        return p.read_tensor(it->second, requires_grad);
    };

    b.token_embeddings = load("token_embeddings", true);
    b.pos_embeddings = load("pos_embeddings", true);
    b.proj_w1 = load("projector.w1", true);
    b.proj_b1 = load("projector.b1", true);
    b.proj_w2 = load("projector.w2", true);
    b.proj_b2 = load("projector.b2", true);
    auto load_cross = [&](const std::string& prefix) {
        CrossAttentionParams cp;
        if (has(prefix + ".w_kv")) cp.w_kv = load(prefix + ".w_kv", true);
        if (has(prefix + ".w_k")) cp.w_k = load(prefix + ".w_k", true);
        if (has(prefix + ".w_v")) cp.w_v = load(prefix + ".w_v", true);
        if (has(prefix + ".w_q")) cp.w_q = load(prefix + ".w_q", true);
        if (has(prefix + ".w_o")) cp.w_o = load(prefix + ".w_o", true);
        return cp;
    };
    b.proj_intervention = load_cross("projector_intervention");
    b.layers.resize(static_cast<size_t>(b.config.n_layers));
    for (size_t i = 0; i < b.layers.size(); ++i) {
        const std::string pr = "layers." + std::to_string(i);
        DecoderLayerParams& l = b.layers[i];
        l.ln1_gain = load(pr + ".ln1_gain", true);
        l.ln1_bias = load(pr + ".ln1_bias", true);
        l.w_q = load(pr + ".w_q", true);
        l.w_k = load(pr + ".w_k", true);
        l.w_v = load(pr + ".w_v", true);
        l.w_o = load(pr + ".w_o", true);
        l.ln2_gain = load(pr + ".ln2_gain", true);
        l.ln2_bias = load(pr + ".ln2_bias", true);
        l.mlp_w1 = load(pr + ".mlp_w1", true);
        l.mlp_b1 = load(pr + ".mlp_b1", true);
        l.mlp_w2 = load(pr + ".mlp_w2", true);
        l.mlp_b2 = load(pr + ".mlp_b2", true);
    }
    b.ln_f_gain = load("ln_f.gain", true);
    b.ln_f_bias = load("ln_f.bias", true);
    b.final_visual = load_cross("final_visual");
    b.final_textual = load_cross("final_textual");
    b.prototypes = load("prototypes", false);

    const json& dicts = p.header.at("dictionaries");
    auto load_dict = [&](const char* key, const std::string& tensor_name) {
        ConfounderDictionary d;
        if (dicts.contains(key)) {
            d.modality = modality_from_name(dicts.at(key).at("modality").get<std::string>());
            d.sample_counts = dicts.at(key).at("sample_counts").get<std::vector<long>>();
            d.entries = load(tensor_name, false);
        }
        return d;
    };
    b.dict_proj_v = load_dict("dict_proj_v", "dict_proj_v.entries");
    b.dict_final_v = load_dict("dict_final_v", "dict_final_v.entries");
    b.dict_final_t = load_dict("dict_final_t", "dict_final_t.entries");
    return b;
}

void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
    io::write_file(path, bundle_to_bytes(b));
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    return bundle_from_bytes(io::read_file(path));
}

std::string dictionary_to_bytes(const ConfounderDictionary& d) {
    json header;
    header["format"] = "causalab-dictionary";
    header["version"] = kCheckpointVersion;
    header["modality"] = modality_name(d.modality);
    header["sample_counts"] = d.sample_counts;
    return serialize(header, {{"entries", d.entries}});
}

ConfounderDictionary dictionary_from_bytes(const std::string& bytes) {
    const Parsed p = parse(bytes, "causalab-dictionary");
    ConfounderDictionary d;
    d.modality = modality_from_name(p.header.at("modality").get<std::string>());
    d.sample_counts = p.header.at("sample_counts").get<std::vector<long>>();
    d.entries = p.read_tensor(p.header.at("tensors").at(0), false);
    return d;
}

void save_dictionary(const ConfounderDictionary& d, const std::filesystem::path& path) {
    io::write_file(path, dictionary_to_bytes(d));
}

ConfounderDictionary load_dictionary(const std::filesystem::path& path) {
    return dictionary_from_bytes(io::read_file(path));
}

}  // namespace causalab::model
