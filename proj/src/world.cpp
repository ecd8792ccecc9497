#include "causalab/world.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "causalab/io.hpp"

namespace causalab::world {

using nlohmann::json;

namespace {

const char* kDefaultNames[] = {"table", "chair",  "cup",   "car",  "person", "dog",
                               "tree",  "book",   "lamp",  "bottle", "plate", "window",
                               "door",  "bike",   "plant", "phone"};

std::vector<std::string> default_names(int k) {
    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(k));
    const int known = static_cast<int>(std::size(kDefaultNames));
    for (int i = 0; i < k; ++i) {
        if (i < known) {
            names.emplace_back(kDefaultNames[i]);
        } else {
            names.push_back("obj" + std::to_string(i));
        }
    }
    return names;
}

double cosine(const Tensor& m, int a, int b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < m.cols(); ++j) {
        dot += m.at(a, j) * m.at(b, j);
        na += m.at(a, j) * m.at(a, j);
        nb += m.at(b, j) * m.at(b, j);
    }
    return dot / std::sqrt(na * nb);
}

Vocabulary make_vocabulary(const std::vector<std::string>& category_names) {
    Vocabulary v;
    v.tokens = {"<bos>", "<eos>", "<yes>", "<no>", "<query>", "image", "shows"};
    v.template_start = 5;
    v.template_len = 2;
    v.category_start = static_cast<int>(v.tokens.size());
    for (const auto& name : category_names) {
        v.tokens.push_back(name);
    }
    return v;
}

}  // namespace

void WorldConfig::validate() const {
    if (categories < 4) {
        throw std::invalid_argument("WorldConfig: categories must be >= 4");
    }
    if (feature_dim < 2 || max_objects < 1 || noise_std < 0.0) {
        throw std::invalid_argument("WorldConfig: invalid dimensions");
    }
    if (base_rate <= 0.0 || base_rate >= 1.0) {
        throw std::invalid_argument("WorldConfig: base_rate must be in (0,1)");
    }
    for (const BiasPair& bp : bias_pairs) {
        if (bp.p_co <= 0.0 || bp.p_co > 1.0) {
            throw std::invalid_argument("WorldConfig: p_co must be in (0,1]");
        }
        if (bp.center == bp.partner) {
            throw std::invalid_argument("WorldConfig: partner must differ from center");
        }
        if (bp.center < 0 || bp.center >= categories || bp.partner < 0 ||
            bp.partner >= categories) {
            throw std::invalid_argument("WorldConfig: bias pair out of category range");
        }
    }
    if (!category_names.empty() && static_cast<int>(category_names.size()) != categories) {
        throw std::invalid_argument("WorldConfig: category_names length must equal categories");
    }
}

bool Vocabulary::is_category_token(int token) const {
    return token >= category_start && token < size();
}

int Vocabulary::token_category(int token) const {
    return is_category_token(token) ? token - category_start : -1;
}

World build_world(const WorldConfig& cfg) {
    cfg.validate();
    World w;
    w.config = cfg;
    w.category_names = cfg.category_names.empty() ? default_names(cfg.categories)
                                                  : cfg.category_names;
    w.vocab = make_vocabulary(w.category_names);

    Rng rng(numkit::derive_seed(cfg.seed, "world-prototypes"));
    const int attempts_max = 1000;
    for (int attempt = 0; attempt < attempts_max; ++attempt) {
        Tensor protos = Tensor::randn({cfg.categories, cfg.feature_dim}, rng, 1.0);
        // Unit-normalize rows so noise_std is comparable across categories.
        for (int i = 0; i < cfg.categories; ++i) {
            double norm = 0.0;
            for (int j = 0; j < cfg.feature_dim; ++j) norm += protos.at(i, j) * protos.at(i, j);
            norm = std::sqrt(norm);
            for (int j = 0; j < cfg.feature_dim; ++j) protos.at(i, j) /= norm;
        }
        bool separable = true;
        for (int a = 0; a < cfg.categories && separable; ++a) {
            for (int b = a + 1; b < cfg.categories; ++b) {
                if (cosine(protos, a, b) >= 0.5) {
                    separable = false;
                    break;
                }
            }
        }
        if (separable) {
            w.prototypes = protos;
            return w;
        }
    }
    throw std::runtime_error("build_world: could not satisfy prototype separability");
}

SceneInstance sample_scene(const World& world, Rng& rng) {
    const WorldConfig& cfg = world.config;
    const int k = cfg.categories;
    while (true) {
        std::vector<bool> present(static_cast<size_t>(k), false);
        for (int c = 0; c < k; ++c) {
            present[static_cast<size_t>(c)] = rng.uniform() < cfg.base_rate;
        }
        // Forcing draw happens whenever the center is present, so
        // P(partner | center) = p_co + (1 - p_co) * base_rate analytically.
        for (const BiasPair& bp : cfg.bias_pairs) {
            if (present[static_cast<size_t>(bp.center)] && rng.uniform() < bp.p_co) {
                present[static_cast<size_t>(bp.partner)] = true;
            }
        }

        std::vector<int> kept;
        for (int c = 0; c < k; ++c) {
            if (present[static_cast<size_t>(c)]) kept.push_back(c);
        }
        if (kept.empty()) {
            continue;
        }
        if (static_cast<int>(kept.size()) > cfg.max_objects) {
            // Priority classes: present centers, then partners of present
            // centers, then the rest. The rest is shuffled so truncation does
            // not systematically starve high ids.
            std::set<int> centers, partners;
            for (const BiasPair& bp : cfg.bias_pairs) {
                if (present[static_cast<size_t>(bp.center)]) {
                    centers.insert(bp.center);
                    if (present[static_cast<size_t>(bp.partner)]) partners.insert(bp.partner);
                }
            }
            std::vector<int> ordered, rest;
            for (int c : kept) {
                if (centers.count(c)) ordered.push_back(c);
            }
            for (int c : kept) {
                if (!centers.count(c) && partners.count(c)) ordered.push_back(c);
            }
            for (int c : kept) {
                if (!centers.count(c) && !partners.count(c)) rest.push_back(c);
            }
            rng.shuffle(rest);
            ordered.insert(ordered.end(), rest.begin(), rest.end());
            ordered.resize(static_cast<size_t>(cfg.max_objects));
            kept = std::move(ordered);
        }
        std::sort(kept.begin(), kept.end());

        SceneInstance scene;
        scene.present = kept;
        scene.features = Tensor::zeros({static_cast<int>(kept.size()), cfg.feature_dim});
        for (size_t i = 0; i < kept.size(); ++i) {
            for (int j = 0; j < cfg.feature_dim; ++j) {
                scene.features.at(static_cast<int>(i), j) =
                    world.prototypes.at(kept[i], j) + rng.normal(0.0, cfg.noise_std);
            }
        }
        scene.caption.push_back(world.vocab.bos);
        for (int t = 0; t < world.vocab.template_len; ++t) {
            scene.caption.push_back(world.vocab.template_start + t);
        }
        for (int c : kept) {
            scene.caption.push_back(world.vocab.category_token(c));
        }
        scene.caption.push_back(world.vocab.eos);
        return scene;
    }
}

std::vector<SceneInstance> sample_scenes(const World& world, Rng& rng, int count) {
    std::vector<SceneInstance> scenes;
    scenes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        scenes.push_back(sample_scene(world, rng));
    }
    return scenes;
}

CooccurrenceMatrix cooccurrence_counts(const std::vector<SceneInstance>& scenes,
                                       int categories) {
    if (scenes.empty()) {
        throw std::invalid_argument("cooccurrence_counts: scene list is empty");
    }
    int k = categories;
    for (const auto& s : scenes) {
        for (int c : s.present) k = std::max(k, c + 1);
    }
    CooccurrenceMatrix m;
    m.categories = k;
    m.counts.assign(static_cast<size_t>(k) * k, 0);
    for (const auto& s : scenes) {
        for (size_t a = 0; a < s.present.size(); ++a) {
            m.at(s.present[a], s.present[a]) += 1;
            for (size_t b = a + 1; b < s.present.size(); ++b) {
                m.at(s.present[a], s.present[b]) += 1;
                m.at(s.present[b], s.present[a]) += 1;
            }
        }
    }
    return m;
}

std::vector<int> top_k_cooccurring(const CooccurrenceMatrix& matrix, int center, int k) {
    if (k >= matrix.categories) {
        throw std::invalid_argument("top_k_cooccurring: k must be < category count");
    }
    if (center < 0 || center >= matrix.categories) {
        throw std::invalid_argument("top_k_cooccurring: center out of range");
    }
    std::vector<int> ids;
    for (int c = 0; c < matrix.categories; ++c) {
        if (c != center) ids.push_back(c);
    }
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        const long ca = matrix.at(center, a), cb = matrix.at(center, b);
        return ca != cb ? ca > cb : a < b;
    });
    ids.resize(static_cast<size_t>(k));
    return ids;
}

std::vector<int> parse_caption_categories(const Vocabulary& vocab,
                                          const std::vector<int>& caption) {
    std::set<int> cats;
    for (int tok : caption) {
        if (tok == vocab.eos) break;
        if (vocab.is_category_token(tok)) {
            cats.insert(vocab.token_category(tok));
        }
    }
    return {cats.begin(), cats.end()};
}

std::string world_to_json(const World& world) {
    json j;
    j["format_version"] = 1;
    json cfg;
    cfg["categories"] = world.config.categories;
    cfg["feature_dim"] = world.config.feature_dim;
    cfg["noise_std"] = world.config.noise_std;
    cfg["base_rate"] = world.config.base_rate;
    cfg["max_objects"] = world.config.max_objects;
    cfg["seed"] = world.config.seed;
    json pairs = json::array();
    for (const BiasPair& bp : world.config.bias_pairs) {
        pairs.push_back({{"center", bp.center}, {"partner", bp.partner}, {"p_co", bp.p_co}});
    }
    cfg["bias_pairs"] = pairs;
    j["config"] = cfg;
    j["category_names"] = world.category_names;
    j["vocabulary"] = world.vocab.tokens;
    json protos = json::array();
    for (int i = 0; i < world.prototypes.rows(); ++i) {
        json row = json::array();
        for (int c = 0; c < world.prototypes.cols(); ++c) {
            row.push_back(world.prototypes.at(i, c));
        }
        protos.push_back(row);
    }
    j["prototypes"] = protos;
    return j.dump(2) + "\n";
}

World world_from_json(const std::string& text) {
    const json j = json::parse(text);
    WorldConfig cfg;
    const json& jc = j.at("config");
    cfg.categories = jc.at("categories").get<int>();
    cfg.feature_dim = jc.at("feature_dim").get<int>();
    cfg.noise_std = jc.at("noise_std").get<double>();
    cfg.base_rate = jc.at("base_rate").get<double>();
    cfg.max_objects = jc.at("max_objects").get<int>();
    cfg.seed = jc.at("seed").get<uint64_t>();
    cfg.bias_pairs.clear();
    for (const auto& p : jc.at("bias_pairs")) {
        cfg.bias_pairs.push_back(
            {p.at("center").get<int>(), p.at("partner").get<int>(), p.at("p_co").get<double>()});
    }
    cfg.category_names = j.at("category_names").get<std::vector<std::string>>();

    World w;
    w.config = cfg;
    w.category_names = cfg.category_names;
    w.vocab = make_vocabulary(w.category_names);
    w.prototypes = Tensor::zeros({cfg.categories, cfg.feature_dim});
    const json& protos = j.at("prototypes");
    for (int i = 0; i < cfg.categories; ++i) {
        for (int c = 0; c < cfg.feature_dim; ++c) {
            w.prototypes.at(i, c) = protos.at(static_cast<size_t>(i)).at(static_cast<size_t>(c)).get<double>();
        }
    }
    return w;
}

void save_world(const World& world, const std::filesystem::path& path) {
    io::write_file(path, world_to_json(world));
}

World load_world(const std::filesystem::path& path) {
    return world_from_json(io::read_file(path));
}

std::string scenes_to_jsonl(const std::vector<SceneInstance>& scenes) {
    std::ostringstream out;
    for (const auto& s : scenes) {
        json j;
        j["present"] = s.present;
        json feats = json::array();
        for (int i = 0; i < s.features.rows(); ++i) {
            json row = json::array();
            for (int c = 0; c < s.features.cols(); ++c) row.push_back(s.features.at(i, c));
            feats.push_back(row);
        }
        j["features"] = feats;
        j["caption"] = s.caption;
        out << j.dump() << "\n";
    }
    return out.str();
}

std::vector<SceneInstance> scenes_from_jsonl(const std::string& text, int feature_dim) {
    std::vector<SceneInstance> scenes;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        SceneInstance s;
        s.present = j.at("present").get<std::vector<int>>();
        const json& feats = j.at("features");
        s.features = Tensor::zeros({static_cast<int>(feats.size()), feature_dim});
        for (size_t i = 0; i < feats.size(); ++i) {
            for (int c = 0; c < feature_dim; ++c) {
                s.features.at(static_cast<int>(i), c) = feats.at(i).at(static_cast<size_t>(c)).get<double>();
            }
        }
        s.caption = j.at("caption").get<std::vector<int>>();
        scenes.push_back(std::move(s));
    }
    return scenes;
}

void save_scenes(const std::vector<SceneInstance>& scenes, const std::filesystem::path& path) {
    io::write_file(path, scenes_to_jsonl(scenes));
}

std::vector<SceneInstance> load_scenes(const std::filesystem::path& path, int feature_dim) {
    return scenes_from_jsonl(io::read_file(path), feature_dim);
}

}  // namespace causalab::world
