#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "causalab/analysis.hpp"
#include "causalab/dictionary.hpp"
#include "causalab/evalkit.hpp"
#include "causalab/io.hpp"
#include "causalab/model.hpp"
#include "causalab/trainer.hpp"
#include "causalab/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace causalab;

namespace {

json default_config() {
    json j;
    j["world"] = {{"categories", 12},
                  {"feature_dim", 16},
                  {"noise_std", 0.1},
                  {"base_rate", 0.15},
                  {"max_objects", 4},
                  {"seed", 7},
                  {"bias_pairs", json::array({{{"center", 0}, {"partner", 1}, {"p_co", 0.8}},
                                              {{"center", 0}, {"partner", 2}, {"p_co", 0.8}},
                                              {{"center", 0}, {"partner", 3}, {"p_co", 0.8}}})}};
    j["model"] = {{"sigma", 32},       {"n_layers", 4},   {"n_heads", 2},
                  {"max_seq_len", 24}, {"attn_variant", "shared_kv"},
                  {"causal_projector", false}, {"causal_final_layer", false}};
    j["pretrain"] = {{"batch_size", 8}, {"learning_rate", 0.12}, {"steps", 250},
                     {"steps_per_epoch", 250}, {"momentum", 0.9}};
    j["finetune"] = {{"batch_size", 8}, {"learning_rate", 0.12}, {"steps", 1200},
                     {"steps_per_epoch", 1200}, {"momentum", 0.9}};
    j["experiment"] = {{"dictionary_scenes", 1000}, {"eval_scene_count", 1200},
                       {"pope_per_scene", 2},       {"dict_fraction", 0.1},
                       {"causal_batch_mult", 2.0},  {"causal_lr_mult", 0.5},
                       {"profile_center", 0},       {"profile_k", 3}};
    j["gen"] = {{"scene_count", 2000}};
    return j;
}

void merge_json(json& base, const json& overlay) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
            merge_json(base[it.key()], *it);
        } else {
            base[it.key()] = *it;
        }
    }
}

void apply_set(json& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw CLI::ValidationError("--set expects key.path=value, got: " + assignment);
    }
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // plain string
    }
    json* node = &cfg;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) {
            throw CLI::ValidationError("--set: empty key segment in " + path);
        }
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

world::WorldConfig world_config_from(const json& j) {
    world::WorldConfig cfg;
    cfg.categories = j.at("categories").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.noise_std = j.at("noise_std").get<double>();
    cfg.base_rate = j.at("base_rate").get<double>();
    cfg.max_objects = j.at("max_objects").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.bias_pairs.clear();
    for (const auto& p : j.at("bias_pairs")) {
        cfg.bias_pairs.push_back({p.at("center").get<int>(), p.at("partner").get<int>(),
                                  p.at("p_co").get<double>()});
    }
    if (j.contains("category_names")) {
        cfg.category_names = j.at("category_names").get<std::vector<std::string>>();
    }
    return cfg;
}

model::ModelConfig model_config_from(const json& j) {
    model::ModelConfig cfg;
    cfg.sigma = j.at("sigma").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.attn_variant = model::attn_variant_from_name(j.at("attn_variant").get<std::string>());
    cfg.causal_projector = j.value("causal_projector", false);
    cfg.causal_final_layer = j.value("causal_final_layer", false);
    return cfg;
}

train::TrainConfig train_config_from(const json& j, train::Stage stage, uint64_t seed) {
    train::TrainConfig cfg;
    cfg.stage = stage;
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.steps = j.at("steps").get<int>();
    cfg.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    cfg.momentum = j.value("momentum", 0.9);
    cfg.dataset_scenes = j.value("dataset_scenes", 0);
    cfg.probe_mix = j.value("probe_mix", true);
    cfg.seed = seed;
    return cfg;
}

train::ExperimentConfig experiment_config_from(const json& cfg, const fs::path& out) {
    train::ExperimentConfig ex;
    ex.world_cfg = world_config_from(cfg.at("world"));
    ex.model_cfg = model_config_from(cfg.at("model"));
    ex.pretrain = train_config_from(cfg.at("pretrain"), train::Stage::pretrain, 0);
    ex.finetune = train_config_from(cfg.at("finetune"), train::Stage::finetune, 0);
    const json& e = cfg.at("experiment");
    ex.dictionary_scenes = e.at("dictionary_scenes").get<int>();
    ex.eval_scene_count = e.at("eval_scene_count").get<int>();
    ex.pope_per_scene = e.at("pope_per_scene").get<int>();
    ex.dict_fraction = e.at("dict_fraction").get<double>();
    ex.causal_batch_mult = e.at("causal_batch_mult").get<double>();
    ex.causal_lr_mult = e.at("causal_lr_mult").get<double>();
    ex.profile_center = e.at("profile_center").get<int>();
    ex.profile_k = e.at("profile_k").get<int>();
    ex.out_dir = out;
    return ex;
}

std::vector<uint64_t> seed_list(int count, uint64_t base) {
    std::vector<uint64_t> seeds;
    for (int i = 1; i <= count; ++i) {
        seeds.push_back(base + static_cast<uint64_t>(i));
    }
    return seeds;
}

void write_manifest(const fs::path& out, const std::string& command, const json& resolved,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    json m;
    m["command"] = command;
    m["config"] = resolved;
    json in = json::object();
    for (const fs::path& p : inputs) {
        in[p.string()] = io::hex64(io::hash_file(p));
    }
    m["inputs"] = in;
    json outs = json::array();
    for (const fs::path& p : outputs) {
        outs.push_back(p.string());
    }
    m["outputs"] = outs;
    io::write_file(out / "manifest.json", m.dump(2) + "\n");
}

model::ModelBundle load_or_init_bundle(const json& cfg, const world::World& w,
                                       const std::string& init_path, uint64_t seed) {
    if (!init_path.empty()) {
        return model::load_bundle(init_path);
    }
    model::ModelConfig mcfg = model_config_from(cfg.at("model"));
    mcfg.vocab_size = w.vocab.size();
    mcfg.feature_dim = w.config.feature_dim;
    return model::ModelBundle::init(mcfg, w, seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causalab: a desk-scale causal-intervention laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed_flag;
    std::string out_dir = "out";
    app.add_option("--config", config_path, "JSON config file")->expected(1);
    app.add_option("--set", overrides, "dotted-path override, e.g. world.noise_std=0.2");
    app.add_option("--seed", seed_flag, "override world/model seed");
    app.add_option("--out", out_dir, "output directory");

    auto* gen = app.add_subcommand("gen-world", "generate a world and a scene set");
    int gen_scenes = 0;
    gen->add_option("--scenes", gen_scenes, "scene count (default from config)");

    auto* tr = app.add_subcommand("train", "run one training stage");
    std::string tr_world, tr_init, tr_dict_dir, tr_stage = "finetune";
    tr->add_option("--world", tr_world, "world.json")->required();
    tr->add_option("--init", tr_init, "initial checkpoint (fresh init when omitted)");
    tr->add_option("--dict-dir", tr_dict_dir, "directory holding dict_*.bin to attach");
    tr->add_option("--stage", tr_stage, "pretrain|finetune")
        ->check(CLI::IsMember({"pretrain", "finetune"}));

    auto* bd = app.add_subcommand("build-dict", "build confounder dictionaries");
    std::string bd_world, bd_ckpt;
    int bd_scenes = 0;
    bd->add_option("--world", bd_world, "world.json")->required();
    bd->add_option("--checkpoint", bd_ckpt, "estimation checkpoint")->required();
    bd->add_option("--scenes", bd_scenes, "collection scene count");

    auto* ev = app.add_subcommand("eval", "hallucination metrics for a checkpoint");
    std::string ev_world, ev_ckpt, ev_scenes_file;
    int ev_scenes = 0;
    ev->add_option("--world", ev_world, "world.json")->required();
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    ev->add_option("--scenes-file", ev_scenes_file, "scenes.jsonl (sampled when omitted)");
    ev->add_option("--scenes", ev_scenes, "eval scene count when sampling");

    auto* an = app.add_subcommand("analyze", "layer-wise entanglement profile");
    std::string an_world, an_ckpt;
    int an_center = -1, an_k = 0, an_scenes = 0;
    an->add_option("--world", an_world, "world.json")->required();
    an->add_option("--checkpoint", an_ckpt, "trained checkpoint")->required();
    an->add_option("--center", an_center, "center category (default from config)");
    an->add_option("--k", an_k, "partner count (default from config)");
    an->add_option("--scenes", an_scenes, "profile scene count");

    auto* ab = app.add_subcommand("ablate", "placement × variant ablation grid");
    int ab_seeds = 3;
    std::vector<std::string> ab_placements = {"baseline", "only_projection", "only_transformer",
                                              "both"};
    std::vector<std::string> ab_variants = {"shared_kv"};
    ab->add_option("--seeds", ab_seeds, "number of paired seeds");
    ab->add_option("--placements", ab_placements, "subset of baseline/only_projection/only_transformer/both");
    ab->add_option("--variants", ab_variants, "attention variants for causal placements");

    auto* rp = app.add_subcommand("repro", "paired baseline-vs-causal experiment");
    int rp_seeds = 5;
    rp->add_option("--seeds", rp_seeds, "number of paired seeds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help
        }
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        json cfg = default_config();
        if (!config_path.empty()) {
            merge_json(cfg, json::parse(io::read_file(config_path)));
        }
        for (const std::string& s : overrides) {
            apply_set(cfg, s);
        }
        if (seed_flag) {
            cfg["world"]["seed"] = *seed_flag;
        }
        const fs::path out(out_dir);
        fs::create_directories(out);
        const uint64_t world_seed = cfg["world"]["seed"].get<uint64_t>();

        if (gen->parsed()) {
            const world::WorldConfig wc = world_config_from(cfg["world"]);
            const world::World w = world::build_world(wc);
            const int n = gen_scenes > 0 ? gen_scenes : cfg["gen"]["scene_count"].get<int>();
            numkit::Rng rng(numkit::derive_seed(wc.seed, "gen-scenes"));
            const auto scenes = world::sample_scenes(w, rng, n);
            world::save_world(w, out / "world.json");
            world::save_scenes(scenes, out / "scenes.jsonl");
            write_manifest(out, "gen-world", cfg, {}, {out / "world.json", out / "scenes.jsonl"});
        } else if (tr->parsed()) {
            const world::World w = world::load_world(tr_world);
            model::ModelBundle bundle =
                load_or_init_bundle(cfg, w, tr_init, numkit::derive_seed(world_seed, "cli-model"));
            std::vector<fs::path> inputs = {fs::path(tr_world)};
            if (!tr_init.empty()) inputs.push_back(fs::path(tr_init));
            if (!tr_dict_dir.empty()) {
                const fs::path dd(tr_dict_dir);
                bundle.attach_dictionaries(model::load_dictionary(dd / "dict_proj_v.bin"),
                                           model::load_dictionary(dd / "dict_final_v.bin"),
                                           model::load_dictionary(dd / "dict_final_t.bin"));
                inputs.push_back(dd / "dict_proj_v.bin");
                inputs.push_back(dd / "dict_final_v.bin");
                inputs.push_back(dd / "dict_final_t.bin");
            }
            const train::Stage stage =
                tr_stage == "pretrain" ? train::Stage::pretrain : train::Stage::finetune;
            const train::TrainConfig tc = train_config_from(
                cfg.at(tr_stage), stage, numkit::derive_seed(world_seed, "cli-train"));
            const train::TrainOutput outp = train::train_stage(bundle, w, tc);
            model::save_bundle(outp.final_bundle, out / "checkpoint.bin");
            io::write_file(out / "curve.csv", train::curve_to_csv(outp.curve));
            write_manifest(out, "train", cfg, inputs,
                           {out / "checkpoint.bin", out / "curve.csv"});
        } else if (bd->parsed()) {
            const world::World w = world::load_world(bd_world);
            const model::ModelBundle est = model::load_bundle(bd_ckpt);
            const int n = bd_scenes > 0 ? bd_scenes
                                        : cfg["experiment"]["dictionary_scenes"].get<int>();
            numkit::Rng rng(numkit::derive_seed(world_seed, "dict-scenes"));
            const auto scenes = world::sample_scenes(w, rng, n);
            const dict::DictionarySet set = dict::build_all_dictionaries(est, scenes, w);
            model::save_dictionary(set.proj_v, out / "dict_proj_v.bin");
            model::save_dictionary(set.final_v, out / "dict_final_v.bin");
            model::save_dictionary(set.final_t, out / "dict_final_t.bin");
            write_manifest(out, "build-dict", cfg, {fs::path(bd_world), fs::path(bd_ckpt)},
                           {out / "dict_proj_v.bin", out / "dict_final_v.bin",
                            out / "dict_final_t.bin"});
        } else if (ev->parsed()) {
            const world::World w = world::load_world(ev_world);
            const model::ModelBundle bundle = model::load_bundle(ev_ckpt);
            std::vector<world::SceneInstance> scenes;
            std::vector<fs::path> inputs = {fs::path(ev_world), fs::path(ev_ckpt)};
            if (!ev_scenes_file.empty()) {
                scenes = world::load_scenes(ev_scenes_file, w.config.feature_dim);
                inputs.push_back(fs::path(ev_scenes_file));
            } else {
                const int n = ev_scenes > 0 ? ev_scenes
                                            : cfg["experiment"]["eval_scene_count"].get<int>();
                numkit::Rng rng(numkit::derive_seed(world_seed, "eval-scenes"));
                scenes = world::sample_scenes(w, rng, n);
            }
            const auto report = evalkit::evaluate_bundle(
                bundle, scenes, w, cfg["experiment"]["pope_per_scene"].get<int>(),
                numkit::derive_seed(world_seed, "pope-probes"));
            io::write_file(out / "report.json", report.to_json());
            io::write_file(out / "report.csv", evalkit::HallucinationReport::csv_header() + "\n" +
                                                   report.to_csv_row("cli", world_seed) + "\n");
            write_manifest(out, "eval", cfg, inputs, {out / "report.json", out / "report.csv"});
        } else if (an->parsed()) {
            const world::World w = world::load_world(an_world);
            const model::ModelBundle bundle = model::load_bundle(an_ckpt);
            const int n = an_scenes > 0 ? an_scenes
                                        : cfg["experiment"]["eval_scene_count"].get<int>();
            numkit::Rng rng(numkit::derive_seed(world_seed, "eval-scenes"));
            const auto scenes = world::sample_scenes(w, rng, n);
            const auto cooc = world::cooccurrence_counts(scenes, w.config.categories);
            const int center = an_center >= 0 ? an_center
                                              : cfg["experiment"]["profile_center"].get<int>();
            const int k = an_k > 0 ? an_k : cfg["experiment"]["profile_k"].get<int>();
            const auto profile = analysis::layer_profile(bundle, scenes, w, cooc, center, k);
            io::write_file(out / "profile.json", analysis::profile_to_json(profile));
            io::write_file(out / "profile.csv",
                           "label,tap,center,separation_ratio,spearman_rho\n" +
                               analysis::profile_to_csv(profile, "cli"));
            write_manifest(out, "analyze", cfg, {fs::path(an_world), fs::path(an_ckpt)},
                           {out / "profile.json", out / "profile.csv"});
        } else if (ab->parsed()) {
            train::ExperimentConfig ex = experiment_config_from(cfg, out);
            std::vector<model::AttnVariant> variants;
            for (const std::string& v : ab_variants) {
                variants.push_back(model::attn_variant_from_name(v));
            }
            const auto grid = evalkit::ablation_grid(ex, seed_list(ab_seeds, world_seed),
                                                     ab_placements, variants);
            write_manifest(out, "ablate", cfg, {},
                           {grid.grid_csv_path, grid.runs_csv_path, out / "manifest.json"});
            std::cout << "grid written to " << grid.grid_csv_path << "\n";
        } else if (rp->parsed()) {
            train::ExperimentConfig ex = experiment_config_from(cfg, out);
            const auto result = train::run_experiment(ex, seed_list(rp_seeds, world_seed),
                                                      train::default_arms());
            write_manifest(out, "repro", cfg, {},
                           {result.summary_csv_path, result.manifest_path});
            std::cout << "summary written to " << result.summary_csv_path << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
