#include "causalab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "causalab/analysis.hpp"
#include "causalab/dictionary.hpp"
#include "causalab/evalkit.hpp"
#include "causalab/io.hpp"

namespace causalab::train {

using numkit::Graph;
using numkit::Rng;

const char* stage_name(Stage s) {
    return s == Stage::pretrain ? "pretrain" : "finetune";
}

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
    // learning_rate == 0 is allowed as a diagnostic (frozen) run.
    if (learning_rate < 0.0 || momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("TrainConfig: invalid optimizer settings");
    }
    if (steps < 0 || steps_per_epoch < 1) {
        throw std::invalid_argument("TrainConfig: invalid step counts");
    }
}

std::vector<std::pair<std::string, Tensor>> trainable_parameters(const ModelBundle& bundle,
                                                                 Stage stage) {
    std::vector<std::pair<std::string, Tensor>> all = bundle.named_parameters();
    if (stage == Stage::finetune) {
        return all;
    }
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, tensor] : all) {
        if (name.rfind("projector.", 0) == 0 || name.rfind("projector_intervention.", 0) == 0 ||
            name.rfind("final_visual.", 0) == 0 || name.rfind("final_textual.", 0) == 0) {
            out.emplace_back(name, tensor);
        }
    }
    return out;
}

TrainState::TrainState(ModelBundle bundle, world::World w, TrainConfig cfg)
    : started_(true), bundle_(std::move(bundle)), world_(std::move(w)), cfg_(cfg) {
    cfg_.validate();
    bundle_.require_dictionaries();
    stream_ = std::make_unique<Rng>(
        numkit::derive_seed(cfg_.seed, std::string("stream-") + stage_name(cfg_.stage)));
    if (cfg_.dataset_scenes > 0) {
        pool_ = world::sample_scenes(world_, *stream_, cfg_.dataset_scenes);
    }
    trainables_ = trainable_parameters(bundle_, cfg_.stage);
    velocity_.reserve(trainables_.size());
    for (auto& [name, tensor] : trainables_) {
        velocity_.push_back(Tensor::zeros(tensor.shape()));
    }
}

const TrainConfig& TrainState::config() const {
    if (!started_) {
        throw std::logic_error("TrainState: not configured");
    }
    return cfg_;
}

double TrainState::train_one_sample() {
    const long ordinal = ordinal_++;
    const bool pooled = cfg_.dataset_scenes > 0;
    const world::SceneInstance scene =
        pooled ? pool_[static_cast<size_t>(ordinal % cfg_.dataset_scenes)]
               : world::sample_scene(world_, *stream_);
    const bool probe_sample = cfg_.probe_mix && (ordinal % 2 == 1);

    // Pooled runs re-derive probe draws per ordinal so every pass over the
    // pool still covers fresh probe categories.
    std::unique_ptr<Rng> pooled_rng;
    Rng* draw = stream_.get();
    if (pooled) {
        pooled_rng = std::make_unique<Rng>(
            numkit::derive_seed(cfg_.seed, "probe-" + std::to_string(ordinal)));
        draw = pooled_rng.get();
    }

    Graph g;
    const Tensor features = model::encode_visual(scene, world_);
    Tensor loss;
    if (probe_sample) {
        const bool positive = draw->below(2) == 0;
        std::vector<int> candidates;
        if (positive) {
            candidates = scene.present;
        } else {
            for (int c = 0; c < world_.config.categories; ++c) {
                if (!std::count(scene.present.begin(), scene.present.end(), c)) {
                    candidates.push_back(c);
                }
            }
        }
        // A scene covering every category cannot yield a negative probe;
        // fall back to a positive one (cannot happen with default configs).
        const bool effective_positive = candidates.empty() ? true : positive;
        const std::vector<int>& pool = candidates.empty() ? scene.present : candidates;
        const int category = pool[static_cast<size_t>(draw->below(static_cast<int>(pool.size())))];
        const std::vector<int> tokens = {world_.vocab.bos, world_.vocab.query,
                                         world_.vocab.category_token(category)};
        const model::HiddenStates hs = model::forward_states(g, bundle_, features, tokens);
        const Tensor logits = model::next_token_logits(g, bundle_, hs);
        const Tensor last = g.slice_rows(logits, logits.rows() - 1, 1);
        loss = g.cross_entropy(last,
                               {effective_positive ? world_.vocab.yes : world_.vocab.no});
    } else {
        const int n_text = static_cast<int>(scene.caption.size());
        const model::HiddenStates hs = model::forward_states(g, bundle_, features, scene.caption);
        const Tensor logits = model::next_token_logits(g, bundle_, hs);
        // Position of caption token j predicts token j+1.
        const Tensor pred = g.slice_rows(logits, hs.n_soft, n_text - 1);
        const std::vector<int> targets(scene.caption.begin() + 1, scene.caption.end());
        loss = g.cross_entropy(pred, targets);
    }
    const double value = loss.scalar();
    g.backward(loss);
    return value;
}

void TrainState::run_steps(int n) {
    if (!started_) {
        throw std::logic_error("TrainState::run_steps: not configured");
    }
    const auto all_params = bundle_.named_parameters();
    for (int s = 0; s < n; ++s) {
        for (auto& [name, tensor] : all_params) {
            tensor.ensure_grad();
            tensor.zero_grad();
        }
        double batch_loss = 0.0;
        double grad_norm = 0.0;
        try {
            for (int i = 0; i < cfg_.batch_size; ++i) {
                batch_loss += train_one_sample();
            }
            batch_loss /= cfg_.batch_size;
            if (!std::isfinite(batch_loss)) {
                throw numkit::numeric_error("non-finite batch loss");
            }
            const double inv_batch = 1.0 / cfg_.batch_size;
            for (size_t t = 0; t < trainables_.size(); ++t) {
                Tensor& p = trainables_[t].second;
                for (int i = 0; i < p.size(); ++i) {
                    const double gi = p.grad()[i] * inv_batch;
                    grad_norm += gi * gi;
                }
            }
            grad_norm = std::sqrt(grad_norm);
            if (!std::isfinite(grad_norm)) {
                throw numkit::numeric_error("non-finite gradient norm");
            }
            for (size_t t = 0; t < trainables_.size(); ++t) {
                Tensor& p = trainables_[t].second;
                Tensor& v = velocity_[t];
                for (int i = 0; i < p.size(); ++i) {
                    v.data()[i] = cfg_.momentum * v.data()[i] -
                                  cfg_.learning_rate * p.grad()[i] * inv_batch;
                    p.data()[i] += v.data()[i];
                }
            }
        } catch (const numkit::numeric_error& e) {
            std::ostringstream msg;
            msg << "training aborted at step " << (step_ + 1) << ": " << e.what()
                << " (lr=" << cfg_.learning_rate << ", max_grad_norm="
                << grad_norm << ")";
            throw std::runtime_error(msg.str());
        }
        for (auto& [name, tensor] : all_params) {
            tensor.zero_grad();
        }
        ++step_;
        curve_.push_back({step_, batch_loss, grad_norm});
    }
}

TrainOutput train_stage(ModelBundle bundle, const world::World& w, const TrainConfig& cfg) {
    TrainState state(bundle, w, cfg);
    TrainOutput out;
    int done = 0;
    while (done < cfg.steps) {
        int chunk = cfg.steps - done;
        if (cfg.checkpoint_every > 0) {
            chunk = std::min(chunk, cfg.checkpoint_every);
        }
        state.run_steps(chunk);
        done += chunk;
        if (cfg.checkpoint_every > 0 && done < cfg.steps) {
            out.checkpoints.emplace_back(done, state.snapshot());
        }
    }
    out.curve = state.curve();
    out.final_bundle = bundle;  // tensors shared with the trained state
    out.checkpoints.emplace_back(cfg.steps, state.snapshot());
    return out;
}

std::string curve_to_csv(const std::vector<StepLog>& curve) {
    std::ostringstream out;
    out << "step,loss,grad_norm\n";
    for (const StepLog& log : curve) {
        out << log.step << ',' << log.loss << ',' << log.grad_norm << '\n';
    }
    return out.str();
}

Arm make_arm(const std::string& placement, model::AttnVariant variant) {
    Arm a;
    a.name = placement;
    a.variant = variant;
    if (placement == "baseline") {
        a.causal_projector = false;
        a.causal_final_layer = false;
    } else if (placement == "only_projection") {
        a.causal_projector = true;
        a.causal_final_layer = false;
    } else if (placement == "only_transformer") {
        a.causal_projector = false;
        a.causal_final_layer = true;
    } else if (placement == "causal" || placement == "both") {
        a.causal_projector = true;
        a.causal_final_layer = true;
        a.name = placement;
    } else {
        throw std::invalid_argument("make_arm: unknown placement " + placement);
    }
    return a;
}

std::vector<Arm> default_arms() {
    return {make_arm("baseline", model::AttnVariant::shared_kv),
            make_arm("causal", model::AttnVariant::shared_kv)};
}

namespace {

using nlohmann::json;

json train_config_json(const TrainConfig& cfg) {
    json j;
    j["stage"] = stage_name(cfg.stage);
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["steps"] = cfg.steps;
    j["steps_per_epoch"] = cfg.steps_per_epoch;
    j["seed"] = cfg.seed;
    j["momentum"] = cfg.momentum;
    return j;
}

uint64_t run_config_hash(const ExperimentConfig& cfg, const Arm& arm, uint64_t seed,
                         const TrainConfig& pre, const TrainConfig& fin) {
    json j;
    j["arm"] = arm.name;
    j["variant"] = model::attn_variant_name(arm.variant);
    j["causal_projector"] = arm.causal_projector;
    j["causal_final_layer"] = arm.causal_final_layer;
    j["seed"] = seed;
    j["world_seed"] = cfg.world_cfg.seed;
    j["sigma"] = cfg.model_cfg.sigma;
    j["n_layers"] = cfg.model_cfg.n_layers;
    j["n_heads"] = cfg.model_cfg.n_heads;
    j["pretrain"] = train_config_json(pre);
    j["finetune"] = train_config_json(fin);
    j["dictionary_scenes"] = cfg.dictionary_scenes;
    j["eval_scene_count"] = cfg.eval_scene_count;
    return io::fnv1a64(j.dump());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<uint64_t>& model_seeds,
                                const std::vector<Arm>& arms) {
    if (model_seeds.empty() || arms.empty()) {
        throw std::invalid_argument("run_experiment: need at least one seed and one arm");
    }
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    const world::World w = world::build_world(cfg.world_cfg);
    world::save_world(w, cfg.out_dir / "world.json");

    Rng eval_rng(numkit::derive_seed(cfg.world_cfg.seed, "eval-scenes"));
    const auto eval_scenes = world::sample_scenes(w, eval_rng, cfg.eval_scene_count);
    world::save_scenes(eval_scenes, cfg.out_dir / "eval_scenes.jsonl");
    const auto cooc = world::cooccurrence_counts(eval_scenes, w.config.categories);
    const uint64_t probe_seed = numkit::derive_seed(cfg.world_cfg.seed, "pope-probes");

    model::ModelConfig base_cfg = cfg.model_cfg;
    base_cfg.vocab_size = w.vocab.size();
    base_cfg.feature_dim = w.config.feature_dim;

    ExperimentResult result;
    json manifest;
    manifest["world"] = (cfg.out_dir / "world.json").string();
    manifest["eval_scenes"] = (cfg.out_dir / "eval_scenes.jsonl").string();
    manifest["world_hash"] = io::hex64(io::hash_file(cfg.out_dir / "world.json"));
    json runs_json = json::array();

    for (uint64_t seed : model_seeds) {
        const fs::path seed_dir = cfg.out_dir / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);

        // Shared non-causal estimation run for this seed.
        model::ModelConfig est_cfg = base_cfg;
        est_cfg.causal_projector = false;
        est_cfg.causal_final_layer = false;
        TrainConfig est_train = cfg.finetune;
        est_train.stage = Stage::finetune;
        est_train.seed = numkit::derive_seed(seed, "estimation");
        est_train.steps = static_cast<int>(
            std::ceil(cfg.dict_fraction * est_train.steps_per_epoch));
        TrainState est_state(
            model::ModelBundle::init(est_cfg, w, numkit::derive_seed(seed, "estimation-model")),
            w, est_train);
        const model::ModelBundle est_bundle = dict::estimation_checkpoint(est_state, cfg.dict_fraction);
        model::save_bundle(est_bundle, seed_dir / "estimation_checkpoint.bin");

        Rng dict_rng(numkit::derive_seed(seed, "dict-scenes"));
        const auto dict_scenes = world::sample_scenes(w, dict_rng, cfg.dictionary_scenes);
        const dict::DictionarySet dicts = dict::build_all_dictionaries(est_bundle, dict_scenes, w);
        model::save_dictionary(dicts.proj_v, seed_dir / "dict_proj_v.bin");
        model::save_dictionary(dicts.final_v, seed_dir / "dict_final_v.bin");
        model::save_dictionary(dicts.final_t, seed_dir / "dict_final_t.bin");

        for (const Arm& arm : arms) {
            ArmRunResult run;
            run.arm = arm.name;
            run.seed = seed;
            const fs::path arm_dir = seed_dir / arm.name;
            TrainConfig pre = cfg.pretrain;
            TrainConfig fin = cfg.finetune;
            pre.stage = Stage::pretrain;
            fin.stage = Stage::finetune;
            pre.seed = numkit::derive_seed(seed, "pretrain-stream");
            fin.seed = numkit::derive_seed(seed, "finetune-stream");
            const bool causal = arm.causal_projector || arm.causal_final_layer;
            if (causal) {
                pre.batch_size = static_cast<int>(std::lround(pre.batch_size * cfg.causal_batch_mult));
                pre.learning_rate *= cfg.causal_lr_mult;
            }
            run.config_hash = run_config_hash(cfg, arm, seed, pre, fin);
            try {
                fs::create_directories(arm_dir);
                model::ModelConfig mcfg = base_cfg;
                mcfg.causal_projector = arm.causal_projector;
                mcfg.causal_final_layer = arm.causal_final_layer;
                mcfg.attn_variant = arm.variant;
                model::ModelBundle bundle =
                    model::ModelBundle::init(mcfg, w, numkit::derive_seed(seed, "arm-model"));
                if (causal) {
                    bundle.attach_dictionaries(
                        arm.causal_projector ? dicts.proj_v : model::ConfounderDictionary{},
                        arm.causal_final_layer ? dicts.final_v : model::ConfounderDictionary{},
                        arm.causal_final_layer ? dicts.final_t : model::ConfounderDictionary{});
                }
                const TrainOutput pre_out = train_stage(bundle, w, pre);
                io::write_file(arm_dir / "pretrain_curve.csv", curve_to_csv(pre_out.curve));
                const TrainOutput fin_out = train_stage(bundle, w, fin);
                io::write_file(arm_dir / "finetune_curve.csv", curve_to_csv(fin_out.curve));

                run.checkpoint_path = arm_dir / "checkpoint.bin";
                model::save_bundle(bundle, run.checkpoint_path);

                const evalkit::HallucinationReport report = evalkit::evaluate_bundle(
                    bundle, eval_scenes, w, cfg.pope_per_scene, probe_seed);
                run.report_path = arm_dir / "report.json";
                io::write_file(run.report_path, report.to_json());

                const auto profile = analysis::layer_profile(bundle, eval_scenes, w, cooc,
                                                             cfg.profile_center, cfg.profile_k);
                run.profile_path = arm_dir / "profile.json";
                io::write_file(run.profile_path, analysis::profile_to_json(profile));
                io::write_file(arm_dir / "profile.csv",
                               "label,tap,center,separation_ratio,spearman_rho\n" +
                                   analysis::profile_to_csv(profile, arm.name));

                run.chair_s = report.chair_s;
                run.chair_i = report.chair_i;
                run.recall = report.recall;
                run.pope_rnd = report.pope_rnd;
                run.pope_pop = report.pope_pop;
                run.pope_adv = report.pope_adv;
                run.partner_false_yes = report.partner_false_yes;
                run.prehead_separation_ratio = profile.back().separation_ratio;
                run.prehead_spearman_rho = profile.back().spearman_rho;
                run.ok = true;
            } catch (const std::exception& e) {
                run.ok = false;
                run.error = e.what();
            }
            json rj;
            rj["arm"] = run.arm;
            rj["seed"] = run.seed;
            rj["ok"] = run.ok;
            rj["config_hash"] = io::hex64(run.config_hash);
            rj["checkpoint"] = run.checkpoint_path.string();
            rj["report"] = run.report_path.string();
            rj["profile"] = run.profile_path.string();
            if (!run.ok) rj["error"] = run.error;
            runs_json.push_back(rj);
            result.runs.push_back(std::move(run));
        }
    }

    std::ostringstream csv;
    csv << "arm,seed,ok,config_hash,chair_s,chair_i,recall,pope_rnd,pope_pop,pope_adv,"
           "partner_false_yes,prehead_separation_ratio,prehead_spearman_rho\n";
    for (const ArmRunResult& run : result.runs) {
        csv << run.arm << ',' << run.seed << ',' << (run.ok ? 1 : 0) << ','
            << io::hex64(run.config_hash) << ',' << run.chair_s << ',' << run.chair_i << ','
            << run.recall << ',' << run.pope_rnd << ',' << run.pope_pop << ',' << run.pope_adv
            << ',' << run.partner_false_yes << ',' << run.prehead_separation_ratio << ','
            << run.prehead_spearman_rho << '\n';
    }
    result.summary_csv_path = cfg.out_dir / "summary.csv";
    io::write_file(result.summary_csv_path, csv.str());

    manifest["runs"] = runs_json;
    manifest["summary_csv"] = result.summary_csv_path.string();
    result.manifest_path = cfg.out_dir / "manifest.json";
    io::write_file(result.manifest_path, manifest.dump(2) + "\n");
    return result;
}

}  // namespace causalab::train
