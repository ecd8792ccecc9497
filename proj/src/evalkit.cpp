#include "causalab/evalkit.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "causalab/rng.hpp"

namespace causalab::evalkit {

using numkit::Rng;

ChairScores chair_metrics(const std::vector<CaptionEval>& captions) {
    if (captions.empty()) {
        throw std::invalid_argument("chair_metrics: empty caption set");
    }
    long hallucinated_captions = 0;
    long hallucinated_mentions = 0;
    long total_mentions = 0;
    long covered_truth = 0;
    long total_truth = 0;
    for (const CaptionEval& c : captions) {
        long bad = 0;
        for (int m : c.mentioned) {
            if (!c.truth.count(m)) ++bad;
        }
        hallucinated_mentions += bad;
        total_mentions += static_cast<long>(c.mentioned.size());
        if (bad > 0) ++hallucinated_captions;
        for (int t : c.truth) {
            if (c.mentioned.count(t)) ++covered_truth;
        }
        total_truth += static_cast<long>(c.truth.size());
    }
    if (total_truth == 0) {
        throw std::invalid_argument("chair_metrics: no ground-truth categories");
    }
    ChairScores s;
    s.chair_s = static_cast<double>(hallucinated_captions) / captions.size();
    s.chair_i = total_mentions == 0
                    ? 0.0
                    : static_cast<double>(hallucinated_mentions) / total_mentions;
    s.recall = static_cast<double>(covered_truth) / total_truth;
    return s;
}

const char* pope_regime_name(PopeRegime r) {
    switch (r) {
        case PopeRegime::rnd: return "rnd";
        case PopeRegime::pop: return "pop";
        case PopeRegime::adv: return "adv";
    }
    throw std::invalid_argument("pope_regime_name: unknown regime");
}

std::vector<PopeProbe> build_pope_probes(const std::vector<SceneInstance>& scenes,
                                         const CooccurrenceMatrix& cooccurrence,
                                         PopeRegime regime, int per_scene, uint64_t seed) {
    if (per_scene < 1) {
        throw std::invalid_argument("build_pope_probes: per_scene must be >= 1");
    }
    const int k = cooccurrence.categories;
    Rng rng(numkit::derive_seed(seed, pope_regime_name(regime)));
    std::vector<PopeProbe> probes;
    for (size_t si = 0; si < scenes.size(); ++si) {
        const auto& present = scenes[si].present;
        std::vector<int> absent;
        for (int c = 0; c < k; ++c) {
            if (!std::count(present.begin(), present.end(), c)) absent.push_back(c);
        }
        if (absent.empty()) {
            continue;  // scene covers all categories; nothing to probe negatively
        }
        // Positives and negatives are emitted in equal numbers so aggregate
        // accuracy has a 0.5 constant-answer floor.
        const int n = std::min({per_scene, static_cast<int>(present.size()),
                                static_cast<int>(absent.size())});
        std::vector<int> pos = present;
        rng.shuffle(pos);
        std::vector<int> neg;
        switch (regime) {
            case PopeRegime::rnd: {
                neg = absent;
                rng.shuffle(neg);
                break;
            }
            case PopeRegime::pop: {
                neg = absent;
                std::stable_sort(neg.begin(), neg.end(), [&](int a, int b) {
                    const long ta = cooccurrence.total(a), tb = cooccurrence.total(b);
                    return ta != tb ? ta > tb : a < b;
                });
                break;
            }
            case PopeRegime::adv: {
                neg = absent;
                auto adv_score = [&](int c) {
                    long best = 0;
                    for (int p : present) best = std::max(best, cooccurrence.at(c, p));
                    return best;
                };
                std::stable_sort(neg.begin(), neg.end(), [&](int a, int b) {
                    const long sa = adv_score(a), sb = adv_score(b);
                    return sa != sb ? sa > sb : a < b;
                });
                break;
            }
        }
        for (int i = 0; i < n; ++i) {
            probes.push_back({static_cast<int>(si), pos[static_cast<size_t>(i)], true});
            probes.push_back({static_cast<int>(si), neg[static_cast<size_t>(i)], false});
        }
    }
    return probes;
}

double pope_accuracy(const ModelBundle& bundle, const std::vector<SceneInstance>& scenes,
                     const std::vector<PopeProbe>& probes, const World& w) {
    if (probes.empty()) {
        throw std::invalid_argument("pope_accuracy: no probes");
    }
    long correct = 0;
    for (const PopeProbe& p : probes) {
        const bool said_yes =
            model::answer_probe(bundle, scenes[static_cast<size_t>(p.scene_index)], p.category, w);
        if (said_yes == p.positive) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probes.size());
}

double partner_false_yes_rate(const ModelBundle& bundle,
                              const std::vector<SceneInstance>& scenes, const World& w,
                              long* probe_count) {
    long probes = 0;
    long yeses = 0;
    for (const auto& scene : scenes) {
        for (const world::BiasPair& bp : w.config.bias_pairs) {
            const bool center_in =
                std::count(scene.present.begin(), scene.present.end(), bp.center) > 0;
            const bool partner_in =
                std::count(scene.present.begin(), scene.present.end(), bp.partner) > 0;
            if (center_in && !partner_in) {
                ++probes;
                if (model::answer_probe(bundle, scene, bp.partner, w)) ++yeses;
            }
        }
    }
    if (probe_count) *probe_count = probes;
    if (probes == 0) {
        throw std::runtime_error("partner_false_yes_rate: no center-present/partner-absent scenes");
    }
    return static_cast<double>(yeses) / static_cast<double>(probes);
}

HallucinationReport evaluate_bundle(const ModelBundle& bundle,
                                    const std::vector<SceneInstance>& scenes, const World& w,
                                    int pope_per_scene, uint64_t probe_seed) {
    HallucinationReport r;
    r.n_eval = static_cast<int>(scenes.size());

    std::vector<CaptionEval> evals;
    evals.reserve(scenes.size());
    const int caption_budget = w.config.max_objects + w.vocab.template_len + 3;
    for (const auto& scene : scenes) {
        const std::vector<int> caption = model::generate_caption(bundle, scene, w, caption_budget);
        CaptionEval ce;
        const auto mentioned = world::parse_caption_categories(w.vocab, caption);
        ce.mentioned.insert(mentioned.begin(), mentioned.end());
        ce.truth.insert(scene.present.begin(), scene.present.end());
        evals.push_back(std::move(ce));
    }
    const ChairScores chair = chair_metrics(evals);
    r.chair_s = chair.chair_s;
    r.chair_i = chair.chair_i;
    r.recall = chair.recall;

    const CooccurrenceMatrix cooc = world::cooccurrence_counts(scenes, w.config.categories);
    for (PopeRegime regime : {PopeRegime::rnd, PopeRegime::pop, PopeRegime::adv}) {
        const auto probes = build_pope_probes(scenes, cooc, regime, pope_per_scene, probe_seed);
        const double acc = pope_accuracy(bundle, scenes, probes, w);
        switch (regime) {
            case PopeRegime::rnd: r.pope_rnd = acc; break;
            case PopeRegime::pop: r.pope_pop = acc; break;
            case PopeRegime::adv: r.pope_adv = acc; break;
        }
    }
    r.partner_false_yes = partner_false_yes_rate(bundle, scenes, w, &r.partner_probes);
    return r;
}

std::string HallucinationReport::to_json() const {
    nlohmann::json j;
    j["chair_s"] = chair_s;
    j["chair_i"] = chair_i;
    j["recall"] = recall;
    j["pope_rnd"] = pope_rnd;
    j["pope_pop"] = pope_pop;
    j["pope_adv"] = pope_adv;
    j["partner_false_yes"] = partner_false_yes;
    j["partner_probes"] = partner_probes;
    j["n_eval"] = n_eval;
    return j.dump(2) + "\n";
}

std::string HallucinationReport::csv_header() {
    return "arm,seed,chair_s,chair_i,recall,pope_rnd,pope_pop,pope_adv,partner_false_yes,"
           "partner_probes,n_eval";
}

std::string HallucinationReport::to_csv_row(const std::string& arm, uint64_t seed) const {
    std::ostringstream out;
    out << arm << ',' << seed << ',' << chair_s << ',' << chair_i << ',' << recall << ','
        << pope_rnd << ',' << pope_pop << ',' << pope_adv << ',' << partner_false_yes << ','
        << partner_probes << ',' << n_eval;
    return out.str();
}

std::string probes_to_json(const std::vector<PopeProbe>& probes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const PopeProbe& p : probes) {
        arr.push_back({{"scene", p.scene_index}, {"category", p.category}, {"positive", p.positive}});
    }
    return arr.dump() + "\n";
}

}  // namespace causalab::evalkit
