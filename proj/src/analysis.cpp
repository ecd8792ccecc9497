#include "causalab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace causalab::analysis {

std::string TapId::name() const {
    switch (kind) {
        case Kind::encoder_out: return "encoder_out";
        case Kind::projector_out: return "projector_out";
        case Kind::decoder_layer: return "layer_" + std::to_string(layer);
        case Kind::pre_head: return "pre_head";
    }
    throw std::invalid_argument("TapId::name: unknown kind");
}

std::vector<TapId> TapId::all(int n_layers) {
    std::vector<TapId> taps;
    taps.push_back({Kind::encoder_out, 0});
    taps.push_back({Kind::projector_out, 0});
    for (int l = 1; l <= n_layers; ++l) {
        taps.push_back({Kind::decoder_layer, l});
    }
    taps.push_back({Kind::pre_head, 0});
    return taps;
}

namespace {

int tap_width(const TapId& tap, const model::ModelConfig& cfg) {
    return tap.kind == TapId::Kind::encoder_out ? cfg.feature_dim : cfg.sigma;
}

const Tensor& tap_activations(const TapId& tap, const Tensor& features,
                              const model::HiddenStates& hs) {
    switch (tap.kind) {
        case TapId::Kind::encoder_out: return features;
        case TapId::Kind::projector_out: return hs.soft_tokens;
        case TapId::Kind::decoder_layer:
            return hs.layer_outputs.at(static_cast<size_t>(tap.layer - 1));
        case TapId::Kind::pre_head: return hs.pre_head;
    }
    throw std::invalid_argument("tap_activations: unknown tap");
}

bool tap_has_text_positions(const TapId& tap) {
    return tap.kind == TapId::Kind::decoder_layer || tap.kind == TapId::Kind::pre_head;
}

std::vector<double> ranks_with_ties(const std::vector<double>& xs) {
    const size_t n = xs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw std::invalid_argument("spearman: need two equal-length series");
    }
    const std::vector<double> rx = ranks_with_ties(xs);
    const std::vector<double> ry = ranks_with_ties(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;  // a constant series carries no rank signal
    }
    return sxy / std::sqrt(sxx * syy);
}

double cosine_distance(const Tensor& means, int a, int b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < means.cols(); ++j) {
        dot += means.at(a, j) * means.at(b, j);
        na += means.at(a, j) * means.at(a, j);
        nb += means.at(b, j) * means.at(b, j);
    }
    if (na == 0.0 || nb == 0.0) {
        throw std::runtime_error("cosine_distance: zero-norm mean vector");
    }
    return 1.0 - dot / std::sqrt(na * nb);
}

std::vector<TapCapture> capture_means(const ModelBundle& bundle,
                                      const std::vector<SceneInstance>& scenes, const World& w,
                                      const std::vector<TapId>& taps, Modality modality,
                                      long min_count) {
    if (scenes.empty()) {
        throw std::invalid_argument("capture_means: no scenes");
    }
    for (const TapId& tap : taps) {
        if (modality == Modality::textual && !tap_has_text_positions(tap)) {
            throw std::invalid_argument("capture_means: tap " + tap.name() +
                                        " has no textual positions");
        }
    }
    const int k = w.config.categories;
    std::vector<Tensor> sums;
    std::vector<std::vector<long>> counts(taps.size(),
                                          std::vector<long>(static_cast<size_t>(k), 0));
    sums.reserve(taps.size());
    for (const TapId& tap : taps) {
        sums.push_back(Tensor::zeros({k, tap_width(tap, bundle.config)}));
    }

    for (const auto& scene : scenes) {
        numkit::Graph g;
        const Tensor features = model::encode_visual(scene, w);
        const model::HiddenStates hs = model::forward_states(g, bundle, features, scene.caption);
        for (size_t ti = 0; ti < taps.size(); ++ti) {
            const Tensor& act = tap_activations(taps[ti], features, hs);
            auto accumulate = [&](int category, int row) {
                for (int j = 0; j < act.cols(); ++j) {
                    sums[ti].at(category, j) += act.at(row, j);
                }
                counts[ti][static_cast<size_t>(category)] += 1;
            };
            if (modality == Modality::visual) {
                for (size_t i = 0; i < scene.present.size(); ++i) {
                    accumulate(scene.present[i], static_cast<int>(i));
                }
            } else {
                for (size_t t = 0; t < scene.caption.size(); ++t) {
                    const int cat = w.vocab.token_category(scene.caption[t]);
                    if (cat >= 0) accumulate(cat, hs.n_soft + static_cast<int>(t));
                }
            }
        }
    }

    std::vector<TapCapture> captures;
    captures.reserve(taps.size());
    for (size_t ti = 0; ti < taps.size(); ++ti) {
        TapCapture cap;
        cap.tap = taps[ti];
        cap.modality = modality;
        cap.counts = counts[ti];
        cap.min_count = static_cast<int>(min_count);
        cap.means = Tensor::zeros({k, sums[ti].cols()});
        for (int c = 0; c < k; ++c) {
            const long n = counts[ti][static_cast<size_t>(c)];
            if (n < min_count) {
                cap.undersampled.push_back(c);
            }
            if (n > 0) {
                for (int j = 0; j < sums[ti].cols(); ++j) {
                    cap.means.at(c, j) = sums[ti].at(c, j) / static_cast<double>(n);
                }
            }
        }
        captures.push_back(std::move(cap));
    }
    return captures;
}

Pca3 pca3(const Tensor& means) {
    if (means.ndim() != 2 || means.rows() < 4) {
        throw std::invalid_argument("pca3: needs a K × width matrix with K >= 4");
    }
    const int k = means.rows(), w = means.cols();
    // Column-center.
    Tensor b = means.clone();
    for (int j = 0; j < w; ++j) {
        double mean = 0.0;
        for (int i = 0; i < k; ++i) mean += b.at(i, j);
        mean /= k;
        for (int i = 0; i < k; ++i) b.at(i, j) -= mean;
    }

    // One-sided Jacobi SVD: rotate column pairs of B until mutually
    // orthogonal, accumulating the rotations in V. Then B = U Σ and the
    // columns of V are right singular vectors.
    Tensor v = Tensor::zeros({w, w});
    for (int j = 0; j < w; ++j) v.at(j, j) = 1.0;
    const int max_sweeps = 60;
    const double tol = 1e-14;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < w - 1; ++p) {
            for (int q = p + 1; q < w; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < k; ++i) {
                    app += b.at(i, p) * b.at(i, p);
                    aqq += b.at(i, q) * b.at(i, q);
                    apq += b.at(i, p) * b.at(i, q);
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) {
                    continue;
                }
                off = std::max(off, std::abs(apq) / std::sqrt(app * aqq + 1e-300));
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < k; ++i) {
                    const double bp = b.at(i, p), bq = b.at(i, q);
                    b.at(i, p) = c * bp - s * bq;
                    b.at(i, q) = s * bp + c * bq;
                }
                for (int i = 0; i < w; ++i) {
                    const double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (off < 1e-13) break;
    }

    std::vector<double> sq(static_cast<size_t>(w), 0.0);
    double total = 0.0;
    for (int j = 0; j < w; ++j) {
        double s2 = 0.0;
        for (int i = 0; i < k; ++i) s2 += b.at(i, j) * b.at(i, j);
        sq[static_cast<size_t>(j)] = s2;
        total += s2;
    }
    std::vector<int> order(static_cast<size_t>(w));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int c) { return sq[static_cast<size_t>(a)] > sq[static_cast<size_t>(c)]; });

    Pca3 out;
    out.coords = Tensor::zeros({k, 3});
    const double rank_tol = 1e-12 * std::max(1.0, sq[static_cast<size_t>(order[0])]);
    for (int comp = 0; comp < 3 && comp < w; ++comp) {
        const int j = order[static_cast<size_t>(comp)];
        if (sq[static_cast<size_t>(j)] <= rank_tol) {
            out.rank_deficient = true;
            continue;  // leave zero column
        }
        // Sign convention: largest-magnitude loading positive.
        int arg = 0;
        for (int i = 1; i < w; ++i) {
            if (std::abs(v.at(i, j)) > std::abs(v.at(arg, j))) arg = i;
        }
        const double flip = v.at(arg, j) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < k; ++i) {
            out.coords.at(i, comp) = flip * b.at(i, j);
        }
        out.explained_variance[static_cast<size_t>(comp)] =
            total > 0.0 ? sq[static_cast<size_t>(j)] / total : 0.0;
    }
    if (w < 3) out.rank_deficient = true;
    return out;
}

EntanglementReport entanglement_metrics(const TapCapture& capture,
                                        const CooccurrenceMatrix& cooccurrence, int center,
                                        int k) {
    const int categories = capture.means.rows();
    if (!capture.undersampled.empty()) {
        std::ostringstream msg;
        msg << "entanglement_metrics: undersampled categories:";
        for (int c : capture.undersampled) msg << ' ' << c;
        throw std::runtime_error(msg.str());
    }
    if (center < 0 || center >= categories) {
        throw std::invalid_argument("entanglement_metrics: center out of range");
    }
    const int kk = std::min(k, categories - 2);
    if (kk < 1) {
        throw std::invalid_argument("entanglement_metrics: not enough categories");
    }

    EntanglementReport r;
    r.tap = capture.tap;
    r.center = center;
    r.partners = world::top_k_cooccurring(cooccurrence, center, kk);

    std::vector<bool> is_partner(static_cast<size_t>(categories), false);
    for (int p : r.partners) is_partner[static_cast<size_t>(p)] = true;
    double partner_sum = 0.0, other_sum = 0.0;
    long partner_n = 0, other_n = 0;
    for (int c = 0; c < categories; ++c) {
        if (c == center) continue;
        const double d = cosine_distance(capture.means, center, c);
        if (is_partner[static_cast<size_t>(c)]) {
            partner_sum += d;
            ++partner_n;
        } else {
            other_sum += d;
            ++other_n;
        }
    }
    if (other_n == 0 || other_sum == 0.0) {
        throw std::runtime_error("entanglement_metrics: separation ratio undefined");
    }
    r.separation_ratio = (partner_sum / partner_n) / (other_sum / other_n);

    std::vector<double> counts, distances;
    for (int i = 0; i < categories; ++i) {
        for (int j = i + 1; j < categories; ++j) {
            counts.push_back(static_cast<double>(cooccurrence.at(i, j)));
            distances.push_back(cosine_distance(capture.means, i, j));
        }
    }
    r.spearman_rho = spearman(counts, distances);
    r.pca = pca3(capture.means);
    return r;
}

std::vector<EntanglementReport> layer_profile(const ModelBundle& bundle,
                                              const std::vector<SceneInstance>& scenes,
                                              const World& w,
                                              const CooccurrenceMatrix& cooccurrence, int center,
                                              int k, long min_count) {
    const auto taps = TapId::all(bundle.config.n_layers);
    const auto captures = capture_means(bundle, scenes, w, taps, Modality::visual, min_count);
    std::vector<EntanglementReport> profile;
    profile.reserve(captures.size());
    for (const auto& cap : captures) {
        profile.push_back(entanglement_metrics(cap, cooccurrence, center, k));
    }
    return profile;
}

std::string EntanglementReport::to_json() const {
    nlohmann::json j;
    j["tap"] = tap.name();
    j["center"] = center;
    j["partners"] = partners;
    j["separation_ratio"] = separation_ratio;
    j["spearman_rho"] = spearman_rho;
    nlohmann::json coords = nlohmann::json::array();
    for (int i = 0; i < pca.coords.rows(); ++i) {
        coords.push_back({pca.coords.at(i, 0), pca.coords.at(i, 1), pca.coords.at(i, 2)});
    }
    j["pca3"] = coords;
    j["explained_variance"] = pca.explained_variance;
    j["rank_deficient"] = pca.rank_deficient;
    return j.dump();
}

std::string profile_to_json(const std::vector<EntanglementReport>& profile) {
    std::string out = "[\n";
    for (size_t i = 0; i < profile.size(); ++i) {
        out += "  " + profile[i].to_json();
        if (i + 1 < profile.size()) out += ",";
        out += "\n";
    }
    out += "]\n";
    return out;
}

std::string profile_to_csv(const std::vector<EntanglementReport>& profile,
                           const std::string& label) {
    std::ostringstream out;
    for (const auto& r : profile) {
        out << label << ',' << r.tap.name() << ',' << r.center << ',' << r.separation_ratio << ','
            << r.spearman_rho << '\n';
    }
    return out.str();
}

}  // namespace causalab::analysis
