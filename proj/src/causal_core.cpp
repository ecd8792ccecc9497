#include "causalab/causal_core.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace causalab::causal {

namespace {

constexpr double kRowSumTol = 1e-9;

void check_distribution(const double* p, int n, const char* what) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (p[i] < 0.0) {
            throw std::invalid_argument(std::string(what) + ": negative probability");
        }
        total += p[i];
    }
    if (std::abs(total - 1.0) > kRowSumTol) {
        throw std::invalid_argument(std::string(what) + ": row does not sum to 1");
    }
}

std::vector<double> softmax(const std::vector<double>& scores) {
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    std::vector<double> out(scores.size());
    double total = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - mx);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

}  // namespace

void DiscreteSCM::validate() const {
    if (p_z_given_x.ndim() != 2 || p_y_given_xz.ndim() != 3) {
        throw std::invalid_argument("DiscreteSCM: wrong table ranks");
    }
    const int nx = n_x(), nz = n_z(), ny = n_y();
    if (p_z_given_x.cols() != nz || p_y_given_xz.shape()[0] != nx ||
        p_y_given_xz.shape()[1] != nz) {
        throw std::invalid_argument("DiscreteSCM: table shapes disagree");
    }
    check_distribution(p_z.data(), nz, "p_z");
    for (int x = 0; x < nx; ++x) {
        check_distribution(p_z_given_x.data() + static_cast<size_t>(x) * nz, nz, "p_z_given_x");
        for (int z = 0; z < nz; ++z) {
            check_distribution(&p_y_given_xz.at3(x, z, 0), ny, "p_y_given_xz");
        }
    }
}

Tensor observational(const DiscreteSCM& scm) {
    scm.validate();
    const int nx = scm.n_x(), nz = scm.n_z(), ny = scm.n_y();
    Tensor out = Tensor::zeros({nx, ny});
    for (int x = 0; x < nx; ++x) {
        for (int z = 0; z < nz; ++z) {
            const double w = scm.p_z_given_x.at(x, z);
            for (int y = 0; y < ny; ++y) {
                out.at(x, y) += w * scm.p_y_given_xz.at3(x, z, y);
            }
        }
    }
    return out;
}

Tensor backdoor_adjust_exact(const DiscreteSCM& scm) {
    scm.validate();
    const int nx = scm.n_x(), nz = scm.n_z(), ny = scm.n_y();
    Tensor out = Tensor::zeros({nx, ny});
    for (int x = 0; x < nx; ++x) {
        for (int z = 0; z < nz; ++z) {
            const double w = scm.p_z[static_cast<size_t>(z)];
            for (int y = 0; y < ny; ++y) {
                out.at(x, y) += w * scm.p_y_given_xz.at3(x, z, y);
            }
        }
    }
    return out;
}

double wgm(const std::vector<double>& values, const std::vector<double>& probs) {
    if (values.size() != probs.size() || values.empty()) {
        throw std::invalid_argument("wgm: values and probs must have equal nonzero length");
    }
    check_distribution(probs.data(), static_cast<int>(probs.size()), "wgm probs");
    double log_acc = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        if (values[i] <= 0.0) {
            throw std::domain_error("wgm: values must be positive");
        }
        log_acc += probs[i] * std::log(values[i]);
    }
    return std::exp(log_acc);
}

std::vector<double> nwgm_predict(const Tensor& scores_zy, const std::vector<double>& p_z) {
    if (scores_zy.ndim() != 2 || scores_zy.rows() != static_cast<int>(p_z.size())) {
        throw std::invalid_argument("nwgm_predict: scores must be n_z × n_y");
    }
    check_distribution(p_z.data(), static_cast<int>(p_z.size()), "nwgm p_z");
    const int nz = scores_zy.rows(), ny = scores_zy.cols();
    std::vector<double> expected(static_cast<size_t>(ny), 0.0);
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            expected[static_cast<size_t>(y)] += p_z[static_cast<size_t>(z)] * scores_zy.at(z, y);
        }
    }
    return softmax(expected);
}

std::vector<double> dictionary_expectation(const Tensor& rows, const std::vector<double>& probs) {
    if (rows.ndim() != 2 || rows.rows() != static_cast<int>(probs.size())) {
        throw std::invalid_argument("dictionary_expectation: rows must match probs length");
    }
    check_distribution(probs.data(), static_cast<int>(probs.size()), "dictionary probs");
    std::vector<double> out(static_cast<size_t>(rows.cols()), 0.0);
    for (int z = 0; z < rows.rows(); ++z) {
        for (int j = 0; j < rows.cols(); ++j) {
            out[static_cast<size_t>(j)] += probs[static_cast<size_t>(z)] * rows.at(z, j);
        }
    }
    return out;
}

DiscreteSCM LogLinearScm::to_scm() const {
    const int nx = g_x.rows(), nz = g_z.rows(), ny = g_x.cols();
    if (g_z.cols() != ny) {
        throw std::invalid_argument("LogLinearScm: g_x and g_z must share the y dimension");
    }
    DiscreteSCM scm;
    scm.p_z = p_z;
    scm.p_z_given_x = p_z_given_x;
    scm.p_y_given_xz = Tensor::zeros({nx, nz, ny});
    for (int x = 0; x < nx; ++x) {
        for (int z = 0; z < nz; ++z) {
            std::vector<double> scores(static_cast<size_t>(ny));
            for (int y = 0; y < ny; ++y) {
                scores[static_cast<size_t>(y)] = g_x.at(x, y) + g_z.at(z, y);
            }
            const std::vector<double> probs = softmax(scores);
            for (int y = 0; y < ny; ++y) {
                scm.p_y_given_xz.at3(x, z, y) = probs[static_cast<size_t>(y)];
            }
        }
    }
    return scm;
}

AdjustmentResult approximation_gap_report(const LogLinearScm& model) {
    const DiscreteSCM scm = model.to_scm();
    AdjustmentResult r;
    r.observational = observational(scm);
    r.interventional = backdoor_adjust_exact(scm);

    const int nx = scm.n_x(), nz = scm.n_z(), ny = scm.n_y();
    r.nwgm = Tensor::zeros({nx, ny});
    r.max_gap = 0.0;
    for (int x = 0; x < nx; ++x) {
        // Route A: expectation of the full score table.
        Tensor scores = Tensor::zeros({nz, ny});
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                scores.at(z, y) = model.g_x.at(x, y) + model.g_z.at(z, y);
            }
        }
        const std::vector<double> route_a = nwgm_predict(scores, model.p_z);

        // Route B: linear decomposition g_x(x) + E_z[g_z(z)].
        std::vector<double> gz_mean(static_cast<size_t>(ny), 0.0);
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                gz_mean[static_cast<size_t>(y)] += model.p_z[static_cast<size_t>(z)] * model.g_z.at(z, y);
            }
        }
        std::vector<double> decomposed(static_cast<size_t>(ny));
        for (int y = 0; y < ny; ++y) {
            decomposed[static_cast<size_t>(y)] = model.g_x.at(x, y) + gz_mean[static_cast<size_t>(y)];
        }
        const std::vector<double> route_b = softmax(decomposed);

        for (int y = 0; y < ny; ++y) {
            if (std::abs(route_a[static_cast<size_t>(y)] - route_b[static_cast<size_t>(y)]) > 1e-12) {
                throw numkit::numeric_error(
                    "approximation_gap_report: NWGM score routes disagree beyond 1e-12");
            }
            r.nwgm.at(x, y) = route_a[static_cast<size_t>(y)];
            r.max_gap = std::max(r.max_gap, std::abs(r.nwgm.at(x, y) - r.interventional.at(x, y)));
        }
    }
    return r;
}

std::string adjustment_result_to_json(const AdjustmentResult& r) {
    using nlohmann::json;
    auto table = [](const Tensor& t) {
        json rows = json::array();
        for (int i = 0; i < t.rows(); ++i) {
            json row = json::array();
            for (int j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
            rows.push_back(row);
        }
        return rows;
    };
    json j;
    j["observational"] = table(r.observational);
    j["interventional"] = table(r.interventional);
    j["nwgm"] = table(r.nwgm);
    j["max_gap"] = r.max_gap;
    return j.dump(2) + "\n";
}

}  // namespace causalab::causal
