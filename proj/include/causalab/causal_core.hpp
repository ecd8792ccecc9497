#pragma once

#include <string>
#include <vector>

#include "causalab/tensor.hpp"

namespace causalab::causal {

using numkit::Tensor;

// Finite structural causal model over X -> Y with confounder Z.
// p_y_given_xz is indexed [x][z][y].
struct DiscreteSCM {
    std::vector<double> p_z;  // prior over n_z values
    Tensor p_z_given_x;       // n_x × n_z
    Tensor p_y_given_xz;      // n_x × n_z × n_y

    int n_x() const { return p_z_given_x.rows(); }
    int n_z() const { return static_cast<int>(p_z.size()); }
    int n_y() const { return p_y_given_xz.shape()[2]; }
    // Rows must sum to 1 within 1e-9 with nonnegative entries.
    void validate() const;
};

struct AdjustmentResult {
    Tensor observational;  // n_x × n_y
    Tensor interventional; // n_x × n_y
    Tensor nwgm;           // n_x × n_y
    double max_gap = 0.0;  // max |nwgm - interventional|
};

// P(Y|X=x) = sum_z P(Y|x,z) P(z|x).
Tensor observational(const DiscreteSCM& scm);

// P(Y|do(X=x)) = sum_z P(Y|x,z) P(z): the confounder is marginalized with
// its prior instead of P(z|x).
Tensor backdoor_adjust_exact(const DiscreteSCM& scm);

// Weighted geometric mean: prod values[i]^probs[i]. Values must be positive.
double wgm(const std::vector<double>& values, const std::vector<double>& probs);

// Softmax of the z-expectation of a score table: the marginalization over z
// is replaced by an expectation in score space before normalizing.
std::vector<double> nwgm_predict(const Tensor& scores_zy, const std::vector<double>& p_z);

// Unconditional confounder expectation sum_z p(z) rows[z]. The
// attention-conditioned counterpart lives in the model module.
std::vector<double> dictionary_expectation(const Tensor& rows, const std::vector<double>& probs);

// SCM family with P(Y|x,z) = softmax(g_x[x] + g_z[z]), the setting where the
// NWGM swap has a small, measurable gap.
struct LogLinearScm {
    Tensor g_x;  // n_x × n_y scores
    Tensor g_z;  // n_z × n_y scores
    std::vector<double> p_z;
    Tensor p_z_given_x;  // n_x × n_z

    DiscreteSCM to_scm() const;
};

// Runs exact and NWGM adjustment on a log-linear SCM and reports the gap.
// Also cross-checks the two algebraically equal NWGM routes (expectation of
// scores vs. g_x + expectation of g_z) to 1e-12.
AdjustmentResult approximation_gap_report(const LogLinearScm& model);

std::string adjustment_result_to_json(const AdjustmentResult& r);

}  // namespace causalab::causal
