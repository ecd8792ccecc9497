#include "causalab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "causalab/rng.hpp"

namespace causalab::numkit {

GradCheckResult finite_difference_check(const std::function<double(bool)>& fn,
                                        const std::vector<Tensor>& params,
                                        double eps, int coords_per_tensor, uint64_t seed) {
    for (Tensor p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    const double loss0 = fn(true);
    if (!std::isfinite(loss0)) {
        throw numeric_error("finite_difference_check: non-finite loss");
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) {
        analytic.emplace_back(p.grad(), p.grad() + p.size());
    }

    Rng rng(derive_seed(seed, "fd-coords"));
    GradCheckResult result;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        std::vector<int> coords(static_cast<size_t>(p.size()));
        for (int i = 0; i < p.size(); ++i) coords[static_cast<size_t>(i)] = i;
        if (p.size() > coords_per_tensor) {
            rng.shuffle(coords);
            coords.resize(static_cast<size_t>(coords_per_tensor));
        }
        for (int idx : coords) {
            const double original = p.data()[idx];
            p.data()[idx] = original + eps;
            const double plus = fn(false);
            p.data()[idx] = original - eps;
            const double minus = fn(false);
            p.data()[idx] = original;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw numeric_error("finite_difference_check: non-finite perturbed loss");
            }
            const double g_fd = (plus - minus) / (2.0 * eps);
            const double g_ad = analytic[pi][static_cast<size_t>(idx)];
            const double rel =
                std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
            result.max_rel_err = std::max(result.max_rel_err, rel);
            ++result.coords_checked;
        }
    }
    return result;
}

}  // namespace causalab::numkit
