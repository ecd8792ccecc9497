#pragma once

#include <functional>
#include <vector>

#include "causalab/tensor.hpp"

namespace causalab::numkit {

struct GradCheckResult {
    double max_rel_err = 0.0;
    long coords_checked = 0;
};

// Central-difference check of reverse-mode gradients.
//
// `fn(with_grad)` must evaluate the loss deterministically from the current
// parameter values; when `with_grad` is true it must also populate the
// parameters' grad buffers (they are zeroed here first). Per tensor, up to
// `coords_per_tensor` coordinates are sampled (all of them for small tensors)
// and compared as |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckResult finite_difference_check(const std::function<double(bool)>& fn,
                                        const std::vector<Tensor>& params,
                                        double eps = 1e-5,
                                        int coords_per_tensor = 64,
                                        uint64_t seed = 0);

}  // namespace causalab::numkit
