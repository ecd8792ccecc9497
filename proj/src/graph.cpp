#include "causalab/graph.hpp"

#include <algorithm>
#include <cmath>

namespace causalab::numkit {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) {
        throw std::invalid_argument(msg);
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_derivative(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

void Graph::check_open(const char* name) const {
    if (consumed_) {
        throw std::logic_error(std::string("Graph::") + name + ": tape already consumed");
    }
}

Tensor Graph::record(const char* name, Tensor out, const std::vector<Tensor>& inputs,
                     std::function<void()> bwd) {
    out.check_finite(name);
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
        needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        out.set_requires_grad(true);
        for (const Tensor& in : inputs) {
            retained_.push_back(in);
        }
        retained_.push_back(out);
        ops_.push_back(Op{name, std::move(bwd)});
    }
    return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    check_open("matmul");
    require(a.ndim() == 2 && b.ndim() == 2, "matmul: expects 2-D tensors");
    require(a.cols() == b.rows(), "matmul: inner dimensions do not match");
    Tensor c = vmatmul(a, b);
    return record("matmul", c, {a, b}, [a, b, c]() mutable {
        if (!c.has_grad()) return;
        const int m = a.rows(), k = a.cols(), n = b.cols();
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = c.grad()[static_cast<size_t>(i) * n + j];
                    for (int p = 0; p < k; ++p)
                        a.grad()[static_cast<size_t>(i) * k + p] += g * b.at(p, j);
                }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const double av = a.at(i, p);
                    for (int j = 0; j < n; ++j)
                        b.grad()[static_cast<size_t>(p) * n + j] +=
                            av * c.grad()[static_cast<size_t>(i) * n + j];
                }
        }
    });
}

Tensor Graph::matmul_nt(const Tensor& a, const Tensor& b) {
    check_open("matmul_nt");
    require(a.ndim() == 2 && b.ndim() == 2, "matmul_nt: expects 2-D tensors");
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions do not match");
    Tensor c = vmatmul_nt(a, b);
    return record("matmul_nt", c, {a, b}, [a, b, c]() mutable {
        if (!c.has_grad()) return;
        const int m = a.rows(), k = a.cols(), n = b.rows();
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = c.grad()[static_cast<size_t>(i) * n + j];
                    for (int p = 0; p < k; ++p)
                        a.grad()[static_cast<size_t>(i) * k + p] += g * b.at(j, p);
                }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) {
                    const double g = c.grad()[static_cast<size_t>(i) * n + j];
                    for (int p = 0; p < k; ++p)
                        b.grad()[static_cast<size_t>(j) * k + p] += g * a.at(i, p);
                }
        }
    });
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    check_open("add");
    require(a.same_shape(b), "add: shape mismatch");
    Tensor c = a.clone();
    c.set_requires_grad(false);
    for (int i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return record("add", c, {a, b}, [a, b, c]() mutable {
        if (!c.has_grad()) return;
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < c.size(); ++i) a.grad()[i] += c.grad()[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < c.size(); ++i) b.grad()[i] += c.grad()[i];
        }
    });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    check_open("sub");
    require(a.same_shape(b), "sub: shape mismatch");
    Tensor c = a.clone();
    c.set_requires_grad(false);
    for (int i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return record("sub", c, {a, b}, [a, b, c]() mutable {
        if (!c.has_grad()) return;
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < c.size(); ++i) a.grad()[i] += c.grad()[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < c.size(); ++i) b.grad()[i] -= c.grad()[i];
        }
    });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    check_open("mul");
    require(a.same_shape(b), "mul: shape mismatch");
    Tensor c = a.clone();
    c.set_requires_grad(false);
    for (int i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
    return record("mul", c, {a, b}, [a, b, c]() mutable {
        if (!c.has_grad()) return;
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < c.size(); ++i) a.grad()[i] += c.grad()[i] * b.data()[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < c.size(); ++i) b.grad()[i] += c.grad()[i] * a.data()[i];
        }
    });
}

Tensor Graph::scale(const Tensor& a, double c) {
    check_open("scale");
    Tensor out = a.clone();
    out.set_requires_grad(false);
    for (double& x : out.vec()) x *= c;
    return record("scale", out, {a}, [a, out, c]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        for (int i = 0; i < out.size(); ++i) a.grad()[i] += c * out.grad()[i];
    });
}

Tensor Graph::add_rowvec(const Tensor& x, const Tensor& b) {
    check_open("add_rowvec");
    require(x.ndim() == 2, "add_rowvec: x must be 2-D");
    require(b.size() == x.cols(), "add_rowvec: bias length must equal column count");
    Tensor out = x.clone();
    out.set_requires_grad(false);
    const int m = x.rows(), n = x.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += b.data()[j];
    return record("add_rowvec", out, {x, b}, [x, b, out]() mutable {
        if (!out.has_grad()) return;
        const int m = x.rows(), n = x.cols();
        if (x.requires_grad()) {
            x.ensure_grad();
            for (int i = 0; i < x.size(); ++i) x.grad()[i] += out.grad()[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    b.grad()[j] += out.grad()[static_cast<size_t>(i) * n + j];
        }
    });
}

Tensor Graph::softmax_rows(const Tensor& x) {
    check_open("softmax_rows");
    require(x.ndim() == 2, "softmax_rows: expects a 2-D tensor");
    if (!x.all_finite()) {
        throw numeric_error("softmax_rows: non-finite input");
    }
    const int m = x.rows(), n = x.cols();
    Tensor y = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double total = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(x.at(i, j) - mx);
            y.at(i, j) = e;
            total += e;
        }
        for (int j = 0; j < n; ++j) y.at(i, j) /= total;
    }
    return record("softmax_rows", y, {x}, [x, y]() mutable {
        if (!y.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        const int m = x.rows(), n = x.cols();
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j)
                dot += y.grad()[static_cast<size_t>(i) * n + j] * y.at(i, j);
            for (int j = 0; j < n; ++j)
                x.grad()[static_cast<size_t>(i) * n + j] +=
                    y.at(i, j) * (y.grad()[static_cast<size_t>(i) * n + j] - dot);
        }
    });
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double epsilon) {
    check_open("layer_norm");
    require(x.ndim() == 2 && x.cols() >= 2, "layer_norm: needs 2-D input with >= 2 columns");
    require(gain.size() == x.cols() && bias.size() == x.cols(),
            "layer_norm: gain/bias length must equal column count");
    const int m = x.rows(), n = x.cols();
    Tensor y = Tensor::zeros({m, n});
    Tensor xhat = Tensor::zeros({m, n});
    std::vector<double> inv_std(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        const double s = 1.0 / std::sqrt(var + epsilon);
        inv_std[static_cast<size_t>(i)] = s;
        for (int j = 0; j < n; ++j) {
            xhat.at(i, j) = (x.at(i, j) - mean) * s;
            y.at(i, j) = gain.data()[j] * xhat.at(i, j) + bias.data()[j];
        }
    }
    return record("layer_norm", y, {x, gain, bias},
                  [x, gain, bias, y, xhat, inv_std]() mutable {
        if (!y.has_grad()) return;
        const int m = x.rows(), n = x.cols();
        for (int i = 0; i < m; ++i) {
            const double* gy = y.grad() + static_cast<size_t>(i) * n;
            if (gain.requires_grad()) {
                gain.ensure_grad();
                for (int j = 0; j < n; ++j) gain.grad()[j] += gy[j] * xhat.at(i, j);
            }
            if (bias.requires_grad()) {
                bias.ensure_grad();
                for (int j = 0; j < n; ++j) bias.grad()[j] += gy[j];
            }
            if (x.requires_grad()) {
                x.ensure_grad();
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dxhat = gy[j] * gain.data()[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat.at(i, j);
                }
                mean_dxhat /= n;
                mean_dxhat_xhat /= n;
                const double s = inv_std[static_cast<size_t>(i)];
                for (int j = 0; j < n; ++j) {
                    const double dxhat = gy[j] * gain.data()[j];
                    x.grad()[static_cast<size_t>(i) * n + j] +=
                        s * (dxhat - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
                }
            }
        }
    });
}

Tensor Graph::gelu(const Tensor& x) {
    check_open("gelu");
    Tensor y = x.clone();
    y.set_requires_grad(false);
    for (double& v : y.vec()) v = gelu_value(v);
    return record("gelu", y, {x}, [x, y]() mutable {
        if (!y.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        for (int i = 0; i < x.size(); ++i)
            x.grad()[i] += y.grad()[i] * gelu_derivative(x.data()[i]);
    });
}

Tensor Graph::gather_rows(const Tensor& table, const std::vector<int>& ids) {
    check_open("gather_rows");
    require(table.ndim() == 2, "gather_rows: table must be 2-D");
    require(!ids.empty(), "gather_rows: ids must be nonempty");
    const int n = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= table.rows()) {
            throw std::out_of_range("gather_rows: id out of range");
        }
    }
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), n});
    for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < n; ++j)
            out.at(static_cast<int>(i), j) = table.at(ids[i], j);
    return record("gather_rows", out, {table}, [table, out, ids]() mutable {
        if (!out.has_grad() || !table.requires_grad()) return;
        table.ensure_grad();
        const int n = table.cols();
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < n; ++j)
                table.grad()[static_cast<size_t>(ids[i]) * n + j] +=
                    out.grad()[i * static_cast<size_t>(n) + j];
    });
}

Tensor Graph::concat_rows(const Tensor& a, const Tensor& b) {
    check_open("concat_rows");
    require(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.cols(),
            "concat_rows: column counts must match");
    const int n = a.cols();
    Tensor out = Tensor::zeros({a.rows() + b.rows(), n});
    std::copy(a.data(), a.data() + a.size(), out.data());
    std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
    return record("concat_rows", out, {a, b}, [a, b, out]() mutable {
        if (!out.has_grad()) return;
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < b.size(); ++i) b.grad()[i] += out.grad()[a.size() + i];
        }
    });
}

Tensor Graph::slice_rows(const Tensor& x, int start, int len) {
    check_open("slice_rows");
    require(x.ndim() == 2, "slice_rows: expects a 2-D tensor");
    require(start >= 0 && len > 0 && start + len <= x.rows(), "slice_rows: range out of bounds");
    const int n = x.cols();
    Tensor out = Tensor::zeros({len, n});
    std::copy(x.data() + static_cast<size_t>(start) * n,
              x.data() + static_cast<size_t>(start + len) * n, out.data());
    return record("slice_rows", out, {x}, [x, out, start]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        const size_t offset = static_cast<size_t>(start) * x.cols();
        for (int i = 0; i < out.size(); ++i) x.grad()[offset + i] += out.grad()[i];
    });
}

Tensor Graph::slice_cols(const Tensor& x, int start, int len) {
    check_open("slice_cols");
    require(x.ndim() == 2, "slice_cols: expects a 2-D tensor");
    require(start >= 0 && len > 0 && start + len <= x.cols(), "slice_cols: range out of bounds");
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
    return record("slice_cols", out, {x}, [x, out, start, len]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        const int m = x.rows(), n = x.cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                x.grad()[static_cast<size_t>(i) * n + start + j] +=
                    out.grad()[static_cast<size_t>(i) * len + j];
    });
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
    check_open("concat_cols");
    require(!parts.empty(), "concat_cols: needs at least one part");
    const int m = parts.front().rows();
    int total = 0;
    for (const Tensor& p : parts) {
        require(p.ndim() == 2 && p.rows() == m, "concat_cols: row counts must match");
        total += p.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    int col = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j) out.at(i, col + j) = p.at(i, j);
        col += p.cols();
    }
    std::vector<Tensor> inputs = parts;
    return record("concat_cols", out, inputs, [inputs, out]() mutable {
        if (!out.has_grad()) return;
        const int m = out.rows(), total = out.cols();
        int col = 0;
        for (Tensor p : inputs) {
            if (p.requires_grad()) {
                p.ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < p.cols(); ++j)
                        p.grad()[static_cast<size_t>(i) * p.cols() + j] +=
                            out.grad()[static_cast<size_t>(i) * total + col + j];
            }
            col += p.cols();
        }
    });
}

Tensor Graph::sum(const Tensor& x) {
    check_open("sum");
    double total = 0.0;
    for (double v : x.vec()) total += v;
    Tensor out = Tensor::from_data({1}, {total});
    return record("sum", out, {x}, [x, out]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        const double g = out.grad()[0];
        for (int i = 0; i < x.size(); ++i) x.grad()[i] += g;
    });
}

Tensor Graph::cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    check_open("cross_entropy");
    require(logits.ndim() == 2, "cross_entropy: logits must be 2-D");
    require(static_cast<int>(targets.size()) == logits.rows(),
            "cross_entropy: one target per logits row");
    const int m = logits.rows(), n = logits.cols();
    for (int t : targets) {
        if (t < 0 || t >= n) {
            throw std::out_of_range("cross_entropy: target id out of range");
        }
    }
    if (!logits.all_finite()) {
        throw numeric_error("cross_entropy: non-finite logits");
    }
    // Explicit log-sum-exp keeps the loss stable for large margins.
    Tensor probs = Tensor::zeros({m, n});
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, logits.at(i, j));
        double total = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(logits.at(i, j) - mx);
            probs.at(i, j) = e;
            total += e;
        }
        for (int j = 0; j < n; ++j) probs.at(i, j) /= total;
        loss += mx + std::log(total) - logits.at(i, targets[static_cast<size_t>(i)]);
    }
    Tensor out = Tensor::from_data({1}, {loss / m});
    return record("cross_entropy", out, {logits}, [logits, out, probs, targets]() mutable {
        if (!out.has_grad() || !logits.requires_grad()) return;
        logits.ensure_grad();
        const int m = logits.rows(), n = logits.cols();
        const double g = out.grad()[0] / m;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j)
                logits.grad()[static_cast<size_t>(i) * n + j] += g * probs.at(i, j);
            logits.grad()[static_cast<size_t>(i) * n + targets[static_cast<size_t>(i)]] -= g;
        }
    });
}

void Graph::backward(const Tensor& loss) {
    if (consumed_ || ops_.empty()) {
        throw std::logic_error("Graph::backward: no recorded graph");
    }
    if (loss.size() != 1) {
        throw std::invalid_argument("Graph::backward: loss must be scalar");
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("Graph::backward: loss does not depend on any parameter");
    }
    Tensor seed = loss;
    seed.ensure_grad();
    seed.grad()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        it->backward();
    }
    consumed_ = true;
    ops_.clear();
    retained_.clear();
}

}  // namespace causalab::numkit
