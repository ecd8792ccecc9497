#pragma once

#include <functional>
#include <string>
#include <vector>

#include "causalab/tensor.hpp"

namespace causalab::numkit {

// Reverse-mode tape recorded per forward pass. Ops are replayed in reverse
// creation order on backward(), which is a valid reverse-topological order
// because every output is created after its inputs. The tape is consumed by
// backward(); a second call is a state error.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // C[m,n] = A[m,k] · B[k,n]
    Tensor matmul(const Tensor& a, const Tensor& b);
    // C[m,n] = A[m,k] · B[n,k]ᵀ
    Tensor matmul_nt(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double c);
    // X[m,n] + row vector b[n] broadcast over rows.
    Tensor add_rowvec(const Tensor& x, const Tensor& b);
    // Row-wise softmax, stabilized by row-max subtraction.
    Tensor softmax_rows(const Tensor& x);
    // Per-row normalization to zero mean / unit variance, then gain/bias.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      double epsilon = 1e-5);
    Tensor gelu(const Tensor& x);
    // out[i,:] = table[ids[i],:]
    Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
    Tensor concat_rows(const Tensor& a, const Tensor& b);
    Tensor slice_rows(const Tensor& x, int start, int len);
    Tensor slice_cols(const Tensor& x, int start, int len);
    Tensor concat_cols(const std::vector<Tensor>& parts);
    Tensor sum(const Tensor& x);
    // Mean over rows of -log softmax(logits)[target]. Scalar output.
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

    // Seeds d(loss)/d(loss) = 1 and walks the tape once, accumulating into
    // the grad buffers of every requires_grad tensor. Consumes the tape.
    void backward(const Tensor& loss);

    size_t op_count() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Op {
        const char* name;
        std::function<void()> backward;
    };
    std::vector<Op> ops_;
    std::vector<Tensor> retained_;
    bool consumed_ = false;

    Tensor record(const char* name, Tensor out, const std::vector<Tensor>& inputs,
                  std::function<void()> bwd);
    void check_open(const char* name) const;
};

}  // namespace causalab::numkit
