#pragma once

#include <cassert>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalab::numkit {

class Rng;

// Raised when an op produces or consumes non-finite values.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major float64 tensor (2-D or 3-D; 1-D treated as a row vector).
// Copies share storage; clone() detaches. Gradient buffers live next to the
// data so parameters keep accumulating across forward graphs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return storage_ != nullptr; }
    const std::vector<int>& shape() const { return storage_->shape; }
    int ndim() const { return static_cast<int>(storage_->shape.size()); }
    int size() const { return static_cast<int>(storage_->data.size()); }
    int rows() const;
    int cols() const;

    double* data() { return storage_->data.data(); }
    const double* data() const { return storage_->data.data(); }
    std::vector<double>& vec() { return storage_->data; }
    const std::vector<double>& vec() const { return storage_->data; }

    double& at(int r, int c) {
        assert(ndim() == 2 && r >= 0 && r < rows() && c >= 0 && c < cols());
        return storage_->data[static_cast<size_t>(r) * cols() + c];
    }
    double at(int r, int c) const {
        assert(ndim() == 2 && r >= 0 && r < rows() && c >= 0 && c < cols());
        return storage_->data[static_cast<size_t>(r) * cols() + c];
    }
    double& at3(int i, int j, int k);
    double at3(int i, int j, int k) const;
    double scalar() const;

    bool requires_grad() const { return storage_ && storage_->requires_grad; }
    void set_requires_grad(bool v) { storage_->requires_grad = v; }
    bool has_grad() const { return storage_ && !storage_->grad.empty(); }
    double* grad() { return storage_->grad.data(); }
    const double* grad() const { return storage_->grad.data(); }
    std::vector<double>& grad_vec() { return storage_->grad; }
    void ensure_grad();
    void zero_grad();
    void drop_grad();

    Tensor clone() const;
    bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }
    bool same_shape(const Tensor& other) const { return shape() == other.shape(); }
    bool all_finite() const;
    void check_finite(const std::string& where) const;

private:
    struct Storage {
        std::vector<int> shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> storage_;
    explicit Tensor(std::shared_ptr<Storage> s) : storage_(std::move(s)) {}
};

// Value-level matrix helpers (no taping), shared with analysis code.
Tensor vmatmul(const Tensor& a, const Tensor& b);
Tensor vmatmul_nt(const Tensor& a, const Tensor& b);
Tensor vtranspose(const Tensor& a);

}  // namespace causalab::numkit
