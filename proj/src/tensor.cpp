#include "causalab/tensor.hpp"

#include <cmath>

#include "causalab/rng.hpp"

namespace causalab::numkit {

namespace {

size_t shape_product(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 3) {
        throw std::invalid_argument("Tensor: shape must have 1..3 dims");
    }
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("Tensor: dims must be positive");
        }
        n *= static_cast<size_t>(d);
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto s = std::make_shared<Storage>();
    s->data.assign(shape_product(shape), 0.0);
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.vec()) {
        x = value;
    }
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_product(shape) != data.size()) {
        throw std::invalid_argument("Tensor: data length does not match shape");
    }
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->data = std::move(data);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.vec()) {
        x = rng.normal(0.0, stddev);
    }
    return t;
}

int Tensor::rows() const {
    return storage_->shape[0];
}

int Tensor::cols() const {
    const auto& s = storage_->shape;
    return s.size() == 1 ? s[0] : s[s.size() - 1];
}

double& Tensor::at3(int i, int j, int k) {
    assert(ndim() == 3);
    const auto& s = storage_->shape;
    assert(i >= 0 && i < s[0] && j >= 0 && j < s[1] && k >= 0 && k < s[2]);
    return storage_->data[(static_cast<size_t>(i) * s[1] + j) * s[2] + k];
}

double Tensor::at3(int i, int j, int k) const {
    return const_cast<Tensor*>(this)->at3(i, j, k);
}

double Tensor::scalar() const {
    if (size() != 1) {
        throw std::invalid_argument("Tensor::scalar: tensor has more than one element");
    }
    return storage_->data[0];
}

void Tensor::ensure_grad() {
    if (storage_->grad.empty()) {
        storage_->grad.assign(storage_->data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    if (!storage_->grad.empty()) {
        storage_->grad.assign(storage_->data.size(), 0.0);
    }
}

void Tensor::drop_grad() {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
    auto s = std::make_shared<Storage>();
    s->shape = storage_->shape;
    s->data = storage_->data;
    s->requires_grad = storage_->requires_grad;
    return Tensor(std::move(s));
}

bool Tensor::all_finite() const {
    for (double x : storage_->data) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

void Tensor::check_finite(const std::string& where) const {
    if (!all_finite()) {
        throw numeric_error("non-finite value in " + where);
    }
}

Tensor vmatmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("vmatmul: inner dimensions do not match");
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            for (int j = 0; j < n; ++j) {
                c.at(i, j) += av * b.at(p, j);
            }
        }
    }
    return c;
}

Tensor vmatmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("vmatmul_nt: inner dimensions do not match");
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += a.at(i, p) * b.at(j, p);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

Tensor vtranspose(const Tensor& a) {
    if (a.ndim() != 2) {
        throw std::invalid_argument("vtranspose: expects a 2-D tensor");
    }
    Tensor t = Tensor::zeros({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            t.at(j, i) = a.at(i, j);
        }
    }
    return t;
}

}  // namespace causalab::numkit
