#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "causalab/gradcheck.hpp"
#include "causalab/graph.hpp"
#include "causalab/rng.hpp"
#include "causalab/tensor.hpp"

using namespace causalab::numkit;

namespace {

// Independent oracle: naive triple loop, no shared code with Graph::matmul.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::zeros({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (int p = 0; p < a.cols(); ++p) {
                acc += a.at(i, p) * b.at(p, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

// Independent oracle for cross entropy: direct log-sum-exp per row.
double cross_entropy_oracle(const Tensor& logits, const std::vector<int>& targets) {
    double total = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < logits.cols(); ++j) sum += std::exp(logits.at(i, j) - mx);
        total += mx + std::log(sum) - logits.at(i, targets[static_cast<size_t>(i)]);
    }
    return total / logits.rows();
}

}  // namespace

TEST_CASE("matmul identity and annihilation") {
    Graph g;
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor c = g.matmul(eye, m);
    CHECK(c.at(0, 0) == 1.0);
    CHECK(c.at(0, 1) == 2.0);
    CHECK(c.at(1, 0) == 3.0);
    CHECK(c.at(1, 1) == 4.0);

    Tensor a = Tensor::from_data({1, 2}, {1, 0});
    Tensor b = Tensor::from_data({2, 1}, {0, 5});
    CHECK(g.matmul(a, b).at(0, 0) == 0.0);
}

TEST_CASE("matmul vs triple-loop oracle") {
    Rng rng(11);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0);
    Graph g;
    Tensor c = g.matmul(a, b);
    Tensor want = matmul_oracle(a, b);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
            CHECK(std::abs(c.at(i, j) - want.at(i, j)) < 1e-12);
        }
    }
}

TEST_CASE("matmul shape mismatch is a dimension error") {
    Graph g;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(g.matmul(a, b), std::invalid_argument);
}

TEST_CASE("softmax rows: symmetry and analytic shift") {
    Graph g;
    Tensor x = Tensor::from_data({1, 3}, {0, 0, 0});
    Tensor y = g.softmax_rows(x);
    for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const double c = 2.7;
    Tensor x2 = Tensor::from_data({1, 2}, {c, c + std::log(3.0)});
    Tensor y2 = g.softmax_rows(x2);
    CHECK(y2.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y2.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one (fuzzed)") {
    Rng rng(5);
    for (int rep = 0; rep < 1000; ++rep) {
        Graph g;
        Tensor x = Tensor::randn({1, 5}, rng, 3.0);
        Tensor y = g.softmax_rows(x);
        double total = 0.0;
        for (int j = 0; j < 5; ++j) total += y.at(0, j);
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
    Graph g;
    Tensor x = Tensor::randn({4, 5}, rng, 2.0);
    Tensor y = g.softmax_rows(x);
    for (int i = 0; i < 4; ++i) {
        double total = 0.0;
        for (int j = 0; j < 5; ++j) total += y.at(i, j);
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("softmax shift stability") {
    Rng rng(13);
    for (double c : {1.0, 10.0, 500.0}) {
        Tensor x = Tensor::randn({2, 6}, rng, 2.0);
        Tensor xs = x.clone();
        for (double& v : xs.vec()) v += c;
        Graph g;
        Tensor y = g.softmax_rows(x);
        Tensor ys = g.softmax_rows(xs);
        for (int i = 0; i < y.size(); ++i) {
            CHECK(std::abs(y.data()[i] - ys.data()[i]) < 1e-12);
        }
    }
}

TEST_CASE("softmax NaN input is a numeric error") {
    Graph g;
    Tensor x = Tensor::zeros({1, 2});
    x.data()[0] = std::nan("");
    CHECK_THROWS_AS(g.softmax_rows(x), numeric_error);
}

TEST_CASE("layer_norm basics") {
    Graph g;
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});

    Tensor constant = Tensor::full({1, 4}, 3.5);
    Tensor y = g.layer_norm(constant, gain, bias);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(y.at(0, j)) < 1e-9);

    Tensor pm = Tensor::from_data({1, 2}, {1.0, -1.0});
    Tensor gain2 = Tensor::full({2}, 1.0);
    Tensor bias2 = Tensor::zeros({2});
    Tensor y2 = g.layer_norm(pm, gain2, bias2);
    CHECK(y2.at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y2.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));

    Rng rng(3);
    Tensor x = Tensor::randn({1, 32}, rng, 2.0);
    Tensor gain3 = Tensor::full({32}, 1.0);
    Tensor bias3 = Tensor::zeros({32});
    Tensor y3 = g.layer_norm(x, gain3, bias3);
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 32; ++j) mean += y3.at(0, j);
    mean /= 32;
    for (int j = 0; j < 32; ++j) var += (y3.at(0, j) - mean) * (y3.at(0, j) - mean);
    var /= 32;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-4);
}

TEST_CASE("cross entropy: analytic and oracle cases") {
    // One-hot-correct logits: loss decreases monotonically with margin.
    double prev = 1e9;
    for (double margin : {1.0, 5.0, 10.0}) {
        Graph g;
        Tensor logits = Tensor::from_data({1, 4}, {margin, 0, 0, 0});
        const double loss = g.cross_entropy(logits, {0}).scalar();
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-4);  // margin 10

    Graph g;
    Tensor uniform = Tensor::zeros({1, 4});
    CHECK(g.cross_entropy(uniform, {2}).scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(17);
    Tensor logits = Tensor::randn({5, 7}, rng, 2.0);
    std::vector<int> targets = {3, 0, 6, 2, 5};
    Graph g2;
    const double got = g2.cross_entropy(logits, targets).scalar();
    CHECK(std::abs(got - cross_entropy_oracle(logits, targets)) < 1e-10);

    Graph g3;
    CHECK_THROWS_AS(g3.cross_entropy(logits, {3, 0, 6, 2, 7}), std::out_of_range);
}

TEST_CASE("backward: sum and dot gradients") {
    Rng rng(23);
    Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
    Graph g;
    Tensor loss = g.sum(x);
    g.backward(loss);
    for (int i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);

    Tensor a = Tensor::randn({1, 6}, rng, 1.0, true);
    Tensor b = Tensor::randn({1, 6}, rng, 1.0);
    Graph g2;
    Tensor dot = g2.sum(g2.mul(a, b));
    g2.backward(dot);
    for (int i = 0; i < 6; ++i) CHECK(a.grad()[i] == doctest::Approx(b.data()[i]).epsilon(1e-15));
}

TEST_CASE("backward without a recorded graph is a state error") {
    Graph g;
    Tensor x = Tensor::from_data({1}, {1.0});
    CHECK_THROWS_AS(g.backward(x), std::logic_error);
}

TEST_CASE("backward twice is a state error") {
    Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
    Graph g;
    Tensor loss = g.sum(x);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), std::logic_error);
}

TEST_CASE("finite differences: quadratic is near-exact") {
    Rng rng(29);
    Tensor x = Tensor::randn({4, 4}, rng, 1.0, true);
    auto fn = [&](bool with_grad) {
        Graph g;
        Tensor loss = g.sum(g.mul(x, x));
        const double v = loss.scalar();
        if (with_grad) g.backward(loss);
        return v;
    };
    const auto result = finite_difference_check(fn, {x}, 1e-5, 64, 1);
    CHECK(result.max_rel_err < 1e-8);
}

TEST_CASE("finite differences: softmax + cross entropy composite") {
    Rng rng(31);
    Tensor w = Tensor::randn({6, 5}, rng, 0.5, true);
    Tensor x = Tensor::randn({3, 6}, rng, 1.0);
    std::vector<int> targets = {1, 4, 0};
    auto fn = [&](bool with_grad) {
        Graph g;
        Tensor logits = g.matmul(x, w);
        Tensor sm = g.softmax_rows(logits);
        Tensor scaled = g.scale(sm, 3.0);
        Tensor loss = g.cross_entropy(scaled, targets);
        const double v = loss.scalar();
        if (with_grad) g.backward(loss);
        return v;
    };
    const auto result = finite_difference_check(fn, {w}, 1e-5, 64, 2);
    CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("gelu, layer_norm, attention-style ops pass finite differences") {
    Rng rng(37);
    Tensor w1 = Tensor::randn({4, 8}, rng, 0.5, true);
    Tensor b1 = Tensor::randn({8}, rng, 0.1, true);
    Tensor gain = Tensor::full({8}, 1.0, true);
    Tensor bias = Tensor::zeros({8}, true);
    Tensor w2 = Tensor::randn({8, 3}, rng, 0.5, true);
    Tensor x = Tensor::randn({5, 4}, rng, 1.0);
    std::vector<int> targets = {0, 2, 1, 2, 0};
    auto fn = [&](bool with_grad) {
        Graph g;
        Tensor h = g.gelu(g.add_rowvec(g.matmul(x, w1), b1));
        Tensor n = g.layer_norm(h, gain, bias);
        Tensor att = g.matmul(g.softmax_rows(g.matmul_nt(n, n)), n);
        Tensor sliced = g.concat_cols({g.slice_cols(att, 0, 4), g.slice_cols(att, 4, 4)});
        Tensor logits = g.matmul(sliced, w2);
        Tensor loss = g.cross_entropy(logits, targets);
        const double v = loss.scalar();
        if (with_grad) g.backward(loss);
        return v;
    };
    const auto result = finite_difference_check(fn, {w1, b1, gain, bias, w2}, 1e-5, 64, 3);
    CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("determinism: same seed reproduces bitwise identical op sequences") {
    auto run = [] {
        Rng rng(99);
        Tensor a = Tensor::randn({4, 4}, rng, 1.0, true);
        Tensor b = Tensor::randn({4, 4}, rng, 1.0);
        Graph g;
        Tensor c = g.softmax_rows(g.matmul(a, b));
        Tensor loss = g.sum(c);
        g.backward(loss);
        std::vector<double> out(c.data(), c.data() + c.size());
        out.insert(out.end(), a.grad(), a.grad() + a.size());
        return out;
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("tensor invariants: grad shape, finiteness state") {
    Tensor t = Tensor::zeros({2, 3}, true);
    t.ensure_grad();
    CHECK(t.has_grad());
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);

    Graph g;
    Tensor inf = Tensor::full({1, 2}, 1.0);
    inf.data()[0] = std::numeric_limits<double>::infinity();
    Tensor other = Tensor::full({1, 2}, 1.0);
    CHECK_THROWS_AS(g.add(inf, other), numeric_error);
}
