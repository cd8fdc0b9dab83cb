#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "modalmend/graph.hpp"
#include "modalmend/optim.hpp"
#include "modalmend/rng.hpp"

using namespace modalmend;

namespace {

using Builder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double eval_root(const std::vector<Tensor>& leaves, const Builder& build) {
    Graph g;
    std::vector<NodeId> ids;
    ids.reserve(leaves.size());
    for (const Tensor& t : leaves) ids.push_back(g.leaf(t, true));
    return g.value(build(g, ids)).item();
}

// Central finite differences against reverse-mode gradients, h = 1e-6,
// relative tolerance 1e-5. This is the independent oracle for every
// primitive and for random composite graphs.
void check_gradients(std::vector<Tensor> leaves, const Builder& build, double h = 1e-6, double tol = 1e-5) {
    Graph g;
    std::vector<NodeId> ids;
    for (const Tensor& t : leaves) ids.push_back(g.leaf(t, true));
    const NodeId root = build(g, ids);
    REQUIRE(g.value(root).size() == 1);
    g.backward(root);

    for (size_t li = 0; li < leaves.size(); ++li) {
        const Tensor& analytic = g.grad(ids[li]);
        for (int64_t i = 0; i < leaves[li].size(); ++i) {
            const double orig = leaves[li][i];
            leaves[li][i] = orig + h;
            const double fp = eval_root(leaves, build);
            leaves[li][i] = orig - h;
            const double fm = eval_root(leaves, build);
            leaves[li][i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic.empty() ? 0.0 : analytic[i];
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            REQUIRE(std::abs(fd - an) / denom <= tol);
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// forward semantics

TEST_CASE("matmul identity returns the other operand") {
    Rng rng(1);
    Tensor eye({3, 3});
    for (int64_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    Tensor a = random_tensor({3, 3}, rng);
    Graph g;
    NodeId r = g.matmul(g.constant(eye), g.constant(a));
    for (int64_t i = 0; i < 9; ++i) CHECK(g.value(r)[i] == doctest::Approx(a[i]).epsilon(1e-15));
}

TEST_CASE("sigmoid and softmax analytic points") {
    Graph g;
    CHECK(g.value(g.sigmoid(g.constant_scalar(0.0))).item() == doctest::Approx(0.5));
    NodeId sm = g.softmax(g.constant(Tensor({3})));
    for (int64_t i = 0; i < 3; ++i) CHECK(g.value(sm)[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("shape mismatch errors name the operation and both shapes") {
    Graph g;
    NodeId a = g.constant(Tensor({2, 3}));
    NodeId b = g.constant(Tensor({4, 5}));
    try {
        g.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph g;
    NodeId a = g.leaf(Tensor({2, 2}), true);
    CHECK_THROWS_AS(g.backward(a), ShapeError);
}

TEST_CASE("forward evaluation is bitwise deterministic") {
    Rng rng(7);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    auto run = [&]() {
        Graph g;
        NodeId r = g.layer_norm(g.sigmoid(g.matmul(g.constant(a), g.softmax(g.constant(b)))));
        return g.value(r);
    };
    Tensor r1 = run();
    Tensor r2 = run();
    REQUIRE(r1.size() == r2.size());
    CHECK(std::memcmp(r1.data(), r2.data(), sizeof(double) * r1.size()) == 0);
}

TEST_CASE("layer_norm normalizes each trailing vector") {
    Rng rng(11);
    Tensor x = random_tensor({6, 32}, rng, -3.0, 5.0);
    Graph g;
    NodeId y = g.layer_norm(g.constant(x));
    for (int64_t r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (int64_t i = 0; i < 32; ++i) mean += g.value(y)[r * 32 + i];
        mean /= 32.0;
        for (int64_t i = 0; i < 32; ++i) {
            const double d = g.value(y)[r * 32 + i] - mean;
            var += d * d;
        }
        var /= 32.0;
        CHECK(std::abs(mean) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("simple analytic derivatives") {
    {
        Graph g;
        NodeId x = g.leaf(Tensor::scalar(3.0), true);
        g.backward(g.mul(x, x));
        CHECK(g.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    {
        Graph g;
        NodeId x = g.leaf(Tensor::scalar(0.0), true);
        g.backward(g.sigmoid(x));
        CHECK(g.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-12));
    }
}

// ---------------------------------------------------------------------------
// finite-difference oracle, per primitive

TEST_CASE("gradcheck: elementwise binary ops with every broadcast mode") {
    Rng rng(21);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor a = random_tensor({3, 4}, rng, 0.3, 1.4);
        Tensor same = random_tensor({3, 4}, rng, 0.3, 1.4);
        Tensor scalar = random_tensor({}, rng, 0.4, 1.2);
        Tensor suffix = random_tensor({4}, rng, 0.3, 1.4);
        Tensor column = random_tensor({3, 1}, rng, 0.3, 1.4);

        auto with = [&](Tensor b, auto opfn) {
            check_gradients({a, std::move(b)}, [opfn](Graph& g, const std::vector<NodeId>& in) {
                return g.mean((g.*opfn)(in[0], in[1]));
            });
        };
        for (auto op : {&Graph::add, &Graph::sub, &Graph::mul, &Graph::div}) {
            with(same, op);
            with(scalar, op);
            with(suffix, op);
            with(column, op);
        }
        Tensor deep = random_tensor({2, 3, 4}, rng, 0.3, 1.4);
        check_gradients({deep, suffix}, [](Graph& g, const std::vector<NodeId>& in) {
            return g.mean(g.mul(in[0], in[1]));
        });
    }
}

TEST_CASE("gradcheck: elementwise unary ops") {
    Rng rng(22);
    Tensor pos = random_tensor({3, 5}, rng, 0.2, 2.0);
    Tensor gen = random_tensor({3, 5}, rng, -2.0, 2.0);
    // keep relu/abs inputs away from their kink
    for (int64_t i = 0; i < gen.size(); ++i) {
        if (std::abs(gen[i]) < 0.05) gen[i] += 0.1;
    }
    auto unary = [&](const Tensor& x, auto opfn) {
        check_gradients({x}, [opfn](Graph& g, const std::vector<NodeId>& in) {
            return g.mean((g.*opfn)(in[0]));
        });
    };
    unary(gen, &Graph::exp);
    unary(pos, &Graph::log);
    unary(pos, &Graph::sqrt);
    unary(gen, &Graph::abs);
    unary(gen, &Graph::relu);
    unary(gen, &Graph::sigmoid);
    check_gradients({gen}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.mean(g.affine(in[0], 1.7, -0.3));
    });
    check_gradients({gen}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.mean(g.clamp(in[0], -10.0, 10.0));  // all strictly inside
    });
}

TEST_CASE("gradcheck: matmul in all rank combinations") {
    Rng rng(23);
    check_gradients({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) { return g.mean(g.matmul(in[0], in[1])); });
    check_gradients({random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) { return g.mean(g.matmul(in[0], in[1])); });
    check_gradients({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)},
                    [](Graph& g, const std::vector<NodeId>& in) { return g.mean(g.matmul(in[0], in[1])); });
}

TEST_CASE("gradcheck: softmax and layer_norm") {
    Rng rng(24);
    for (Shape s : {Shape{6}, Shape{3, 6}, Shape{2, 3, 6}}) {
        check_gradients({random_tensor(s, rng, -2.0, 2.0)},
                        [&rng](Graph& g, const std::vector<NodeId>& in) {
                            return g.mean(g.softmax(in[0]));
                        });
        // weight the outputs so the softmax gradient is not identically zero
        Tensor w = random_tensor(s, rng);
        check_gradients({random_tensor(s, rng, -2.0, 2.0)},
                        [w](Graph& g, const std::vector<NodeId>& in) {
                            return g.mean(g.mul(g.softmax(in[0]), g.constant(w)));
                        });
        check_gradients({random_tensor(s, rng, -2.0, 2.0)},
                        [w](Graph& g, const std::vector<NodeId>& in) {
                            return g.mean(g.mul(g.layer_norm(in[0]), g.constant(w)));
                        });
    }
}

TEST_CASE("gradcheck: reductions and norms") {
    Rng rng(25);
    Tensor x = random_tensor({4, 3}, rng, 0.4, 1.6);
    check_gradients({x}, [](Graph& g, const std::vector<NodeId>& in) { return g.sum(in[0]); });
    check_gradients({x}, [](Graph& g, const std::vector<NodeId>& in) { return g.mean(in[0]); });
    check_gradients({x}, [](Graph& g, const std::vector<NodeId>& in) { return g.mean(g.sum_axis(in[0], 0)); });
    check_gradients({x}, [](Graph& g, const std::vector<NodeId>& in) { return g.mean(g.sum_axis(in[0], 1)); });
    check_gradients({x}, [](Graph& g, const std::vector<NodeId>& in) { return g.frobenius(in[0]); });
}

TEST_CASE("gradcheck: structural ops") {
    Rng rng(26);
    Tensor x = random_tensor({2, 4, 3}, rng);
    Tensor w = random_tensor({2, 4, 3}, rng);
    check_gradients({x}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.mean(g.reshape(in[0], {4, 6}));
    });
    check_gradients({x}, [w](Graph& g, const std::vector<NodeId>& in) {
        NodeId s = g.slice(in[0], 1, 1, 2);
        return g.mean(g.mul(s, g.slice(g.constant(w), 1, 0, 2)));
    });
    for (int64_t axis = 0; axis < 3; ++axis) {
        check_gradients({x, w}, [axis](Graph& g, const std::vector<NodeId>& in) {
            return g.mean(g.concat({in[0], in[1]}, axis));
        });
    }
    check_gradients({random_tensor({3, 2}, rng)}, [w](Graph& g, const std::vector<NodeId>& in) {
        return g.mean(g.mul(g.repeat_rows(in[0], 4), g.constant(Tensor::full({4, 3, 2}, 0.7))));
    });
    check_gradients({random_tensor({4, 5}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.mean(g.transpose(in[0]));
    });
    check_gradients({x}, [w](Graph& g, const std::vector<NodeId>& in) {
        return g.mean(g.mul(g.transpose_last2(in[0]), g.transpose_last2(g.constant(w))));
    });
}

TEST_CASE("gradcheck: im2col against finite differences") {
    Rng rng(27);
    Tensor x = random_tensor({2, 2, 5, 5}, rng);
    Tensor w = random_tensor({2, 9, 2 * 3 * 3}, rng);
    check_gradients({x}, [w](Graph& g, const std::vector<NodeId>& in) {
        NodeId cols = g.im2col(in[0], 3, 3, 2, 1);
        return g.mean(g.mul(cols, g.constant(w)));
    });
}

TEST_CASE("threshold_st forward is exact and backward follows the surrogate contract") {
    // forward: strict > keeps the value, <= zeroes it
    Graph g;
    Tensor x({2, 2}, {0.4, 0.6, 0.5, 0.9});
    NodeId xv = g.leaf(x, true);
    NodeId lam = g.leaf(Tensor::scalar(0.5), true);
    const double tau = 0.1;
    NodeId out = g.threshold_st(xv, lam, tau);
    CHECK(g.value(out)[0] == 0.0);
    CHECK(g.value(out)[1] == 0.6);
    CHECK(g.value(out)[2] == 0.0);  // boundary: 0.5 is not > 0.5
    CHECK(g.value(out)[3] == 0.9);

    g.backward(g.sum(out));
    // kept entries pass gradient 1 through, dropped entries get 0
    CHECK(g.grad(xv)[0] == 0.0);
    CHECK(g.grad(xv)[1] == 1.0);
    CHECK(g.grad(xv)[2] == 0.0);
    CHECK(g.grad(xv)[3] == 1.0);
    // lambda gradient: sum_i d/dL [x_i * sigmoid((x_i - L)/tau)]
    double expect = 0.0;
    for (double v : {0.4, 0.6, 0.5, 0.9}) {
        const double s = 1.0 / (1.0 + std::exp(-(v - 0.5) / tau));
        expect += -v * s * (1.0 - s) / tau;
    }
    CHECK(g.grad(lam)[0] == doctest::Approx(expect).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// random composite graphs

namespace {

// Random DAGs over shape-preserving square-matrix ops, dims <= 8, <= 10
// interior nodes. Inputs are steered away from kinks and singularities so
// that central differences are trustworthy.
void random_composite_check(uint64_t seed) {
    Rng rng(seed);
    const int64_t n = rng.uniform_int(2, 8);
    const int n_leaves = static_cast<int>(rng.uniform_int(1, 3));
    const int n_ops = static_cast<int>(rng.uniform_int(3, 10));
    std::vector<Tensor> leaves;
    for (int i = 0; i < n_leaves; ++i) leaves.push_back(random_tensor({n, n}, rng, -1.2, 1.2));
    std::vector<int> op_choices, arg_choices;
    for (int i = 0; i < n_ops; ++i) {
        op_choices.push_back(static_cast<int>(rng.uniform_int(0, 999)));
        arg_choices.push_back(static_cast<int>(rng.uniform_int(0, 999)));
    }

    auto build = [&, n](Graph& g, const std::vector<NodeId>& ids) {
        std::vector<NodeId> pool(ids);
        NodeId curr = ids[0];
        for (int i = 0; i < n_ops; ++i) {
            const NodeId other = pool[static_cast<size_t>(arg_choices[i]) % pool.size()];
            const Tensor& cv = g.value(curr);
            double min_abs = 1e9, max_abs = 0.0;
            for (int64_t k = 0; k < cv.size(); ++k) {
                min_abs = std::min(min_abs, std::abs(cv[k]));
                max_abs = std::max(max_abs, std::abs(cv[k]));
            }
            int pick = op_choices[i] % 10;
            // avoid kinks and blowups: fall back to a smooth op when unsafe
            if ((pick == 4 || pick == 5) && min_abs < 1e-2) pick = 6;
            if (pick == 3 && max_abs > 3.0) pick = 7;
            switch (pick) {
                case 0: curr = g.add(curr, other); break;
                case 1: curr = g.sub(curr, other); break;
                case 2: curr = g.mul(curr, other); break;
                case 3: curr = g.affine(g.matmul(curr, other), 1.0 / static_cast<double>(n), 0.0); break;
                case 4: curr = g.relu(curr); break;
                case 5: curr = g.abs(curr); break;
                case 6: curr = g.sigmoid(curr); break;
                case 7: curr = g.softmax(curr); break;
                case 8: curr = g.layer_norm(curr); break;
                case 9: curr = g.transpose(curr); break;
            }
            const Tensor& nv = g.value(curr);
            double mx = 0.0;
            for (int64_t k = 0; k < nv.size(); ++k) mx = std::max(mx, std::abs(nv[k]));
            if (mx > 50.0) curr = g.affine(curr, 1.0 / mx, 0.0);
            pool.push_back(curr);
        }
        return g.mean(curr);
    };
    check_gradients(leaves, build);
}

} // namespace

TEST_CASE("gradcheck: 100 random composite graphs") {
    for (uint64_t s = 0; s < 100; ++s) random_composite_check(1000 + s);
}

// ---------------------------------------------------------------------------
// Adam

TEST_CASE("adam first step moves by ~lr with unit gradient") {
    ParamStore store;
    Rng rng(3);
    Parameter* p = store.create_const("w", {1}, 2.0);
    Adam opt({p}, AdamConfig{});
    p->grad[0] = 1.0;
    opt.step();
    // bias-corrected mhat = 1, vhat = 1 -> step = lr / (1 + eps)
    CHECK(p->value[0] == doctest::Approx(2.0 - 0.001).epsilon(1e-6));
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    ParamStore store;
    Parameter* p = store.create_const("w", {4}, 1.5);
    Adam opt({p}, AdamConfig{});
    for (int i = 0; i < 5; ++i) {
        p->zero_grad();
        opt.step();
    }
    for (int64_t i = 0; i < 4; ++i) CHECK(p->value[i] == 1.5);
}

TEST_CASE("adam matches a scalar reference recurrence on f(x)=x^2") {
    ParamStore store;
    Parameter* p = store.create_const("x", {1}, 1.0);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({p}, cfg);

    // independent scalar recurrence
    double xr = 1.0, m = 0.0, v = 0.0;
    double prev = std::abs(p->value[0]);
    for (int t = 1; t <= 10; ++t) {
        const double g = 2.0 * p->value[0];
        p->zero_grad();
        p->grad[0] = g;
        opt.step();

        const double gr = 2.0 * xr;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        xr -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

        CHECK(p->value[0] == doctest::Approx(xr).epsilon(1e-12));
        CHECK(std::abs(p->value[0]) < prev);
        prev = std::abs(p->value[0]);
    }
}

TEST_CASE("adam raises on NaN gradient naming the parameter") {
    ParamStore store;
    Parameter* p = store.create_const("encoder.w1", {2}, 0.0);
    Adam opt({p}, AdamConfig{});
    p->grad[0] = std::nan("");
    try {
        opt.step();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("encoder.w1") != std::string::npos);
    }
}

TEST_CASE("gradient clipping caps the global norm") {
    ParamStore store;
    Parameter* a = store.create_const("a", {3}, 0.0);
    a->grad[0] = 3.0;
    a->grad[1] = 4.0;
    const double pre = clip_global_norm({a}, 5.0);
    CHECK(pre == doctest::Approx(5.0));
    const double pre2 = clip_global_norm({a}, 1.0);
    CHECK(pre2 == doctest::Approx(5.0));
    double sq = 0.0;
    for (int64_t i = 0; i < 3; ++i) sq += a->grad[i] * a->grad[i];
    CHECK(std::sqrt(sq) == doctest::Approx(1.0));
}
