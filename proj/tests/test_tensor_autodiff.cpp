#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "orthus/adamw.hpp"
#include "orthus/gradcheck.hpp"
#include "orthus/graph.hpp"
#include "test_util.hpp"

using namespace orthus;
using testutil::bitwise_equal;
using testutil::random_matrix;

namespace {

MatrixX<double> mat(std::initializer_list<std::initializer_list<double>> rows) {
    MatrixX<double> m(Index(rows.size()), Index(rows.begin()->size()));
    Index i = 0;
    for (auto& r : rows) {
        Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

}  // namespace

TEST_CASE("matmul against an identity-padded right factor") {
    Graph<double> g;
    MatrixX<double> a = mat({{1, 2, 3}, {4, 5, 6}});
    // B embeds the 2x2 identity over a zero row, so A*B selects A's first two columns.
    MatrixX<double> b = mat({{1, 0}, {0, 1}, {0, 0}});
    NodeId c = g.matmul(g.constant(a), g.constant(b));
    g.forward();
    CHECK(g.value(c) == a.leftCols(2));
}

TEST_CASE("matmul transpose flags") {
    Rng rng(1);
    auto a = random_matrix<double>(rng, 3, 5);
    auto b = random_matrix<double>(rng, 5, 2);
    Graph<double> g;
    NodeId n1 = g.matmul(g.constant(MatrixX<double>(a.transpose())), g.constant(b), true, false);
    NodeId n2 = g.matmul(g.constant(a), g.constant(MatrixX<double>(b.transpose())), false, true);
    g.forward();
    MatrixX<double> expect = a * b;
    CHECK((g.value(n1) - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g.value(n2) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("row softmax of an all-zero row is uniform") {
    Graph<double> g;
    NodeId y = g.row_softmax(g.constant(MatrixX<double>::Zero(1, 3)));
    g.forward();
    for (int j = 0; j < 3; ++j) CHECK(g.value(y)(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("row softmax rows sum to one for random inputs") {
    Rng rng(2);
    Graph<double> g;
    NodeId y = g.row_softmax(g.constant(random_matrix<double>(rng, 7, 11, 3.0)));
    g.forward();
    for (Index i = 0; i < 7; ++i) CHECK(g.value(y).row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer norm of [1,2,3] matches the closed form") {
    const double eps = 1e-5;
    Graph<double> g;
    NodeId y = g.layer_norm(g.constant(mat({{1, 2, 3}})), g.constant(MatrixX<double>::Ones(1, 3)),
                            g.constant(MatrixX<double>::Zero(1, 3)), eps);
    g.forward();
    // hand oracle: mean 2, population variance 2/3
    double inv = 1.0 / std::sqrt(2.0 / 3.0 + eps);
    CHECK(g.value(y)(0, 0) == doctest::Approx(-inv).epsilon(1e-12));
    CHECK(g.value(y)(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g.value(y)(0, 2) == doctest::Approx(inv).epsilon(1e-12));
    CHECK(g.value(y).row(0).mean() == doctest::Approx(0.0).epsilon(1e-12));
    double var = (g.value(y).row(0).array() - g.value(y).row(0).mean()).square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // off from 1 only by eps
}

TEST_CASE("backward of sum gives ones; quadratic gives 2x") {
    Graph<double> g;
    Graph<double>::Bindings b{{"x", mat({{1, -2, 3}})}};
    NodeId x = g.input("x", 1, 3, true);
    NodeId s = g.sum(g.mul(x, x));
    NodeId plain = g.sum(x);
    g.forward(b);
    g.backward(plain);
    REQUIRE(g.grad(x) != nullptr);
    CHECK(*g.grad(x) == MatrixX<double>::Ones(1, 3));
    g.backward(s);
    CHECK((*g.grad(x) - 2.0 * b["x"]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fan-out accumulates gradients once per use") {
    Graph<double> g;
    Graph<double>::Bindings b{{"x", mat({{2, 5}})}};
    NodeId x = g.input("x", 1, 2, true);
    NodeId y = g.sum(g.add(x, x));
    g.forward(b);
    g.backward(y);
    CHECK(*g.grad(x) == MatrixX<double>(MatrixX<double>::Constant(1, 2, 2.0)));
}

TEST_CASE("gradients are absent on constants and unreached leaves") {
    Graph<double> g;
    Graph<double>::Bindings b{{"x", mat({{1, 2}})}};
    NodeId x = g.input("x", 1, 2, true);
    NodeId c = g.constant(mat({{3, 4}}));
    NodeId loss = g.mean(c);
    g.sum(x);  // reachable from x but not part of the loss
    g.forward(b);
    g.backward(loss);
    CHECK(g.grad(x) == nullptr);
    CHECK(g.grad(c) == nullptr);
}

TEST_CASE("gradcheck: linear layer") {
    Rng rng(3);
    Graph<double> g;
    ParamStore<double> store;
    store.add("W", random_matrix<double>(rng, 6, 4, 0.5));
    store.add("b", random_matrix<double>(rng, 1, 4, 0.5));
    Graph<double>::Bindings bind{{"x", random_matrix<double>(rng, 5, 6)}};
    NodeId x = g.input("x", 5, 6, true);
    NodeId y = g.add(g.matmul(x, g.param("W", 6, 4)), g.param("b", 1, 4));
    NodeId loss = g.mse(y, g.constant(random_matrix<double>(rng, 5, 4)));
    auto rep = grad_check(g, bind, &store, loss);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: softmax cross entropy") {
    Rng rng(4);
    Graph<double> g;
    ParamStore<double> store;
    store.add("W", random_matrix<double>(rng, 6, 9, 0.5));
    Graph<double>::Bindings bind{{"x", random_matrix<double>(rng, 5, 6)}};
    NodeId x = g.input("x", 5, 6, true);
    NodeId logits = g.matmul(x, g.param("W", 6, 9));
    NodeId loss = g.mean(g.cross_entropy(logits, {1, 0, 8, 3, 3}));
    auto rep = grad_check(g, bind, &store, loss);
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("gradcheck: three-layer mlp composite") {
    Rng rng(5);
    Graph<double> g;
    ParamStore<double> store;
    store.add("W1", random_matrix<double>(rng, 6, 8, 0.4));
    store.add("b1", random_matrix<double>(rng, 1, 8, 0.2));
    store.add("W2", random_matrix<double>(rng, 8, 8, 0.4));
    store.add("b2", random_matrix<double>(rng, 1, 8, 0.2));
    store.add("W3", random_matrix<double>(rng, 8, 3, 0.4));
    store.add("b3", random_matrix<double>(rng, 1, 3, 0.2));
    Graph<double>::Bindings bind{{"x", random_matrix<double>(rng, 4, 6)}};
    NodeId x = g.input("x", 4, 6, true);
    NodeId h1 = g.silu(g.add(g.matmul(x, g.param("W1", 6, 8)), g.param("b1", 1, 8)));
    NodeId h2 = g.gelu(g.add(g.matmul(h1, g.param("W2", 8, 8)), g.param("b2", 1, 8)));
    NodeId y = g.add(g.matmul(h2, g.param("W3", 8, 3)), g.param("b3", 1, 3));
    NodeId loss = g.mse(y, g.constant(random_matrix<double>(rng, 4, 3)));
    auto rep = grad_check(g, bind, &store, loss);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: constant loss leaves zero gradients") {
    Graph<double> g;
    Graph<double>::Bindings bind{{"x", mat({{1, 2, 3}})}};
    g.input("x", 1, 3, true);
    NodeId loss = g.mean(g.constant(mat({{7, 9}})));
    auto rep = grad_check(g, bind, nullptr, loss);
    CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("gradcheck: remaining kernels") {
    Rng rng(6);
    Graph<double> g;
    ParamStore<double> store;
    store.add("t", random_matrix<double>(rng, 6, 5, 0.8));
    store.add("g", random_matrix<double>(rng, 1, 5, 0.3));
    store.add("bcol", random_matrix<double>(rng, 4, 1, 0.7));
    Graph<double>::Bindings bind{{"x", random_matrix<double>(rng, 4, 5)}};
    NodeId x = g.input("x", 4, 5, true);
    NodeId gath = g.gather(g.param("t", 6, 5), {5, 0, 0, 2});
    NodeId gamma = g.add(g.param("g", 1, 5), g.constant(MatrixX<double>::Ones(1, 5)));
    NodeId ln = g.layer_norm(g.add(x, gath), gamma, g.constant(MatrixX<double>::Zero(1, 5)));
    NodeId sm = g.row_softmax(g.scale(ln, 1.7));
    NodeId colscaled = g.mul(sm, g.param("bcol", 4, 1));
    NodeId cat = g.concat({g.slice(colscaled, 1, 0, 3), g.slice(colscaled, 1, 2, 3)}, 1);
    NodeId rs = g.row_sum(g.gelu(cat));
    NodeId loss = g.add(g.mean(rs), g.mse(cat, g.constant(random_matrix<double>(rng, 4, 6))));
    auto rep = grad_check(g, bind, &store, g.sum(loss));
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gather accumulates duplicate rows deterministically") {
    Graph<double> g;
    ParamStore<double> store;
    store.add("t", mat({{1, 2}, {3, 4}, {5, 6}}));
    NodeId gth = g.gather(g.param("t", 3, 2), {0, 0, 2});
    NodeId loss = g.sum(gth);
    g.forward({}, &store);
    g.backward(loss);
    NodeId tnode = 0;
    CHECK(*g.grad(tnode) == mat({{2, 2}, {0, 0}, {1, 1}}));
}

TEST_CASE("broadcast add and mul match dense expansion") {
    Rng rng(7);
    auto a = random_matrix<double>(rng, 4, 6);
    auto row = random_matrix<double>(rng, 1, 6);
    auto col = random_matrix<double>(rng, 4, 1);
    Graph<double> g;
    NodeId s1 = g.add(g.constant(a), g.constant(row));
    NodeId s2 = g.add(g.constant(a), g.constant(col));
    NodeId s3 = g.mul(g.constant(a), g.constant(row));
    NodeId s4 = g.mul(g.constant(a), g.constant(col));
    NodeId s5 = g.add(g.constant(a), g.scalar(2.5));
    g.forward();
    MatrixX<double> e1 = a + row.replicate(4, 1);
    MatrixX<double> e2 = a + col.replicate(1, 6);
    MatrixX<double> e3 = a.cwiseProduct(row.replicate(4, 1));
    MatrixX<double> e4 = a.cwiseProduct(col.replicate(1, 6));
    CHECK((g.value(s1) - e1).cwiseAbs().maxCoeff() == 0);
    CHECK((g.value(s2) - e2).cwiseAbs().maxCoeff() == 0);
    CHECK((g.value(s3) - e3).cwiseAbs().maxCoeff() == 0);
    CHECK((g.value(s4) - e4).cwiseAbs().maxCoeff() == 0);
    CHECK((g.value(s5).array() - (a.array() + 2.5)).abs().maxCoeff() == 0);
}

TEST_CASE("shape errors carry the node description") {
    Graph<double> g;
    NodeId a = g.constant(MatrixX<double>::Zero(2, 3));
    NodeId b = g.constant(MatrixX<double>::Zero(4, 2));
    try {
        g.matmul(a, b, false, false, "proj");
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("proj") != std::string::npos);
    }
}

TEST_CASE("backward rejects a non-scalar loss") {
    Graph<double> g;
    NodeId a = g.constant(MatrixX<double>::Zero(2, 3));
    g.forward();
    CHECK_THROWS_AS(g.backward(a), ShapeError);
}

TEST_CASE("missing binding and store are reported") {
    Graph<double> g;
    g.input("x", 2, 2);
    CHECK_THROWS_AS(g.forward({}), Error);
    Graph<double> g2;
    g2.param("w", 2, 2);
    CHECK_THROWS_AS(g2.forward({}, nullptr), Error);
}

TEST_CASE("forward and backward are bitwise repeatable") {
    Rng rng(8);
    auto build = [&](Graph<double>& g) {
        NodeId x = g.input("x", 3, 4, true);
        NodeId h = g.silu(g.matmul(x, g.param("W", 4, 4)));
        return std::pair{x, g.mse(h, g.constant(MatrixX<double>::Zero(3, 4)))};
    };
    ParamStore<double> store;
    store.add("W", random_matrix<double>(rng, 4, 4));
    Graph<double>::Bindings bind{{"x", random_matrix<double>(rng, 3, 4)}};

    Graph<double> g1, g2;
    auto [x1, l1] = build(g1);
    auto [x2, l2] = build(g2);
    g1.forward(bind, &store);
    g1.backward(l1);
    g2.forward(bind, &store);
    g2.backward(l2);
    CHECK(bitwise_equal(g1.value(l1), g2.value(l2)));
    CHECK(bitwise_equal(*g1.grad(x1), *g2.grad(x2)));

    // re-running the same graph is also bitwise stable
    MatrixX<double> v = g1.value(l1), gr = *g1.grad(x1);
    g1.forward(bind, &store);
    g1.backward(l1);
    CHECK(bitwise_equal(v, g1.value(l1)));
    CHECK(bitwise_equal(gr, *g1.grad(x1)));
}

TEST_CASE("finite checking names the offending node") {
    Graph<double> g;
    g.set_check_finite(true);
    MatrixX<double> bad(1, 2);
    bad << 1.0, std::numeric_limits<double>::infinity();
    NodeId c = g.constant(bad, "poison");
    g.silu(c);
    try {
        g.forward();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("poison") != std::string::npos);
    }
}

TEST_CASE("adamw single step matches the closed form") {
    ParamStore<double> store;
    store.add("p", MatrixX<double>::Ones(1, 1));
    AdamWState<double> state;
    AdamWConfig<double> cfg;
    cfg.lr = 0.1;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.99;
    cfg.eps = 1e-8;
    cfg.weight_decay = 0;
    GradMap<double> grads{{"p", MatrixX<double>::Ones(1, 1)}};
    adamw_step(store, grads, state, cfg);
    // bias-corrected m-hat and v-hat are both exactly 1 after one step
    double expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
    CHECK(std::abs(store.at("p")(0, 0) - expect) < 1e-12);
    CHECK(state.t == 1);
}

TEST_CASE("adamw with zero gradients and zero decay is an exact no-op") {
    Rng rng(9);
    ParamStore<double> store;
    store.add("p", random_matrix<double>(rng, 3, 3));
    MatrixX<double> before = store.at("p");
    AdamWState<double> state;
    AdamWConfig<double> cfg;
    cfg.weight_decay = 0;
    GradMap<double> grads{{"p", MatrixX<double>::Zero(3, 3)}};
    adamw_step(store, grads, state, cfg);
    CHECK(bitwise_equal(before, store.at("p")));
}

TEST_CASE("adamw with lr=0 is the identity") {
    Rng rng(10);
    ParamStore<double> store;
    store.add("p", random_matrix<double>(rng, 2, 5));
    MatrixX<double> before = store.at("p");
    AdamWState<double> state;
    AdamWConfig<double> cfg;
    cfg.lr = 0;
    cfg.weight_decay = 0.1;
    GradMap<double> grads{{"p", random_matrix<double>(rng, 2, 5)}};
    adamw_step(store, grads, state, cfg);
    CHECK(bitwise_equal(before, store.at("p")));
}

TEST_CASE("adamw skips frozen entries and rejects non-finite gradients") {
    Rng rng(11);
    ParamStore<double> store;
    store.add("frozen", random_matrix<double>(rng, 2, 2), /*trainable=*/false);
    store.add("live", random_matrix<double>(rng, 2, 2));
    MatrixX<double> before = store.at("frozen");
    AdamWState<double> state;
    AdamWConfig<double> cfg;
    GradMap<double> grads{{"frozen", MatrixX<double>::Ones(2, 2)}, {"live", MatrixX<double>::Ones(2, 2)}};
    adamw_step(store, grads, state, cfg);
    CHECK(bitwise_equal(before, store.at("frozen")));

    MatrixX<double> nan_grad = MatrixX<double>::Constant(2, 2, std::nan(""));
    GradMap<double> bad{{"live", nan_grad}};
    CHECK_THROWS_AS(adamw_step(store, bad, state, cfg), TrainError);
}

TEST_CASE("adamw weight decay is decoupled from the gradient path") {
    ParamStore<double> store;
    store.add("p", MatrixX<double>::Constant(1, 1, 2.0));
    AdamWState<double> state;
    AdamWConfig<double> cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.1;
    GradMap<double> grads{{"p", MatrixX<double>::Zero(1, 1)}};
    adamw_step(store, grads, state, cfg);
    // zero gradient, so the only movement is -lr * wd * p
    CHECK(store.at("p")(0, 0) == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-15));
}
