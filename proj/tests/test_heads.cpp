#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "orthus/gradcheck.hpp"
#include "orthus/heads.hpp"
#include "orthus/vocab.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace orthus;
using namespace orthus::testutil;

TEST_CASE("noise schedule endpoints and monotonicity") {
    auto s = DiffusionSchedule::linear(1000, 1e-4, 0.02, 100);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.alpha_bar[1] == 1.0 - 1e-4);  // exact: 1 * (1 - beta_1)
    CHECK(s.beta[1] == 1e-4);
    CHECK(s.beta[1000] == 0.02);
    for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar[size_t(t)] < s.alpha_bar[size_t(t) - 1]);
    CHECK(s.alpha_bar[1000] > 0.0);
}

TEST_CASE("cumulative products match a long-double oracle") {
    auto s = DiffusionSchedule::linear(1000, 1e-4, 0.02, 100);
    long double acc = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
        long double beta = 1e-4L + (0.02L - 1e-4L) * (long double)(t - 1) / 999.0L;
        acc *= 1.0L - beta;
        CHECK(std::abs(double(acc) - s.alpha_bar[size_t(t)]) < 1e-10);
    }
}

TEST_CASE("sampler visits an evenly spaced subsequence ending at T") {
    auto s = DiffusionSchedule::linear(1000, 1e-4, 0.02, 100);
    REQUIRE(s.sample_steps.size() == 100);
    CHECK(s.sample_steps.front() == 10);
    CHECK(s.sample_steps.back() == 1000);
    for (size_t i = 0; i < s.sample_steps.size(); ++i) CHECK(s.sample_steps[i] == int(10 * (i + 1)));

    CHECK_THROWS_AS((void)DiffusionSchedule::linear(1000, 1e-4, 0.02, 7), Error);
    CHECK_THROWS_AS((void)DiffusionSchedule::linear(10, 0.0, 0.02, 5), Error);
    CHECK_THROWS_AS((void)DiffusionSchedule::linear(10, 0.03, 0.02, 5), Error);
}

TEST_CASE("timestep table: zero row and closed-form entries") {
    MatrixX<double> t = timestep_table<double>(20, 6);
    REQUIRE(t.rows() == 21);
    REQUIRE(t.cols() == 6);
    for (Index k = 0; k < 6; ++k) CHECK(t(0, k) == (k % 2 == 0 ? 0.0 : 1.0));
    // row 3, pair 1: frequency 10000^(-2/6)
    double freq = std::pow(10000.0, -2.0 / 6.0);
    CHECK(t(3, 2) == doctest::Approx(std::sin(3 * freq)).epsilon(1e-15));
    CHECK(t(3, 3) == doctest::Approx(std::cos(3 * freq)).epsilon(1e-15));
}

namespace {

DiffusionHeadConfig small_head() {
    DiffusionHeadConfig cfg;
    cfg.latent_dim = 4;
    cfg.cond_dim = 6;
    cfg.width = 8;
    cfg.blocks = 2;
    return cfg;
}

}  // namespace

TEST_CASE("freshly initialised head predicts exactly zero noise") {
    auto cfg = small_head();
    Rng rng(7);
    ParamStore<double> ps;
    init_diffusion_head_params(ps, cfg, rng);
    MatrixX<double> table = timestep_table<double>(10, cfg.cond_dim);

    Rng data(8);
    MatrixX<double> x(3, cfg.latent_dim), f(3, cfg.cond_dim);
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < x.cols(); ++j) x(i, j) = data.gaussian(Stream::Misc);
        for (Index j = 0; j < f.cols(); ++j) f(i, j) = data.gaussian(Stream::Misc);
    }
    MatrixX<double> eps = eps_predict<double>(ps, cfg, table, x, 5, &f);
    CHECK(eps.isZero(0.0));
    MatrixX<double> eps_null = eps_predict<double>(ps, cfg, table, x, 5, nullptr);
    CHECK(eps_null.isZero(0.0));
}

TEST_CASE("zero-noise head gives squared-norm loss near the latent dimension") {
    // if eps_hat == 0 the per-patch objective is ||eps||^2 with eps standard
    // normal, so its expectation is exactly the latent dimension
    Rng rng(9);
    Index dv = 8;
    int n = 4000;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        double norm2 = 0;
        for (Index j = 0; j < dv; ++j) {
            double e = rng.gaussian(Stream::DiffNoise);
            norm2 += e * e;
        }
        acc += norm2;
    }
    double mean = acc / n;  // sampling std ~ sqrt(2*dv/n) = 0.063
    CHECK(mean == doctest::Approx(double(dv)).epsilon(0.05));
}

TEST_CASE("guidance scales one and zero return the exact branch inputs") {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        MatrixX<double> c = random_matrix<double>(rng, 2, 5), u = random_matrix<double>(rng, 2, 5);
        MatrixX<double> at1 = cfg_combine<double>(c, u, 1.0);
        MatrixX<double> at0 = cfg_combine<double>(c, u, 0.0);
        CHECK(bitwise_equal(at1, c));
        CHECK(bitwise_equal(at0, u));
        MatrixX<double> at2 = cfg_combine<double>(c, u, 2.0);
        MatrixX<double> expect = u + 2.0 * (c - u);
        CHECK((at2 - expect).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("ddim with a zero head rescales the start noise in closed form") {
    // eps_hat == 0 collapses every update to x <- sqrt(ab_prev/ab_t) * x, which
    // telescopes to x / sqrt(alpha_bar[T]) over the whole trajectory
    auto cfg = small_head();
    Rng rng(11);
    ParamStore<double> ps;
    init_diffusion_head_params(ps, cfg, rng);
    auto sched = DiffusionSchedule::linear(50, 1e-4, 0.02, 10);
    MatrixX<double> table = timestep_table<double>(50, cfg.cond_dim);

    MatrixX<double> x0 = random_matrix<double>(rng, 1, cfg.latent_dim);
    MatrixX<double> f = random_matrix<double>(rng, 1, cfg.cond_dim);
    MatrixX<double> out = ddim_denoise<double>(ps, cfg, sched, table, &f, 5.0, x0);
    MatrixX<double> expect = x0 / std::sqrt(sched.alpha_bar[50]);
    for (Index j = 0; j < out.cols(); ++j)
        CHECK(out(0, j) == doctest::Approx(expect(0, j)).epsilon(1e-10));
}

TEST_CASE("sampling is seed-deterministic and seed-sensitive") {
    auto cfg = small_head();
    Rng init(12);
    ParamStore<double> ps;
    init_diffusion_head_params(ps, cfg, init);
    // make the head nontrivial so the trajectory actually uses it
    ps.at("diff_head.out.W") = random_matrix<double>(init, cfg.width, cfg.latent_dim) * 0.1;
    auto sched = DiffusionSchedule::linear(100, 1e-4, 0.02, 20);
    MatrixX<double> table = timestep_table<double>(100, cfg.cond_dim);
    MatrixX<double> f = random_matrix<double>(init, 1, cfg.cond_dim);

    Rng a(77), b(77), c(78);
    MatrixX<double> s1 = ddim_sample<double>(ps, cfg, sched, table, &f, 5.0, a);
    MatrixX<double> s2 = ddim_sample<double>(ps, cfg, sched, table, &f, 5.0, b);
    MatrixX<double> s3 = ddim_sample<double>(ps, cfg, sched, table, &f, 5.0, c);
    CHECK(bitwise_equal(s1, s2));
    CHECK_FALSE(bitwise_equal(s1, s3));
}

TEST_CASE("non-finite trajectories name the failing step") {
    auto cfg = small_head();
    Rng rng(13);
    ParamStore<double> ps;
    init_diffusion_head_params(ps, cfg, rng);
    ps.at("diff_head.out.W").setConstant(std::numeric_limits<double>::quiet_NaN());
    auto sched = DiffusionSchedule::linear(10, 1e-4, 0.02, 5);
    MatrixX<double> table = timestep_table<double>(10, cfg.cond_dim);
    MatrixX<double> x = random_matrix<double>(rng, 1, cfg.latent_dim);
    try {
        (void)ddim_denoise<double>(ps, cfg, sched, table, nullptr, 1.0, x);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 10") != std::string::npos);
    }
}

TEST_CASE("diffusion head gradients agree with finite differences") {
    auto cfg = small_head();
    Rng rng(14);
    ParamStore<double> ps;
    init_diffusion_head_params(ps, cfg, rng);
    // move away from the zero initialisation so gradients are nontrivial
    for (auto& e : ps.entries())
        if (e.value.isZero(0.0)) e.value = random_matrix<double>(rng, e.value.rows(), e.value.cols()) * 0.05;

    Graph<double> g;
    NodeId x = g.input("x", 3, cfg.latent_dim, true);
    NodeId cond = g.input("cond", 3, cfg.cond_dim, true);
    NodeId eps = build_diffusion_head(g, x, cond, cfg, trainable_params<double>(ps));
    NodeId loss = g.mean(g.mul(eps, eps));
    Graph<double>::Bindings b;
    b["x"] = random_matrix<double>(rng, 3, cfg.latent_dim);
    b["cond"] = random_matrix<double>(rng, 3, cfg.cond_dim);
    auto rep = grad_check(g, b, &ps, loss);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("uniform logits cost ln(vocab) and greedy breaks ties to the lowest id") {
    ParamStore<double> ps;
    init_lm_head_params<double>(ps, 6, vocab::kSize);
    CHECK(ps.at("lm.W").isZero(0.0));

    Graph<double> g;
    NodeId states = g.constant(MatrixX<double>::Random(4, 6));
    NodeId logits = build_lm_logits(g, states, 6, vocab::kSize, frozen_params<double>());
    NodeId loss = g.mean(g.cross_entropy(logits, {3, 1, 0, 30}));
    g.forward({}, &ps);
    CHECK(g.value(loss)(0, 0) == doctest::Approx(std::log(32.0)).epsilon(1e-12));

    MatrixX<double> row = MatrixX<double>::Zero(1, 5);
    CHECK(greedy_token(row) == 0);
    row(0, 3) = 1.0;
    row(0, 4) = 1.0;
    CHECK(greedy_token(row) == 3);
}

TEST_CASE("regression head is deterministic and shape-correct") {
    auto cfg = small_head();
    Rng rng(15);
    ParamStore<double> ps;
    init_mse_head_params(ps, cfg, rng);
    MatrixX<double> f = random_matrix<double>(rng, 4, cfg.cond_dim);
    MatrixX<double> y1 = mse_head_predict(ps, cfg, f);
    MatrixX<double> y2 = mse_head_predict(ps, cfg, f);
    REQUIRE(y1.rows() == 4);
    REQUIRE(y1.cols() == cfg.latent_dim);
    CHECK(bitwise_equal(y1, y2));
}
