#include <doctest.h>

#include <cmath>

#include "fam/meta.hpp"
#include "fam/rng.hpp"
#include "support/fd_check.hpp"

using namespace fam;
using fam::testing::central_differences;
using fam::testing::grad_close;

namespace {

ParameterSet theta_vec(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    ParameterSet p;
    p.entries.push_back({"fc0.weight", Tensor({n}, std::move(values))});
    return p;
}

ParameterSet zeros_like(const ParameterSet& p) {
    ParameterSet z = p;
    for (auto& e : z.entries) e.tensor = Tensor::zeros(e.tensor.shape());
    return z;
}

// L = 0.5 * ||theta||^2, grad = theta.
LossGradFn quadratic_objective() {
    return [](const ParameterSet& params, const Batch&) {
        LossGrad lg;
        lg.grad = params;
        double sq = 0.0;
        for (const auto& e : params.entries)
            for (std::int64_t i = 0; i < e.tensor.size(); ++i) sq += e.tensor[i] * e.tensor[i];
        lg.loss = 0.5 * sq;
        return lg;
    };
}

LossGradFn constant_objective(double loss = 1.0) {
    return [loss](const ParameterSet& params, const Batch&) {
        LossGrad lg;
        lg.loss = loss;
        lg.grad = params;
        for (auto& e : lg.grad.entries) e.tensor = Tensor::zeros(e.tensor.shape());
        return lg;
    };
}

LossGradFn frozen_gradient_objective(const ParameterSet& g) {
    return [g](const ParameterSet&, const Batch&) {
        LossGrad lg;
        lg.loss = 1.0;
        lg.grad = g;
        return lg;
    };
}

Episode dummy_episode() {
    Episode ep;
    ep.way = 2;
    ep.support = {{Tensor({1}, {0.0}), 0}};
    ep.query = {{Tensor({1}, {0.0}), 1}};
    return ep;
}

ModelSpec tiny_mlp() {
    // 4*4 + 4 + 4*2 + 2 = 30 parameters.
    ModelSpec spec;
    spec.kind = ModelKind::mlp;
    spec.input_shape = {4};
    spec.hidden_sizes = {4};
    spec.num_classes = 2;
    return spec;
}

Episode random_episode(const ModelSpec& spec, int shot, int query, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Episode ep;
    ep.way = spec.num_classes;
    auto draw = [&](int n, Batch& out) {
        for (int c = 0; c < spec.num_classes; ++c) {
            for (int i = 0; i < n; ++i) {
                Tensor x(spec.input_shape);
                for (std::int64_t j = 0; j < x.size(); ++j) x[j] = uniform_in(rng, 0.0, 1.0);
                out.push_back({std::move(x), c});
            }
        }
    };
    draw(shot, ep.support);
    draw(query, ep.query);
    return ep;
}

}  // namespace

TEST_SUITE("meta") {

TEST_CASE("config validation") {
    MetaConfig cfg;
    cfg.alpha = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.alpha = 0.1;
    cfg.inner_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.inner_steps = 1;
    cfg.beta = 0.0;  // degenerate no-op step is allowed
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("zero gradient is a fixed point of inner_adapt") {
    ParameterSet theta = theta_vec({1.5, -2.0, 0.25});
    MetaConfig cfg;
    cfg.alpha = 0.3;
    ParameterSet adapted = inner_adapt(theta, dummy_episode().support, cfg, constant_objective());
    CHECK(adapted.bitwise_equal(theta));
}

TEST_CASE("quadratic stub follows the closed form") {
    ParameterSet theta = theta_vec({1.0, 2.0});
    MetaConfig cfg;
    cfg.alpha = 0.1;

    ParameterSet one = inner_adapt(theta, dummy_episode().support, cfg, quadratic_objective());
    CHECK(one.tensor(0)[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(one.tensor(0)[1] == doctest::Approx(1.8).epsilon(1e-12));

    cfg.inner_steps = 2;
    ParameterSet two = inner_adapt(theta, dummy_episode().support, cfg, quadratic_objective());
    CHECK(two.tensor(0)[0] == doctest::Approx(0.81).epsilon(1e-12));
    CHECK(two.tensor(0)[1] == doctest::Approx(1.62).epsilon(1e-12));
}

TEST_CASE("inner_adapt never mutates its input") {
    ParameterSet theta = theta_vec({0.5, -0.25, 1.0});
    ParameterSet before = theta;
    MetaConfig cfg;
    cfg.alpha = 0.7;
    cfg.inner_steps = 3;
    (void)inner_adapt(theta, dummy_episode().support, cfg, quadratic_objective());
    CHECK(theta.bitwise_equal(before));
}

TEST_CASE("outer step with zero query gradient returns the input") {
    ParameterSet theta = theta_vec({1.0, -1.0});
    MetaConfig cfg;
    OuterStepResult r = meta_outer_step(theta, {dummy_episode()}, cfg, std::nullopt, constant_objective());
    CHECK(r.params.bitwise_equal(theta));
    CHECK(r.mean_query_loss == 1.0);
}

TEST_CASE("all-zero mask absorbs the update") {
    ParameterSet theta = theta_vec({1.0, -1.0, 2.0});
    MetaConfig cfg;
    PruneMask zero = all_zeros_mask(theta);
    OuterStepResult r = meta_outer_step(theta, {dummy_episode()}, cfg, zero, quadratic_objective());
    CHECK(r.params.nonzero_count() == 0);
}

TEST_CASE("masked positions come out exactly zero regardless of gradients") {
    ParameterSet theta = theta_vec({1.0, -1.0, 2.0, 0.5});
    PruneMask mask = all_ones_mask(theta);
    mask.entries[0].tensor[1] = 0.0;
    mask.entries[0].tensor[3] = 0.0;
    MetaConfig cfg;
    cfg.beta = 0.05;
    OuterStepResult r = meta_outer_step(theta, {dummy_episode()}, cfg, mask, quadratic_objective());
    CHECK(r.params.tensor(0)[1] == 0.0);
    CHECK(r.params.tensor(0)[3] == 0.0);
    CHECK(r.params.tensor(0)[0] != 0.0);
}

TEST_CASE("mask shape mismatch is a contract violation") {
    ParameterSet theta = theta_vec({1.0, -1.0});
    PruneMask bad = all_ones_mask(theta_vec({1.0, 2.0, 3.0}));
    MetaConfig cfg;
    CHECK_THROWS_AS(meta_outer_step(theta, {dummy_episode()}, cfg, bad, quadratic_objective()), ContractViolation);
}

TEST_CASE("outer step is linear in beta for a frozen gradient") {
    ParameterSet theta = theta_vec({0.2, 0.4, -0.6});
    ParameterSet g = theta_vec({1.0, -2.0, 3.0});
    MetaConfig cfg;
    cfg.beta = 0.01;
    OuterStepResult base = meta_outer_step(theta, {dummy_episode()}, cfg, std::nullopt, frozen_gradient_objective(g));
    cfg.beta = 0.03;
    OuterStepResult tripled = meta_outer_step(theta, {dummy_episode()}, cfg, std::nullopt, frozen_gradient_objective(g));
    for (std::int64_t i = 0; i < 3; ++i) {
        const double d1 = base.params.tensor(0)[i] - theta.tensor(0)[i];
        const double d3 = tripled.params.tensor(0)[i] - theta.tensor(0)[i];
        CHECK(d3 == doctest::Approx(3.0 * d1).epsilon(1e-9));
    }
}

TEST_CASE("non-finite loss raises a numeric error") {
    ParameterSet theta = theta_vec({1.0});
    MetaConfig cfg;
    auto bad = [](const ParameterSet& p, const Batch&) {
        LossGrad lg;
        lg.loss = std::numeric_limits<double>::infinity();
        lg.grad = p;
        return lg;
    };
    CHECK_THROWS_AS(inner_adapt(theta, dummy_episode().support, cfg, bad), NumericError);
}

TEST_CASE("second order rejects conv models") {
    ModelSpec spec;
    spec.kind = ModelKind::conv4;
    spec.input_shape = {1, 8, 8};
    spec.num_classes = 2;
    ParameterSet p = init_params(spec, 1);
    MetaConfig cfg;
    cfg.order = MetaOrder::second;
    Episode ep = random_episode(spec, 1, 1, 2);
    CHECK_THROWS_AS(meta_outer_step(spec, p, {ep}, cfg, std::nullopt), ConfigError);
}

TEST_CASE("second order meta-gradient matches finite differences of the composed objective") {
    ModelSpec spec = tiny_mlp();
    ParameterSet theta0 = init_params(spec, 5);
    REQUIRE(theta0.total_count() <= 50);
    Episode ep = random_episode(spec, 2, 3, 6);

    MetaConfig cfg;
    cfg.alpha = 0.5;  // large enough that first and second order clearly differ
    cfg.beta = 1.0;   // so theta - theta'' equals the meta-gradient
    cfg.order = MetaOrder::second;

    // Composed objective phi(theta) = L_query(theta - alpha * grad L_support(theta)).
    auto phi = [&](const std::vector<double>& flat) {
        ParameterSet p = unflatten(theta0, flat);
        LossGrad inner = loss_and_grad(spec, p, ep.support);
        ParameterSet adapted = p;
        for (std::size_t i = 0; i < adapted.count(); ++i) axpy(adapted.tensor(i), -cfg.alpha, inner.grad.tensor(i));
        return forward_loss(spec, adapted, ep.query).loss;
    };

    OuterStepResult r = meta_outer_step(spec, theta0, {ep}, cfg, std::nullopt);
    std::vector<double> analytic;
    {
        std::vector<double> before = flatten(theta0), after = flatten(r.params);
        for (std::size_t i = 0; i < before.size(); ++i) analytic.push_back(before[i] - after[i]);
    }

    std::vector<double> fd = central_differences(phi, flatten(theta0));
    for (std::size_t i = 0; i < fd.size(); ++i) {
        CAPTURE(i);
        CHECK(grad_close(analytic[i], fd[i]));
    }

    // And the first-order step genuinely differs at this alpha.
    cfg.order = MetaOrder::first;
    OuterStepResult fo = meta_outer_step(spec, theta0, {ep}, cfg, std::nullopt);
    CHECK_FALSE(fo.params.bitwise_equal(r.params));
}

TEST_CASE("orders agree when the inner step is the identity") {
    // alpha -> 0 makes the adapted point equal theta, where both orders
    // reduce to the plain query gradient.
    ModelSpec spec = tiny_mlp();
    ParameterSet theta0 = init_params(spec, 7);
    Episode ep = random_episode(spec, 2, 3, 8);

    MetaConfig cfg;
    cfg.alpha = 1e-12;
    cfg.beta = 0.5;

    cfg.order = MetaOrder::first;
    OuterStepResult fo = meta_outer_step(spec, theta0, {ep}, cfg, std::nullopt);
    cfg.order = MetaOrder::second;
    OuterStepResult so = meta_outer_step(spec, theta0, {ep}, cfg, std::nullopt);
    for (std::size_t t = 0; t < fo.params.count(); ++t) {
        for (std::int64_t i = 0; i < fo.params.tensor(t).size(); ++i) {
            CHECK(fo.params.tensor(t)[i] == doctest::Approx(so.params.tensor(t)[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("model-backed outer step reduces query loss on a learnable task") {
    ModelSpec spec = tiny_mlp();
    ParameterSet theta = init_params(spec, 11);
    MetaConfig cfg;
    cfg.alpha = 0.1;
    cfg.beta = 0.2;

    std::vector<Episode> tasks;
    for (int t = 0; t < 4; ++t) tasks.push_back(random_episode(spec, 2, 5, 100 + static_cast<std::uint64_t>(t)));

    double first_loss = 0.0, last_loss = 0.0;
    for (int it = 0; it < 30; ++it) {
        OuterStepResult r = meta_outer_step(spec, theta, tasks, cfg, std::nullopt);
        theta = r.params;
        if (it == 0) first_loss = r.mean_query_loss;
        last_loss = r.mean_query_loss;
    }
    CHECK(last_loss < first_loss);
}

}  // TEST_SUITE
