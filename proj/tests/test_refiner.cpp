#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "worldscan/refiner.hpp"

using namespace worldscan;
using namespace worldscan::refiner;

namespace {

Array randn(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    return Array::NullaryExpr(n, [&] { return normal(rng); });
}

}  // namespace

TEST_CASE("source construction blends the degraded latent with noise") {
    std::mt19937_64 rng(1);
    const Array x_l = randn(64, rng);
    const Array noise = randn(64, rng);

    CHECK((make_source(x_l, 0.0, noise) - x_l).abs().maxCoeff() == 0.0);
    CHECK((make_source(x_l, 1.0, noise) - noise).abs().maxCoeff() == 0.0);

    const Array zero = Array::Zero(64);
    const Array x1 = make_source(zero, kSigmaStart, noise);
    CHECK((x1 - kSigmaStart * noise).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("source construction rejects shape mismatches") {
    std::mt19937_64 rng(2);
    CHECK_THROWS_AS(make_source(randn(8, rng), 0.5, randn(9, rng)), std::invalid_argument);
}

TEST_CASE("sampled noise levels stay inside the truncation window") {
    std::mt19937_64 rng(3);
    const LogitNormalParams params;
    for (int i = 0; i < 100000; ++i) {
        const double sigma = sample_sigma(params, kSigmaStart, rng);
        REQUIRE(sigma > 0.0);
        REQUIRE(sigma <= kSigmaStart);
    }
}

TEST_CASE("a degenerate std concentrates draws at sigmoid(mean)+shift") {
    std::mt19937_64 rng(4);
    const LogitNormalParams params{0.0, 1e-8, 0.1};
    const double target = 1.0 / (1.0 + std::exp(-params.mean)) + params.shift;
    for (int i = 0; i < 1000; ++i) {
        CHECK(sample_sigma(params, kSigmaStart, rng) == doctest::Approx(target).epsilon(1e-6));
    }
}

TEST_CASE("sigma sampling is reproducible under a fixed seed") {
    const LogitNormalParams params;
    std::mt19937_64 a(99), b(99);
    for (int i = 0; i < 100; ++i) {
        CHECK(sample_sigma(params, kSigmaStart, a) == sample_sigma(params, kSigmaStart, b));
    }
}

TEST_CASE("an unreachable truncation window exhausts the sampler") {
    std::mt19937_64 rng(5);
    // sigmoid(z) + 2 can never fall inside (0, 0.909375].
    const LogitNormalParams params{0.0, 1e-6, 2.0};
    CHECK_THROWS_AS(sample_sigma(params, kSigmaStart, rng), SamplingError);
}

TEST_CASE("interpolation spans the segment between target and source") {
    std::mt19937_64 rng(6);
    const Array x_h = randn(32, rng);
    const Array x_1 = randn(32, rng);

    CHECK((interpolate(x_h, x_1, kSigmaStart, kSigmaStart) - x_1).abs().maxCoeff() == 0.0);
    CHECK((interpolate(x_h, x_1, 1e-9, kSigmaStart) - x_h).abs().maxCoeff() <= 1e-8);
    const Array mid = interpolate(x_h, x_1, 0.5 * kSigmaStart, kSigmaStart);
    CHECK((mid - 0.5 * (x_h + x_1)).abs().maxCoeff() <= 1e-15);

    CHECK_THROWS_AS(interpolate(x_h, x_1, 0.0, kSigmaStart), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(x_h, x_1, kSigmaStart + 0.01, kSigmaStart), std::invalid_argument);
}

TEST_CASE("interpolated states are elementwise convex combinations") {
    std::mt19937_64 rng(7);
    const Array x_h = randn(64, rng);
    const Array x_1 = randn(64, rng);
    for (double sigma : {0.1, 0.4, 0.7, kSigmaStart}) {
        const Array x_t = interpolate(x_h, x_1, sigma, kSigmaStart);
        for (int i = 0; i < x_t.size(); ++i) {
            CHECK(x_t[i] >= std::min(x_h[i], x_1[i]) - 1e-12);
            CHECK(x_t[i] <= std::max(x_h[i], x_1[i]) + 1e-12);
        }
    }
}

TEST_CASE("target velocity is the scaled displacement") {
    std::mt19937_64 rng(8);
    const Array x_h = randn(32, rng);
    CHECK(target_velocity(x_h, x_h, kSigmaStart).abs().maxCoeff() == 0.0);

    const Array x_1 = randn(32, rng);
    const Array v = target_velocity(x_1, Array::Zero(32), kSigmaStart);
    CHECK((v - x_1 / kSigmaStart).abs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(target_velocity(x_1, x_h, 0.0), std::invalid_argument);
}

TEST_CASE("one Euler step along the target velocity lands on the target") {
    std::mt19937_64 rng(9);
    const Array x_h = randn(128, rng);
    const Array x_1 = randn(128, rng);
    const Array v = target_velocity(x_1, x_h, kSigmaStart);
    for (double sigma : {1e-6, 0.1, 0.421875, 0.725, kSigmaStart}) {
        const Array x_t = interpolate(x_h, x_1, sigma, kSigmaStart);
        CHECK((x_t - sigma * v - x_h).abs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("refiner loss is a mean squared error") {
    std::mt19937_64 rng(10);
    const Array target = randn(48, rng);
    CHECK(refiner_loss(target, target) == 0.0);
    CHECK(refiner_loss(target + 1.0, target) == doctest::Approx(1.0).epsilon(1e-12));

    const Array pred = randn(48, rng);
    double expected = 0.0;
    for (int i = 0; i < 48; ++i) {
        expected += (pred[i] - target[i]) * (pred[i] - target[i]);
    }
    expected /= 48.0;
    CHECK(refiner_loss(pred, target) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("the loss mask drops reference-conditioning elements") {
    std::mt19937_64 rng(11);
    const Array target = randn(10, rng);
    Array pred = target;
    pred[0] += 5.0;  // excluded below
    pred[5] += 2.0;

    std::vector<bool> mask(10, true);
    mask[0] = false;
    CHECK(refiner_loss(pred, target, mask) == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
    CHECK_THROWS_AS(refiner_loss(pred, target, std::vector<bool>(10, false)),
                    std::invalid_argument);
    CHECK_THROWS_AS(refiner_loss(pred, target, std::vector<bool>(9, true)),
                    std::invalid_argument);
}

TEST_CASE("schedule validation pins the endpoints and ordering") {
    CHECK_NOTHROW(SigmaSchedule::distilled().validate());
    CHECK(SigmaSchedule::distilled().steps ==
          std::vector<double>{0.909375, 0.725, 0.421875, 0.0});

    SigmaSchedule bad{0.9, {0.9, 0.95, 0.0}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    SigmaSchedule no_zero{0.9, {0.9, 0.5}};
    CHECK_THROWS_AS(no_zero.validate(), std::invalid_argument);
    SigmaSchedule wrong_start{0.9, {0.8, 0.0}};
    CHECK_THROWS_AS(wrong_start.validate(), std::invalid_argument);
}

TEST_CASE("a zero velocity field leaves the state unchanged") {
    std::mt19937_64 rng(12);
    const Array x = randn(32, rng);
    const Array out = euler_refine(x, SigmaSchedule::distilled(),
                                   [](const Array& state, double) { return Array::Zero(state.size()); });
    CHECK((out - x).abs().maxCoeff() == 0.0);
}

TEST_CASE("the distilled schedule telescopes the oracle velocity onto the target") {
    std::mt19937_64 rng(13);
    const Array x_l = randn(256, rng);
    const Array x_h = randn(256, rng);
    const Array noise = randn(256, rng);
    const Array x_1 = make_source(x_l, kSigmaStart, noise);
    const Array v = target_velocity(x_1, x_h, kSigmaStart);

    std::vector<EulerStepTrace> trace;
    const Array out = euler_refine(x_1, SigmaSchedule::distilled(),
                                   [&](const Array&, double) { return v; }, &trace);
    CHECK((out - x_h).abs().maxCoeff() <= 1e-10);
    REQUIRE(trace.size() == 4);  // start plus three steps
    CHECK(trace.front().sigma == 0.909375);
    CHECK(trace.back().sigma == 0.0);
}

TEST_CASE("any descending schedule telescopes the constant oracle") {
    std::mt19937_64 rng(14);
    const Array x_h = randn(64, rng);
    const Array x_1 = randn(64, rng);
    const Array v = target_velocity(x_1, x_h, kSigmaStart);
    const std::vector<SigmaSchedule> schedules{
        {kSigmaStart, {kSigmaStart, 0.0}},
        {kSigmaStart, {kSigmaStart, 0.8, 0.6, 0.4, 0.2, 0.0}},
        {kSigmaStart, {kSigmaStart, 0.0001, 0.0}},
    };
    for (const SigmaSchedule& schedule : schedules) {
        const Array out =
            euler_refine(x_1, schedule, [&](const Array&, double) { return v; });
        CHECK((out - x_h).abs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("the Euler trace serializes sigma and mean magnitude") {
    std::mt19937_64 rng(15);
    const Array x = randn(16, rng);
    std::vector<EulerStepTrace> trace;
    euler_refine(x, SigmaSchedule::distilled(),
                 [](const Array& state, double) { return Array(0.1 * state); }, &trace);
    const std::string j = euler_trace_to_json(trace);
    CHECK(j.find("\"sigma\": 0.909375") != std::string::npos);
    CHECK(j.find("mean_abs") != std::string::npos);
}
