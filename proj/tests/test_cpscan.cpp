#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "worldscan/cpscan.hpp"

using namespace worldscan;
using namespace worldscan::cpscan;
using seqmodel::FrameBatch;
using seqmodel::RecurrentState;
using seqmodel::ScanOutput;

namespace {

Mat randn(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    return Mat::NullaryExpr(rows, cols, [&] { return normal(rng); });
}

std::vector<FrameBatch> random_frames(int t, int d, int s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<FrameBatch> frames(static_cast<size_t>(t));
    for (FrameBatch& f : frames) {
        f.q = seqmodel::prepare_queries(randn(d, s, rng));
        f.k = seqmodel::stabilize_keys(randn(d, s, rng), {d, s});
        f.v = randn(d, s, rng);
        f.beta = Vec::NullaryExpr(s, [&] { return unit(rng); });
        f.gamma = 0.9 + 0.1 * unit(rng);
    }
    return frames;
}

Mat frame_transition(const FrameBatch& f) {
    const int d = f.shape().d;
    return f.gamma * (Mat::Identity(d, d) - f.k * f.beta.asDiagonal() * f.k.transpose());
}

double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

bool bitwise_equal(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return false;
    }
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a.data()[i] != b.data()[i]) {
            return false;
        }
    }
    return true;
}

double scan_deviation(const ScanOutput& a, const ScanOutput& b) {
    REQUIRE(a.outputs.size() == b.outputs.size());
    double dev = max_abs_diff(a.final_state.s, b.final_state.s);
    for (size_t i = 0; i < a.outputs.size(); ++i) {
        dev = std::max(dev, max_abs_diff(a.outputs[i], b.outputs[i]));
    }
    return dev;
}

}  // namespace

TEST_CASE("single-frame shard summary is (M_t, U_t)") {
    std::mt19937_64 rng(1);
    const auto frames = random_frames(1, 6, 3, rng);
    const ShardSummary summary = shard_summary(frames);
    CHECK(max_abs_diff(summary.c, frame_transition(frames[0])) <= 1e-15);
    const Mat u = frames[0].v * frames[0].beta.asDiagonal() * frames[0].k.transpose();
    CHECK(max_abs_diff(summary.h, u) <= 1e-15);
}

TEST_CASE("empty shard summary is the identity element") {
    const ShardSummary id = ShardSummary::identity(4);
    CHECK(id.c.isIdentity(0.0));
    CHECK(id.h.isZero(0.0));
}

TEST_CASE("shard summary satisfies the affine identity for any start state") {
    std::mt19937_64 rng(2);
    const int d = 5, s = 3;
    const auto frames = random_frames(4, d, s, rng);
    const ShardSummary summary = shard_summary(frames);

    for (const Mat& start : {Mat(Mat::Zero(d, d)), Mat(randn(d, d, rng))}) {
        const ScanOutput scan = seqmodel::gdn_forward_scan(frames, {start});
        const Mat predicted = start * summary.c + summary.h;
        CHECK(max_abs_diff(scan.final_state.s, predicted) <= 1e-12);
    }
}

TEST_CASE("composing adjacent summaries matches the concatenated shard") {
    std::mt19937_64 rng(3);
    const int d = 4, s = 2;
    const auto a = random_frames(3, d, s, rng);
    const auto b = random_frames(5, d, s, rng);
    std::vector<FrameBatch> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());

    const ShardSummary joined = compose(shard_summary(a), shard_summary(b));
    const ShardSummary direct = shard_summary(ab);
    CHECK(max_abs_diff(joined.c, direct.c) <= 1e-12);
    CHECK(max_abs_diff(joined.h, direct.h) <= 1e-12);
}

TEST_CASE("prefix composition starts at zero and accumulates affinely") {
    std::mt19937_64 rng(4);
    const int d = 4, s = 2;
    const auto frames = random_frames(8, d, s, rng);

    SUBCASE("one shard starts at zero") {
        const auto starts = prefix_compose({shard_summary(frames)}, d);
        REQUIRE(starts.size() == 1);
        CHECK(starts[0].s.isZero(0.0));
    }

    SUBCASE("second shard starts at the first input composite") {
        const std::vector<FrameBatch> first(frames.begin(), frames.begin() + 4);
        const std::vector<FrameBatch> second(frames.begin() + 4, frames.end());
        const auto starts = prefix_compose({shard_summary(first), shard_summary(second)}, d);
        REQUIRE(starts.size() == 2);
        CHECK(starts[0].s.isZero(0.0));
        CHECK(max_abs_diff(starts[1].s, shard_summary(first).h) == 0.0);
    }
}

TEST_CASE("per-shard scans seeded by the prefix reproduce the global scan") {
    std::mt19937_64 rng(5);
    const int t = 16, d = 6, s = 4, p = 4;
    const auto frames = random_frames(t, d, s, rng);
    const ScanOutput oracle = seqmodel::gdn_forward_scan(frames, RecurrentState::zero(d));

    const ShardPlan plan = make_plan(t, p);
    std::vector<ShardSummary> summaries;
    for (const FrameRange& r : plan.assignment) {
        summaries.push_back(shard_summary({frames.begin() + r.begin, frames.begin() + r.end}));
    }
    const auto starts = prefix_compose(summaries, d);

    size_t cursor = 0;
    for (size_t shard = 0; shard < plan.assignment.size(); ++shard) {
        const FrameRange& r = plan.assignment[shard];
        const ScanOutput local = seqmodel::gdn_forward_scan(
            {frames.begin() + r.begin, frames.begin() + r.end}, starts[shard]);
        for (const Mat& out : local.outputs) {
            CHECK(max_abs_diff(out, oracle.outputs[cursor]) <= 1e-12);
            ++cursor;
        }
    }
}

TEST_CASE("cp_scan with one shard is the sequential scan bit-for-bit") {
    std::mt19937_64 rng(6);
    const int t = 10, d = 5, s = 3;
    const auto frames = random_frames(t, d, s, rng);
    const ScanOutput seq = seqmodel::gdn_forward_scan(frames, RecurrentState::zero(d));
    const ScanOutput par = cp_scan(frames, make_plan(t, 1));
    CHECK(bitwise_equal(seq.final_state.s, par.final_state.s));
    for (int i = 0; i < t; ++i) {
        CHECK(bitwise_equal(seq.outputs[static_cast<size_t>(i)],
                            par.outputs[static_cast<size_t>(i)]));
    }
}

TEST_CASE("cp_scan deviation stays within 1e-12 for 2, 4, and 8 shards") {
    std::mt19937_64 rng(7);
    const int t = 32, d = 8, s = 4;
    const auto frames = random_frames(t, d, s, rng);
    const ScanOutput oracle = seqmodel::gdn_forward_scan(frames, RecurrentState::zero(d));
    for (int p : {2, 4, 8}) {
        CHECK(scan_deviation(cp_scan(frames, make_plan(t, p)), oracle) <= 1e-12);
    }
}

TEST_CASE("cp_scan output is invariant to the shard count") {
    std::mt19937_64 rng(8);
    const int t = 24, d = 5, s = 3;
    const auto frames = random_frames(t, d, s, rng);
    const ScanOutput oracle = seqmodel::gdn_forward_scan(frames, RecurrentState::zero(d));
    for (int p : {1, 2, 3, 4, 6, 8, 12, 24}) {
        CHECK(scan_deviation(cp_scan(frames, make_plan(t, p)), oracle) <= 1e-12);
    }
}

TEST_CASE("cp_scan handles non-divisible shard counts") {
    std::mt19937_64 rng(9);
    const int t = 13, d = 4, s = 2;
    const auto frames = random_frames(t, d, s, rng);
    const ScanOutput oracle = seqmodel::gdn_forward_scan(frames, RecurrentState::zero(d));
    for (int p : {2, 3, 5, 13}) {
        const ShardPlan plan = make_plan(t, p);
        CHECK(plan.assignment.back().end == t);
        CHECK(scan_deviation(cp_scan(frames, plan), oracle) <= 1e-12);
    }
}

TEST_CASE("all-zero update gates give zero start states everywhere") {
    std::mt19937_64 rng(10);
    const int t = 12, d = 4, s = 3;
    auto frames = random_frames(t, d, s, rng);
    for (FrameBatch& f : frames) {
        f.beta.setZero();
    }
    const ShardPlan plan = make_plan(t, 4);
    std::vector<ShardSummary> summaries;
    for (const FrameRange& r : plan.assignment) {
        summaries.push_back(shard_summary({frames.begin() + r.begin, frames.begin() + r.end}));
    }
    for (const auto& start : prefix_compose(summaries, d)) {
        CHECK(start.s.isZero(0.0));
    }
}

TEST_CASE("cp_scan rejects plans that do not partition the sequence") {
    std::mt19937_64 rng(11);
    const auto frames = random_frames(6, 3, 2, rng);
    ShardPlan bad;
    bad.assignment = {{0, 3}, {4, 6}};  // gap at index 3
    CHECK_THROWS_AS(cp_scan(frames, bad), std::invalid_argument);
    ShardPlan short_plan;
    short_plan.assignment = {{0, 4}};
    CHECK_THROWS_AS(cp_scan(frames, short_plan), std::invalid_argument);
}

namespace {

std::vector<std::vector<Mat>> split_shards(const std::vector<Mat>& frames,
                                           const std::vector<int>& sizes) {
    std::vector<std::vector<Mat>> shards;
    size_t cursor = 0;
    for (int size : sizes) {
        shards.emplace_back(frames.begin() + static_cast<std::ptrdiff_t>(cursor),
                            frames.begin() + static_cast<std::ptrdiff_t>(cursor + size));
        cursor += static_cast<size_t>(size);
    }
    REQUIRE(cursor == frames.size());
    return shards;
}

std::vector<Mat> flatten(const std::vector<std::vector<Mat>>& shards) {
    std::vector<Mat> out;
    for (const auto& shard : shards) {
        out.insert(out.end(), shard.begin(), shard.end());
    }
    return out;
}

std::vector<double> random_kernel(int k, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> kernel(static_cast<size_t>(k));
    for (double& w : kernel) {
        w = normal(rng);
    }
    return kernel;
}

}  // namespace

TEST_CASE("kernel size one exchanges nothing") {
    std::mt19937_64 rng(12);
    std::vector<Mat> frames;
    for (int i = 0; i < 6; ++i) {
        frames.push_back(randn(3, 2, rng));
    }
    const auto shards = split_shards(frames, {3, 3});
    const auto slabs = halo_pad(shards, 1, false);
    REQUIRE(slabs.size() == 2);
    for (size_t p = 0; p < slabs.size(); ++p) {
        CHECK(slabs[p].left == 0);
        CHECK(slabs[p].right == 0);
        REQUIRE(slabs[p].frames.size() == shards[p].size());
        for (size_t i = 0; i < shards[p].size(); ++i) {
            CHECK(bitwise_equal(slabs[p].frames[i], shards[p][i]));
        }
    }
}

TEST_CASE("halo-padded convolution equals the unsharded convolution") {
    std::mt19937_64 rng(13);
    std::vector<Mat> frames;
    for (int i = 0; i < 16; ++i) {
        frames.push_back(randn(4, 3, rng));
    }
    for (const bool causal : {false, true}) {
        for (const int k : {1, 2, 3, 5}) {
            const auto kernel = random_kernel(k, rng);
            const auto expected = temporal_conv(frames, kernel, causal);
            for (const auto& sizes :
                 {std::vector<int>{8, 8}, std::vector<int>{4, 4, 4, 4}, std::vector<int>{16}}) {
                const auto result =
                    flatten(sharded_conv(split_shards(frames, sizes), kernel, causal));
                REQUIRE(result.size() == expected.size());
                for (size_t i = 0; i < expected.size(); ++i) {
                    CHECK(max_abs_diff(result[i], expected[i]) <= 1e-12);
                }
            }
        }
    }
}

TEST_CASE("halos longer than a neighbor walk into earlier shards") {
    std::mt19937_64 rng(14);
    std::vector<Mat> frames;
    for (int i = 0; i < 7; ++i) {
        frames.push_back(randn(3, 2, rng));
    }
    // Shards of length 1 force the K-1 halo to span several neighbors.
    const auto shards = split_shards(frames, {1, 1, 1, 1, 1, 1, 1});
    for (const bool causal : {false, true}) {
        const auto kernel = random_kernel(5, rng);
        const auto expected = temporal_conv(frames, kernel, causal);
        const auto result = flatten(sharded_conv(shards, kernel, causal));
        REQUIRE(result.size() == expected.size());
        for (size_t i = 0; i < expected.size(); ++i) {
            CHECK(max_abs_diff(result[i], expected[i]) <= 1e-12);
        }
    }
}

TEST_CASE("causal halos omit the right side") {
    std::mt19937_64 rng(15);
    std::vector<Mat> frames;
    for (int i = 0; i < 8; ++i) {
        frames.push_back(randn(2, 2, rng));
    }
    const auto slabs = halo_pad(split_shards(frames, {4, 4}), 3, true);
    for (const HaloSlab& slab : slabs) {
        CHECK(slab.left == 2);
        CHECK(slab.right == 0);
        CHECK(slab.frames.size() == 6);
    }
}

TEST_CASE("halo_pad validates the kernel size") {
    std::mt19937_64 rng(16);
    const std::vector<std::vector<Mat>> shards{{randn(2, 2, rng)}};
    CHECK_THROWS_AS(halo_pad(shards, 0, false), std::invalid_argument);
}
