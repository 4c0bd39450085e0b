#pragma once

// Exact context-parallel decomposition of the gated frame-wise scan. The
// scan step S_t = S_{t-1} M_t + U_t is affine in the state, so a shard of
// frames collapses to a transition composite C (product of its M_t, in
// time order) and an input composite H with
//     S_end = S_start * C + H.
// Composites are combined as an exclusive prefix to recover every shard's
// exact start state; the exchange is simulated in-process.
//
// Composition order matches seqmodel: the state is always the LEFT
// operand, so C accumulates as C <- C * M_t.

#include <string>
#include <vector>

#include "worldscan/common.hpp"
#include "worldscan/seqmodel.hpp"

namespace worldscan::cpscan {

struct ShardSummary {
    Mat c;  // D×D transition composite; identity for an empty shard
    Mat h;  // D×D input composite; zero for an empty shard

    static ShardSummary identity(int d) { return {Mat::Identity(d, d), Mat::Zero(d, d)}; }
};

struct FrameRange {
    int begin = 0;  // inclusive
    int end = 0;    // exclusive
};

struct ShardPlan {
    std::vector<FrameRange> assignment;  // contiguous, ordered, partitions [0,T)

    int shard_count() const { return static_cast<int>(assignment.size()); }
    void validate(int total_frames) const;
};

// Even split; when P does not divide T the last shard takes the remainder.
ShardPlan make_plan(int total_frames, int shard_count);

// Composite of one shard. H is materialized by scanning the shard from the
// zero state, which satisfies the affine identity for any start state.
ShardSummary shard_summary(const std::vector<seqmodel::FrameBatch>& frames);

// Affine composition of two adjacent summaries (a before b).
ShardSummary compose(const ShardSummary& a, const ShardSummary& b);

// Exclusive prefix: S̄_0 = 0, S̄_{p+1} = S̄_p C_p + H_p. Returns each
// shard's exact start state.
std::vector<seqmodel::RecurrentState> prefix_compose(const std::vector<ShardSummary>& summaries,
                                                     int d);

// Full context-parallel scan: per-shard summaries, prefix composition,
// then per-shard scans seeded with the recovered start states. With one
// shard this is the sequential scan, operation for operation.
seqmodel::ScanOutput cp_scan(const std::vector<seqmodel::FrameBatch>& frames,
                             const ShardPlan& plan);

// One shard's frames augmented with halo context. `left`/`right` count the
// halo frames to crop after convolving.
struct HaloSlab {
    std::vector<Mat> frames;
    int left = 0;
    int right = 0;
};

// Gives each shard kernel_size-1 frames of left context (and right context
// when not causal) drawn from its neighbors; halos that run past a short
// neighbor keep walking into earlier/later shards, and global sequence
// boundaries are zero-padded.
std::vector<HaloSlab> halo_pad(const std::vector<std::vector<Mat>>& shards, int kernel_size,
                               bool causal);

// Temporal convolution with scalar taps along the frame axis, zero-padded
// at the sequence boundaries. Causal windows end at t; non-causal windows
// are centered with left offset (K-1)/2.
std::vector<Mat> temporal_conv(const std::vector<Mat>& frames, const std::vector<double>& kernel,
                               bool causal);

// halo_pad + temporal_conv + crop, per shard. Concatenated over shards the
// result equals temporal_conv of the unsharded sequence.
std::vector<std::vector<Mat>> sharded_conv(const std::vector<std::vector<Mat>>& shards,
                                           const std::vector<double>& kernel, bool causal);

}  // namespace worldscan::cpscan
