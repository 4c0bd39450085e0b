#include "worldscan/cpscan.hpp"

#include <algorithm>

namespace worldscan::cpscan {

using seqmodel::FrameBatch;
using seqmodel::RecurrentState;
using seqmodel::ScanOutput;

void ShardPlan::validate(int total_frames) const {
    require(!assignment.empty(), "plan needs at least one shard");
    int cursor = 0;
    for (const FrameRange& r : assignment) {
        require(r.begin == cursor && r.end >= r.begin, "plan ranges must be contiguous and ordered");
        cursor = r.end;
    }
    require(cursor == total_frames, "plan must partition the full sequence");
}

ShardPlan make_plan(int total_frames, int shard_count) {
    require(total_frames >= 1, "need at least one frame");
    require(shard_count >= 1, "need at least one shard");
    const int base = total_frames / shard_count;
    ShardPlan plan;
    int cursor = 0;
    for (int p = 0; p < shard_count; ++p) {
        const int len = (p == shard_count - 1) ? total_frames - cursor : base;
        plan.assignment.push_back({cursor, cursor + len});
        cursor += len;
    }
    return plan;
}

ShardSummary shard_summary(const std::vector<FrameBatch>& frames) {
    if (frames.empty()) {
        // Shape unknown for an empty shard; callers that can hit this case
        // should use ShardSummary::identity(d) directly.
        return ShardSummary::identity(0);
    }
    const int d = frames.front().shape().d;
    Mat c = Mat::Identity(d, d);
    for (const FrameBatch& f : frames) {
        f.validate();
        const Mat kb = f.k * f.beta.asDiagonal();
        const Mat m = f.gamma * (Mat::Identity(d, d) - kb * f.k.transpose());
        c = c * m;
    }
    const Mat h = seqmodel::gdn_forward_scan(frames, RecurrentState::zero(d)).final_state.s;
    return {std::move(c), h};
}

ShardSummary compose(const ShardSummary& a, const ShardSummary& b) {
    require(a.c.rows() == b.c.rows(), "summary dimension mismatch");
    return {a.c * b.c, a.h * b.c + b.h};
}

std::vector<RecurrentState> prefix_compose(const std::vector<ShardSummary>& summaries, int d) {
    std::vector<RecurrentState> starts;
    starts.reserve(summaries.size());
    Mat running = Mat::Zero(d, d);
    for (const ShardSummary& s : summaries) {
        starts.push_back({running});
        running = running * s.c + s.h;
    }
    return starts;
}

ScanOutput cp_scan(const std::vector<FrameBatch>& frames, const ShardPlan& plan) {
    require(!frames.empty(), "scan requires a nonempty frame sequence");
    plan.validate(static_cast<int>(frames.size()));
    const int d = frames.front().shape().d;

    std::vector<ShardSummary> summaries;
    summaries.reserve(plan.assignment.size());
    for (const FrameRange& r : plan.assignment) {
        if (r.begin == r.end) {
            summaries.push_back(ShardSummary::identity(d));
            continue;
        }
        std::vector<FrameBatch> shard(frames.begin() + r.begin, frames.begin() + r.end);
        summaries.push_back(shard_summary(shard));
    }

    const std::vector<RecurrentState> starts = prefix_compose(summaries, d);

    ScanOutput result;
    result.outputs.reserve(frames.size());
    result.final_state = RecurrentState::zero(d);
    for (size_t p = 0; p < plan.assignment.size(); ++p) {
        const FrameRange& r = plan.assignment[p];
        if (r.begin == r.end) {
            result.final_state = starts[p];
            continue;
        }
        std::vector<FrameBatch> shard(frames.begin() + r.begin, frames.begin() + r.end);
        ScanOutput local = seqmodel::gdn_forward_scan(shard, starts[p]);
        for (Mat& out : local.outputs) {
            result.outputs.push_back(std::move(out));
        }
        result.final_state = std::move(local.final_state);
    }
    return result;
}

namespace {

// Frame at global index g of the concatenated shard sequence, or zero
// outside [0, total).
Mat global_frame(const std::vector<std::vector<Mat>>& shards,
                 const std::vector<int>& offsets, int total, int g, const Mat& zero) {
    if (g < 0 || g >= total) {
        return zero;
    }
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), g);
    const size_t shard = static_cast<size_t>(it - offsets.begin()) - 1;
    return shards[shard][static_cast<size_t>(g - offsets[shard])];
}

}  // namespace

std::vector<HaloSlab> halo_pad(const std::vector<std::vector<Mat>>& shards, int kernel_size,
                               bool causal) {
    require(kernel_size >= 1, "kernel size must be >= 1");
    require(!shards.empty(), "need at least one shard");

    std::vector<int> offsets;
    int total = 0;
    Eigen::Index rows = 0, cols = 0;
    for (const auto& shard : shards) {
        offsets.push_back(total);
        total += static_cast<int>(shard.size());
        for (const Mat& f : shard) {
            if (rows == 0) {
                rows = f.rows();
                cols = f.cols();
            }
            require(f.rows() == rows && f.cols() == cols, "ragged shard frames");
        }
    }
    require(total > 0, "need at least one frame overall");
    const Mat zero = Mat::Zero(rows, cols);
    const int halo = kernel_size - 1;

    std::vector<HaloSlab> slabs;
    slabs.reserve(shards.size());
    for (size_t p = 0; p < shards.size(); ++p) {
        const int begin = offsets[p];
        const int end = begin + static_cast<int>(shards[p].size());
        HaloSlab slab;
        slab.left = halo;
        slab.right = causal ? 0 : halo;
        for (int g = begin - slab.left; g < end + slab.right; ++g) {
            slab.frames.push_back(global_frame(shards, offsets, total, g, zero));
        }
        slabs.push_back(std::move(slab));
    }
    return slabs;
}

std::vector<Mat> temporal_conv(const std::vector<Mat>& frames, const std::vector<double>& kernel,
                               bool causal) {
    require(!frames.empty(), "convolution requires frames");
    require(!kernel.empty(), "kernel must be nonempty");
    const int k = static_cast<int>(kernel.size());
    const int n = static_cast<int>(frames.size());
    const int left = causal ? k - 1 : (k - 1) / 2;

    std::vector<Mat> out;
    out.reserve(frames.size());
    for (int t = 0; t < n; ++t) {
        Mat acc = Mat::Zero(frames.front().rows(), frames.front().cols());
        for (int j = 0; j < k; ++j) {
            const int src = t - left + j;
            if (src >= 0 && src < n) {
                acc += kernel[static_cast<size_t>(j)] * frames[static_cast<size_t>(src)];
            }
        }
        out.push_back(std::move(acc));
    }
    return out;
}

std::vector<std::vector<Mat>> sharded_conv(const std::vector<std::vector<Mat>>& shards,
                                           const std::vector<double>& kernel, bool causal) {
    const std::vector<HaloSlab> slabs = halo_pad(shards, static_cast<int>(kernel.size()), causal);
    std::vector<std::vector<Mat>> out;
    out.reserve(slabs.size());
    for (const HaloSlab& slab : slabs) {
        if (slab.frames.empty()) {
            out.emplace_back();
            continue;
        }
        std::vector<Mat> conv = temporal_conv(slab.frames, kernel, causal);
        out.emplace_back(conv.begin() + slab.left,
                         conv.end() - slab.right);
    }
    return out;
}

}  // namespace worldscan::cpscan
