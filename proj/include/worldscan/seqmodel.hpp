#pragma once

// Frame-wise recurrent attention kernels: cumulative linear attention,
// gated delta-rule recurrences in token-wise and frame-wise form, key
// stabilization, bidirectional / chunk-causal scans, windowed softmax
// attention with sink frames, and the hybrid block schedule.
//
// Convention used throughout: the recurrent state is the LEFT operand of
// the transition matrix, S_t = S_{t-1} * M_t + U_t. All kernels are pure
// functions over value-semantic inputs and safe to call concurrently.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "worldscan/common.hpp"

namespace worldscan::seqmodel {

struct HeadShape {
    int d = 0;  // channels per head
    int s = 0;  // spatial tokens per latent frame
    void validate() const;
    bool operator==(const HeadShape&) const = default;
};

// Per-latent-frame inputs for one head. For the gated scans, `k` is
// expected to be pre-stabilized (see stabilize_keys) and `q` prepared with
// the same norm/ReLU pipeline minus the key scale (see prepare_queries).
struct FrameBatch {
    Mat q;              // D×S
    Mat k;              // D×S
    Mat v;              // D×S
    Vec beta;           // length S, entries in [0,1]
    double gamma = 1.0; // (0,1]

    HeadShape shape() const { return {static_cast<int>(k.rows()), static_cast<int>(k.cols())}; }
    void validate() const;
};

struct RecurrentState {
    Mat s;  // D×D

    static RecurrentState zero(int d) { return {Mat::Zero(d, d)}; }
};

struct ScanOutput {
    std::vector<Mat> outputs;  // one D×S matrix per frame
    RecurrentState final_state;
};

struct LayerSchedule {
    int total_blocks = 0;
    std::vector<int> softmax_positions;  // sorted, unique, 0-based

    bool is_softmax(int block) const;
    void validate() const;
};

struct WindowConfig {
    int sink_frames = 0;    // leading frames always attendable
    int window_frames = 1;  // trailing local frames, incl. the query frame
    void validate() const;
};

enum class KeyScaling {
    none,   // ReLU(RMSNorm(K)) only
    l2,     // additional 1/sqrt(D)
    frame,  // additional 1/sqrt(D*S); the stabilized form
};

enum class Precision { f64, f32 };

// Column-wise RMSNorm over the D channels (epsilon 1e-6) followed by ReLU.
Mat relu_rmsnorm(const Mat& x);

// relu_rmsnorm plus the requested key scale.
Mat prepare_keys(const Mat& k_raw, KeyScaling mode);

// Stabilized keys: ReLU(RMSNorm(K)) * (D*S)^(-1/2). With beta in [0,1]^S
// this makes tr(K̂ β K̂ᵀ) <= 1 and the frame transition non-expansive.
Mat stabilize_keys(const Mat& k_raw, const HeadShape& shape);

// Queries go through the same RMSNorm+ReLU pipeline but are NOT scaled;
// only the keys carry the 1/sqrt(D*S) factor.
Mat prepare_queries(const Mat& q_raw);

// Cumulative linear attention (phi = ReLU applied to the raw Q/K):
//   A_t = A_{t-1} + V_t phi(K_t)ᵀ,  O_t = A_t phi(Q_t),  A_{-1} = 0.
// With `normalize` set, each output token is divided by the accumulated
// key-sum inner product with phi(q) plus epsilon 1e-6.
ScanOutput linear_attention_scan(const std::vector<FrameBatch>& frames, bool normalize = false);

// Token-wise gated delta rule:
//   S_i = gamma*S_{i-1} + (v - gamma*S_{i-1} k̂) beta k̂ᵀ,  o_i = S_i q̂.
// k̂/q̂ are taken as given; callers own the normalization convention.
// Implemented as the S=1 case of the frame-wise transition so the two
// forms agree bit-for-bit.
std::pair<RecurrentState, Vec> gdn_token_step(const RecurrentState& state, const Vec& q_hat,
                                              const Vec& k_hat, const Vec& v, double beta,
                                              double gamma);

// Frame-wise gated delta rule:
//   M_t = gamma_t (I - K̂_t β_t K̂_tᵀ),  S_t = S_{t-1} M_t + V_t β_t K̂_tᵀ,
//   O_t = S_t Q̂_t.
std::pair<RecurrentState, Mat> gdn_frame_step(const RecurrentState& state, const FrameBatch& frame);

// Left-to-right fold of gdn_frame_step. Precision::f32 runs the identical
// recurrence in single precision (inputs/outputs stay double).
ScanOutput gdn_forward_scan(const std::vector<FrameBatch>& frames, const RecurrentState& init,
                            Precision precision = Precision::f64);

// Sum of the forward scan and a reversed-time scan whose outputs are
// re-reversed before summation so both addends align per frame.
// final_state is the forward scan's end state.
ScanOutput gdn_bidirectional_scan(const std::vector<FrameBatch>& frames);

// Forward component stays global; the reverse component restarts from the
// zero state at every chunk boundary and never crosses into later chunks.
ScanOutput gdn_chunk_causal_scan(const std::vector<FrameBatch>& frames, int chunk_len);

// Causal softmax attention over latent frames where frame t sees tokens in
// frames {0..sink-1} ∪ {max(0,t-window+1)..t}; logits scaled by 1/sqrt(D).
std::vector<Mat> softmax_attention_windowed(const std::vector<Mat>& q, const std::vector<Mat>& k,
                                            const std::vector<Mat>& v, const WindowConfig& cfg);

// Softmax blocks every `period` blocks, last index of each period by
// default (total=20, period=4 -> {3,7,11,15,19}).
LayerSchedule periodic_layer_schedule(int total_blocks, int period,
                                      std::optional<int> offset = std::nullopt);
LayerSchedule explicit_layer_schedule(int total_blocks, std::vector<int> positions);

// Per-block mixer parameters for the toy hybrid stack. Absent projections
// mean identity.
struct BlockParams {
    std::optional<Mat> wq;
    std::optional<Mat> wk;
    std::optional<Mat> wv;
    std::optional<Mat> wo;
    double gamma = 0.95;
    double beta = 1.0;
    int chunk_len = 4;          // GDN blocks
    WindowConfig window{1, 4};  // softmax blocks
};

// Applies each block's mixer (chunk-causal GDN or windowed softmax per the
// schedule) with a residual connection, in block order.
std::vector<Mat> hybrid_stack_apply(const std::vector<Mat>& frames, const LayerSchedule& schedule,
                                    const std::vector<BlockParams>& params);

// One row of the serializable scan trace. Norms are Frobenius.
struct ScanStepTrace {
    int frame_index = 0;
    double state_norm = 0.0;
    double output_norm = 0.0;
};

// Runs the gated scan on RAW q/k/v batches, preparing keys per `mode` and
// queries with prepare_queries, and records per-step norms.
std::vector<ScanStepTrace> trace_gdn_scan(const std::vector<FrameBatch>& raw_frames,
                                          KeyScaling mode);

std::string trace_to_json(const std::vector<ScanStepTrace>& trace);
std::string trace_to_csv(const std::vector<ScanStepTrace>& trace);

// First step whose state norm exceeds 1e6 or is non-finite, if any.
std::optional<int> first_unstable_step(const std::vector<ScanStepTrace>& trace);

}  // namespace worldscan::seqmodel
