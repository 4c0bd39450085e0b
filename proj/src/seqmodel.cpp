#include "worldscan/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace worldscan::seqmodel {

namespace {

constexpr double kRmsNormEps = 1e-6;
constexpr double kLinearAttnEps = 1e-6;

template <typename Scalar>
using DynMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DynVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// One frame-wise recurrence step, shared by both precisions and by the
// token-wise wrapper:
//   M = gamma (I - K β Kᵀ),  S <- S M + V β Kᵀ,  O = S Q.
template <typename Scalar>
void frame_step_inplace(DynMat<Scalar>& state, const DynMat<Scalar>& q, const DynMat<Scalar>& k,
                        const DynMat<Scalar>& v, const DynVec<Scalar>& beta, Scalar gamma,
                        DynMat<Scalar>& out) {
    const Eigen::Index d = k.rows();
    const DynMat<Scalar> kb = k * beta.asDiagonal();
    const DynMat<Scalar> m =
        gamma * (DynMat<Scalar>::Identity(d, d) - kb * k.transpose());
    state = state * m + v * kb.transpose();
    out = state * q;
}

void check_uniform_shapes(const std::vector<FrameBatch>& frames) {
    require(!frames.empty(), "scan requires a nonempty frame sequence");
    const HeadShape shape = frames.front().shape();
    for (const FrameBatch& f : frames) {
        f.validate();
        require(f.shape() == shape, "all frames must share one head shape");
    }
}

}  // namespace

void HeadShape::validate() const {
    require(d >= 1 && s >= 1, "head shape requires d >= 1 and s >= 1");
}

void FrameBatch::validate() const {
    shape().validate();
    require(q.rows() == k.rows() && q.cols() == k.cols(), "q/k shape mismatch");
    require(v.rows() == k.rows() && v.cols() == k.cols(), "v/k shape mismatch");
    require(beta.size() == k.cols(), "beta length must equal token count");
    require(q.allFinite() && k.allFinite() && v.allFinite(), "frame entries must be finite");
    require((beta.array() >= 0.0).all() && (beta.array() <= 1.0).all(), "beta must lie in [0,1]");
    require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0,1]");
}

bool LayerSchedule::is_softmax(int block) const {
    return std::binary_search(softmax_positions.begin(), softmax_positions.end(), block);
}

void LayerSchedule::validate() const {
    require(total_blocks >= 1, "schedule needs at least one block");
    int prev = -1;
    for (int p : softmax_positions) {
        require(p >= 0 && p < total_blocks, "softmax position out of range");
        require(p > prev, "softmax positions must be strictly increasing");
        prev = p;
    }
}

void WindowConfig::validate() const {
    require(sink_frames >= 0, "sink_frames must be >= 0");
    require(window_frames >= 1, "window_frames must be >= 1");
}

Mat relu_rmsnorm(const Mat& x) {
    require(x.allFinite(), "non-finite input");
    Mat out(x.rows(), x.cols());
    const double d = static_cast<double>(x.rows());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double rms = std::sqrt(x.col(c).squaredNorm() / d + kRmsNormEps);
        out.col(c) = (x.col(c) / rms).cwiseMax(0.0);
    }
    return out;
}

Mat prepare_keys(const Mat& k_raw, KeyScaling mode) {
    Mat k = relu_rmsnorm(k_raw);
    switch (mode) {
        case KeyScaling::none:
            break;
        case KeyScaling::l2:
            k *= 1.0 / std::sqrt(static_cast<double>(k.rows()));
            break;
        case KeyScaling::frame:
            k *= 1.0 / std::sqrt(static_cast<double>(k.rows()) * static_cast<double>(k.cols()));
            break;
    }
    return k;
}

Mat stabilize_keys(const Mat& k_raw, const HeadShape& shape) {
    shape.validate();
    require(k_raw.rows() == shape.d && k_raw.cols() == shape.s, "key matrix does not match shape");
    return prepare_keys(k_raw, KeyScaling::frame);
}

Mat prepare_queries(const Mat& q_raw) { return relu_rmsnorm(q_raw); }

ScanOutput linear_attention_scan(const std::vector<FrameBatch>& frames, bool normalize) {
    check_uniform_shapes(frames);
    const HeadShape shape = frames.front().shape();

    Mat acc = Mat::Zero(shape.d, shape.d);
    Vec key_sum = Vec::Zero(shape.d);
    ScanOutput result;
    result.outputs.reserve(frames.size());
    for (const FrameBatch& f : frames) {
        const Mat k_phi = f.k.cwiseMax(0.0);
        const Mat q_phi = f.q.cwiseMax(0.0);
        acc += f.v * k_phi.transpose();
        Mat out = acc * q_phi;
        if (normalize) {
            key_sum += k_phi.rowwise().sum();
            for (Eigen::Index c = 0; c < out.cols(); ++c) {
                out.col(c) /= key_sum.dot(q_phi.col(c)) + kLinearAttnEps;
            }
        }
        result.outputs.push_back(std::move(out));
    }
    result.final_state = {acc};
    return result;
}

std::pair<RecurrentState, Vec> gdn_token_step(const RecurrentState& state, const Vec& q_hat,
                                              const Vec& k_hat, const Vec& v, double beta,
                                              double gamma) {
    require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
    require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0,1]");
    require(k_hat.size() == q_hat.size() && v.size() == k_hat.size(), "q/k/v length mismatch");
    require(state.s.rows() == k_hat.size() && state.s.cols() == k_hat.size(),
            "state does not match head dimension");

    Mat s = state.s;
    const Mat q = q_hat;
    const Mat k = k_hat;
    const Mat val = v;
    Vec b(1);
    b << beta;
    Mat out;
    frame_step_inplace<double>(s, q, k, val, b, gamma, out);
    return {RecurrentState{std::move(s)}, Vec(out.col(0))};
}

std::pair<RecurrentState, Mat> gdn_frame_step(const RecurrentState& state, const FrameBatch& frame) {
    frame.validate();
    const HeadShape shape = frame.shape();
    require(state.s.rows() == shape.d && state.s.cols() == shape.d,
            "state does not match head dimension");

    Mat s = state.s;
    Mat out;
    frame_step_inplace<double>(s, frame.q, frame.k, frame.v, frame.beta, frame.gamma, out);
    return {RecurrentState{std::move(s)}, std::move(out)};
}

namespace {

template <typename Scalar>
ScanOutput run_scan(const std::vector<FrameBatch>& frames, const RecurrentState& init) {
    DynMat<Scalar> state = init.s.cast<Scalar>();
    ScanOutput result;
    result.outputs.reserve(frames.size());
    for (const FrameBatch& f : frames) {
        DynMat<Scalar> q = f.q.cast<Scalar>();
        DynMat<Scalar> k = f.k.cast<Scalar>();
        DynMat<Scalar> v = f.v.cast<Scalar>();
        DynVec<Scalar> beta = f.beta.cast<Scalar>();
        DynMat<Scalar> out;
        frame_step_inplace<Scalar>(state, q, k, v, beta, static_cast<Scalar>(f.gamma), out);
        result.outputs.push_back(out.template cast<double>());
    }
    result.final_state = {state.template cast<double>()};
    return result;
}

}  // namespace

ScanOutput gdn_forward_scan(const std::vector<FrameBatch>& frames, const RecurrentState& init,
                            Precision precision) {
    check_uniform_shapes(frames);
    const HeadShape shape = frames.front().shape();
    require(init.s.rows() == shape.d && init.s.cols() == shape.d,
            "initial state does not match head dimension");
    if (precision == Precision::f32) {
        return run_scan<float>(frames, init);
    }

    RecurrentState state = init;
    ScanOutput result;
    result.outputs.reserve(frames.size());
    for (const FrameBatch& f : frames) {
        auto [next, out] = gdn_frame_step(state, f);
        state = std::move(next);
        result.outputs.push_back(std::move(out));
    }
    result.final_state = std::move(state);
    return result;
}

namespace {

// Zero-start scan over the time-reversed slice, outputs re-reversed so they
// align with the forward frame order.
std::vector<Mat> reverse_component(const std::vector<FrameBatch>& frames, size_t begin, size_t end) {
    const int d = frames.front().shape().d;
    std::vector<FrameBatch> reversed(frames.begin() + static_cast<std::ptrdiff_t>(begin),
                                     frames.begin() + static_cast<std::ptrdiff_t>(end));
    std::reverse(reversed.begin(), reversed.end());
    ScanOutput scan = gdn_forward_scan(reversed, RecurrentState::zero(d));
    std::reverse(scan.outputs.begin(), scan.outputs.end());
    return scan.outputs;
}

}  // namespace

ScanOutput gdn_bidirectional_scan(const std::vector<FrameBatch>& frames) {
    check_uniform_shapes(frames);
    const int d = frames.front().shape().d;
    ScanOutput forward = gdn_forward_scan(frames, RecurrentState::zero(d));
    std::vector<Mat> reverse = reverse_component(frames, 0, frames.size());
    for (size_t t = 0; t < frames.size(); ++t) {
        forward.outputs[t] += reverse[t];
    }
    return forward;
}

ScanOutput gdn_chunk_causal_scan(const std::vector<FrameBatch>& frames, int chunk_len) {
    check_uniform_shapes(frames);
    require(chunk_len >= 1, "chunk_len must be >= 1");
    const int d = frames.front().shape().d;

    ScanOutput forward = gdn_forward_scan(frames, RecurrentState::zero(d));
    const size_t n = frames.size();
    for (size_t begin = 0; begin < n; begin += static_cast<size_t>(chunk_len)) {
        const size_t end = std::min(n, begin + static_cast<size_t>(chunk_len));
        std::vector<Mat> reverse = reverse_component(frames, begin, end);
        for (size_t t = begin; t < end; ++t) {
            forward.outputs[t] += reverse[t - begin];
        }
    }
    return forward;
}

std::vector<Mat> softmax_attention_windowed(const std::vector<Mat>& q, const std::vector<Mat>& k,
                                            const std::vector<Mat>& v, const WindowConfig& cfg) {
    cfg.validate();
    require(!q.empty() && q.size() == k.size() && q.size() == v.size(),
            "q/k/v must be nonempty and equally long");
    const Eigen::Index d = q.front().rows();
    const Eigen::Index s = q.front().cols();
    for (size_t t = 0; t < q.size(); ++t) {
        require(q[t].rows() == d && k[t].rows() == d && v[t].rows() == d &&
                    q[t].cols() == s && k[t].cols() == s && v[t].cols() == s,
                "ragged attention stacks");
    }

    const int frame_count = static_cast<int>(q.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Mat> outputs(q.size());
    for (int t = 0; t < frame_count; ++t) {
        std::vector<int> visible;
        const int window_start = std::max(0, t - cfg.window_frames + 1);
        for (int f = 0; f < frame_count; ++f) {
            if (f < cfg.sink_frames || (f >= window_start && f <= t)) {
                visible.push_back(f);
            }
        }
        const Eigen::Index n_keys = static_cast<Eigen::Index>(visible.size()) * s;
        Mat keys(d, n_keys);
        Mat values(d, n_keys);
        for (size_t i = 0; i < visible.size(); ++i) {
            keys.middleCols(static_cast<Eigen::Index>(i) * s, s) = k[static_cast<size_t>(visible[i])];
            values.middleCols(static_cast<Eigen::Index>(i) * s, s) = v[static_cast<size_t>(visible[i])];
        }
        Mat logits = scale * (keys.transpose() * q[static_cast<size_t>(t)]);  // n_keys × S
        Mat weights(logits.rows(), logits.cols());
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const Vec shifted = logits.col(c).array() - logits.col(c).maxCoeff();
            const Vec e = shifted.array().exp();
            weights.col(c) = e / e.sum();
        }
        outputs[static_cast<size_t>(t)] = values * weights;
    }
    return outputs;
}

LayerSchedule periodic_layer_schedule(int total_blocks, int period, std::optional<int> offset) {
    require(total_blocks >= 1, "total_blocks must be >= 1");
    require(period >= 1, "period must be >= 1");
    const int start = offset.value_or(period - 1);
    require(start >= 0 && start < period, "offset must lie in [0, period)");
    LayerSchedule sched{total_blocks, {}};
    for (int p = start; p < total_blocks; p += period) {
        sched.softmax_positions.push_back(p);
    }
    sched.validate();
    return sched;
}

LayerSchedule explicit_layer_schedule(int total_blocks, std::vector<int> positions) {
    std::sort(positions.begin(), positions.end());
    LayerSchedule sched{total_blocks, std::move(positions)};
    sched.validate();
    return sched;
}

namespace {

Mat project(const std::optional<Mat>& w, const Mat& x) {
    if (!w.has_value()) {
        return x;
    }
    require(w->rows() == x.rows() && w->cols() == x.rows(), "projection must be D×D");
    return *w * x;
}

}  // namespace

std::vector<Mat> hybrid_stack_apply(const std::vector<Mat>& frames, const LayerSchedule& schedule,
                                    const std::vector<BlockParams>& params) {
    schedule.validate();
    require(!frames.empty(), "hybrid stack requires a nonempty sequence");
    require(params.size() == static_cast<size_t>(schedule.total_blocks),
            "one BlockParams entry per block");
    const Eigen::Index d = frames.front().rows();
    const Eigen::Index s = frames.front().cols();
    for (const Mat& f : frames) {
        require(f.rows() == d && f.cols() == s, "ragged frame sequence");
    }

    std::vector<Mat> x = frames;
    for (int b = 0; b < schedule.total_blocks; ++b) {
        const BlockParams& bp = params[static_cast<size_t>(b)];
        std::vector<Mat> mixed;
        if (schedule.is_softmax(b)) {
            std::vector<Mat> q(x.size()), k(x.size()), v(x.size());
            for (size_t t = 0; t < x.size(); ++t) {
                q[t] = project(bp.wq, x[t]);
                k[t] = project(bp.wk, x[t]);
                v[t] = project(bp.wv, x[t]);
            }
            mixed = softmax_attention_windowed(q, k, v, bp.window);
        } else {
            std::vector<FrameBatch> batches(x.size());
            for (size_t t = 0; t < x.size(); ++t) {
                FrameBatch& fb = batches[t];
                fb.q = prepare_queries(project(bp.wq, x[t]));
                fb.k = prepare_keys(project(bp.wk, x[t]), KeyScaling::frame);
                fb.v = project(bp.wv, x[t]);
                fb.beta = Vec::Constant(s, bp.beta);
                fb.gamma = bp.gamma;
            }
            mixed = gdn_chunk_causal_scan(batches, bp.chunk_len).outputs;
        }
        for (size_t t = 0; t < x.size(); ++t) {
            x[t] += project(bp.wo, mixed[t]);
        }
    }
    return x;
}

std::vector<ScanStepTrace> trace_gdn_scan(const std::vector<FrameBatch>& raw_frames,
                                          KeyScaling mode) {
    check_uniform_shapes(raw_frames);
    const int d = raw_frames.front().shape().d;

    RecurrentState state = RecurrentState::zero(d);
    std::vector<ScanStepTrace> trace;
    trace.reserve(raw_frames.size());
    for (size_t t = 0; t < raw_frames.size(); ++t) {
        FrameBatch prepared = raw_frames[t];
        prepared.q = prepare_queries(raw_frames[t].q);
        prepared.k = prepare_keys(raw_frames[t].k, mode);

        // Inline step instead of gdn_frame_step: validation would reject the
        // non-finite states this trace exists to record.
        Mat out;
        frame_step_inplace<double>(state.s, prepared.q, prepared.k, prepared.v, prepared.beta,
                                   prepared.gamma, out);
        trace.push_back({static_cast<int>(t), state.s.norm(), out.norm()});
    }
    return trace;
}

std::string trace_to_json(const std::vector<ScanStepTrace>& trace) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const ScanStepTrace& step : trace) {
        nlohmann::ordered_json row;
        row["frame_index"] = step.frame_index;
        // Non-finite norms serialize as null; the CSV twin keeps the text form.
        row["state_norm"] = step.state_norm;
        row["output_norm"] = step.output_norm;
        rows.push_back(std::move(row));
    }
    return rows.dump(2) + "\n";
}

std::string trace_to_csv(const std::vector<ScanStepTrace>& trace) {
    std::string out = "frame_index,state_norm,output_norm\n";
    char buf[96];
    for (const ScanStepTrace& step : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", step.frame_index, step.state_norm,
                      step.output_norm);
        out += buf;
    }
    return out;
}

std::optional<int> first_unstable_step(const std::vector<ScanStepTrace>& trace) {
    for (const ScanStepTrace& step : trace) {
        if (!std::isfinite(step.state_norm) || step.state_norm > 1e6) {
            return step.frame_index;
        }
    }
    return std::nullopt;
}

}  // namespace worldscan::seqmodel
