#pragma once

// Truncated-sigma flow-matching math for the second-stage refiner: source
// construction, truncated noise-level sampling, interpolation, target
// velocity, masked loss, and the few-step Euler schedule.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "worldscan/common.hpp"

namespace worldscan::refiner {

using Array = Eigen::ArrayXd;

inline constexpr double kSigmaStart = 0.909375;

// Distilled three-step schedule [0.909375, 0.725, 0.421875, 0].
std::vector<double> distilled_sigmas();

struct LatentPair {
    Array x_l;  // degraded latent
    Array x_h;  // high-fidelity target, same shape
    void validate() const;
};

struct SigmaSchedule {
    double sigma_start = kSigmaStart;
    std::vector<double> steps;  // strictly descending, steps[0]=sigma_start, last=0

    void validate() const;
    static SigmaSchedule distilled();
};

struct LogitNormalParams {
    double mean = 0.0;
    double std_dev = 1.0;
    double shift = 0.0;
    void validate() const;
};

// x_1 = (1 - sigma_start) x_l + sigma_start * noise.
Array make_source(const Array& x_l, double sigma_start, const Array& noise);

// sigmoid(Normal(mean, std)) + shift, rejection-sampled into
// (0, sigma_start]. Throws SamplingError after 1e4 rejected draws.
double sample_sigma(const LogitNormalParams& params, double sigma_start, std::mt19937_64& rng);

// x_t = (1 - alpha) x_h + alpha x_1 with alpha = sigma_t / sigma_start.
Array interpolate(const Array& x_h, const Array& x_1, double sigma_t, double sigma_start);

// v* = (x_1 - x_h) / sigma_start; satisfies x_t - sigma_t v* = x_h.
Array target_velocity(const Array& x_1, const Array& x_h, double sigma_start);

// Mean squared error over all elements.
double refiner_loss(const Array& pred_v, const Array& v_star);
// Masked variant: mean over included elements only (reference-conditioning
// tokens are excluded this way).
double refiner_loss(const Array& pred_v, const Array& v_star, const std::vector<bool>& mask);

using VelocityFn = std::function<Array(const Array& x, double sigma)>;

struct EulerStepTrace {
    double sigma = 0.0;
    double mean_abs = 0.0;  // mean |x| after stepping to this sigma
};

// x <- x - (sigma_i - sigma_{i+1}) * velocity_fn(x, sigma_i) over the
// schedule. The optional trace records mean |x| after each step.
Array euler_refine(const Array& x_start, const SigmaSchedule& schedule,
                   const VelocityFn& velocity_fn, std::vector<EulerStepTrace>* trace = nullptr);

std::string euler_trace_to_json(const std::vector<EulerStepTrace>& trace);

}  // namespace worldscan::refiner
