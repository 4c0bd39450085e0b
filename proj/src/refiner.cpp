#include "worldscan/refiner.hpp"

#include <cmath>

#include <json.hpp>

namespace worldscan::refiner {

namespace {
constexpr int kMaxRejectionDraws = 10000;
}

std::vector<double> distilled_sigmas() { return {0.909375, 0.725, 0.421875, 0.0}; }

void LatentPair::validate() const {
    require(x_l.size() == x_h.size(), "latent pair shapes must match");
    require(x_l.allFinite() && x_h.allFinite(), "latents must be finite");
}

void SigmaSchedule::validate() const {
    require(sigma_start > 0.0 && sigma_start <= 1.0, "sigma_start must lie in (0,1]");
    require(steps.size() >= 2, "schedule needs at least two levels");
    require(steps.front() == sigma_start, "schedule must begin at sigma_start");
    require(steps.back() == 0.0, "schedule must end at zero");
    for (size_t i = 1; i < steps.size(); ++i) {
        require(steps[i] < steps[i - 1], "schedule must be strictly descending");
    }
}

SigmaSchedule SigmaSchedule::distilled() {
    SigmaSchedule s{kSigmaStart, distilled_sigmas()};
    s.validate();
    return s;
}

void LogitNormalParams::validate() const {
    require(std_dev > 0.0, "std must be positive");
}

Array make_source(const Array& x_l, double sigma_start, const Array& noise) {
    require(sigma_start >= 0.0 && sigma_start <= 1.0, "sigma_start must lie in [0,1]");
    require(x_l.size() == noise.size(), "latent/noise shapes must match");
    return (1.0 - sigma_start) * x_l + sigma_start * noise;
}

double sample_sigma(const LogitNormalParams& params, double sigma_start, std::mt19937_64& rng) {
    params.validate();
    require(sigma_start > 0.0 && sigma_start <= 1.0, "sigma_start must lie in (0,1]");

    std::normal_distribution<double> normal(params.mean, params.std_dev);
    for (int draw = 0; draw < kMaxRejectionDraws; ++draw) {
        const double z = normal(rng);
        const double sigma = 1.0 / (1.0 + std::exp(-z)) + params.shift;
        if (sigma > 0.0 && sigma <= sigma_start) {
            return sigma;
        }
    }
    throw SamplingError("rejection sampler exhausted its draw budget");
}

Array interpolate(const Array& x_h, const Array& x_1, double sigma_t, double sigma_start) {
    require(sigma_start > 0.0, "sigma_start must be positive");
    require(sigma_t > 0.0 && sigma_t <= sigma_start, "sigma_t must lie in (0, sigma_start]");
    require(x_h.size() == x_1.size(), "shapes must match");
    const double alpha = sigma_t / sigma_start;
    return (1.0 - alpha) * x_h + alpha * x_1;
}

Array target_velocity(const Array& x_1, const Array& x_h, double sigma_start) {
    require(sigma_start > 0.0, "sigma_start must be positive");
    require(x_1.size() == x_h.size(), "shapes must match");
    return (x_1 - x_h) / sigma_start;
}

double refiner_loss(const Array& pred_v, const Array& v_star) {
    require(pred_v.size() == v_star.size(), "shapes must match");
    require(pred_v.size() > 0, "loss over an empty array");
    return (pred_v - v_star).square().mean();
}

double refiner_loss(const Array& pred_v, const Array& v_star, const std::vector<bool>& mask) {
    require(pred_v.size() == v_star.size(), "shapes must match");
    require(mask.size() == static_cast<size_t>(pred_v.size()), "mask length must match");
    double sum = 0.0;
    long count = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            const double d = pred_v[static_cast<Eigen::Index>(i)] -
                             v_star[static_cast<Eigen::Index>(i)];
            sum += d * d;
            ++count;
        }
    }
    require(count > 0, "mask excludes every element");
    return sum / static_cast<double>(count);
}

Array euler_refine(const Array& x_start, const SigmaSchedule& schedule,
                   const VelocityFn& velocity_fn, std::vector<EulerStepTrace>* trace) {
    schedule.validate();
    Array x = x_start;
    if (trace != nullptr) {
        trace->clear();
        trace->push_back({schedule.steps.front(), x.abs().mean()});
    }
    for (size_t i = 0; i + 1 < schedule.steps.size(); ++i) {
        const double sigma = schedule.steps[i];
        const double sigma_next = schedule.steps[i + 1];
        x -= (sigma - sigma_next) * velocity_fn(x, sigma);
        if (trace != nullptr) {
            trace->push_back({sigma_next, x.abs().mean()});
        }
    }
    return x;
}

std::string euler_trace_to_json(const std::vector<EulerStepTrace>& trace) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const EulerStepTrace& step : trace) {
        nlohmann::ordered_json row;
        row["sigma"] = step.sigma;
        row["mean_abs"] = step.mean_abs;
        rows.push_back(std::move(row));
    }
    return rows.dump(2) + "\n";
}

}  // namespace worldscan::refiner
