#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace worldscan {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Ray-local basis construction hit a parallel up/direction pair.
struct DegenerateBasisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Similarity alignment is underdetermined (too few or collinear points).
struct AlignmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rejection sampler exhausted its draw budget.
struct SamplingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw std::invalid_argument(msg);
    }
}

}  // namespace worldscan
