#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "owdet/tensor.hpp"

// Central finite-difference gradient oracle. Independent of the tape: it only
// re-runs the forward function with perturbed parameter values.
namespace fdcheck {

struct Result {
    bool ok = true;
    std::string detail;
};

inline Result compare_gradients(const owdet::Tensor& target,
                                const std::function<owdet::Tensor()>& forward, double h = 1e-5,
                                double rtol = 1e-4, double atol = 1e-7) {
    owdet::Tape::instance().clear();
    target.zero_grad();
    owdet::Tensor loss = forward();
    owdet::backward(loss);
    const std::vector<double> analytic = target.grad();

    auto& values = target.mutable_values();
    Result res;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        double f_plus, f_minus;
        {
            owdet::NoGradGuard guard;
            values[i] = saved + h;
            f_plus = forward().item();
            values[i] = saved - h;
            f_minus = forward().item();
        }
        values[i] = saved;
        const double fd = (f_plus - f_minus) / (2.0 * h);
        const double a = analytic[i];
        const double err = std::abs(a - fd);
        const double bound = std::max(rtol * std::max(std::abs(a), std::abs(fd)), atol);
        if (!(err <= bound)) {
            res.ok = false;
            res.detail = "coordinate " + std::to_string(i) + ": analytic " + std::to_string(a) +
                         " vs fd " + std::to_string(fd) + " (err " + std::to_string(err) + ")";
            return res;
        }
    }
    return res;
}

}  // namespace fdcheck
