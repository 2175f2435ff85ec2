#pragma once

// Central finite-difference gradient oracle. Uses only forward evaluations,
// so it stays independent of the backward implementation it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "aef/rng.hpp"
#include "aef/tensor.hpp"

namespace aef::testing {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int probes = 0;
    std::string worst;  // description of the worst probe
    bool ok(double tol) const { return max_rel_err < tol; }
};

// Checks d(loss)/d(inputs[i]) against central differences at `probes` random
// elements of each input. `loss_fn` must rebuild the graph from the inputs'
// current values on every call.
template <class T>
GradCheckResult gradcheck(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> inputs,
                          Rng& rng, int probes_per_input = 10, T step = T(1e-5)) {
    GradCheckResult res;
    auto loss = loss_fn();
    backward(loss);

    std::vector<std::vector<T>> analytic;
    for (auto& in : inputs) analytic.push_back(in.grad());

    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        auto& in = inputs[ii];
        for (int p = 0; p < probes_per_input; ++p) {
            const size_t idx = size_t(rng.uniform_int(0, int64_t(in.data().size()) - 1));
            const T orig = in.data()[idx];
            in.data()[idx] = orig + step;
            const T lp = loss_fn().item();
            in.data()[idx] = orig - step;
            const T lm = loss_fn().item();
            in.data()[idx] = orig;
            const double fd = double(lp - lm) / double(2 * step);
            const double an = double(analytic[ii][idx]);
            const double abs_err = std::abs(fd - an);
            const double rel = abs_err / std::max(1e-8, std::max(std::abs(fd), std::abs(an)));
            res.probes += 1;
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = "input " + std::to_string(ii) + " elem " + std::to_string(idx) +
                            " analytic=" + std::to_string(an) + " fd=" + std::to_string(fd);
            }
        }
    }
    return res;
}

}  // namespace aef::testing
