#pragma once

#include <cmath>
#include <vector>

#include "aef/adam.hpp"
#include "aef/image.hpp"
#include "aef/ops.hpp"
#include "aef/rng.hpp"

namespace aef {

// beta/alpha/alpha_bar tables for diffusion timesteps u = 1..T (stored at
// index u-1). Linear beta interpolation; alpha_bar by running product.
struct DiffusionSchedule {
    int total = 0;
    std::vector<double> beta, alpha, alpha_bar;

    double ab(int u) const { return alpha_bar[size_t(u - 1)]; }
    double b(int u) const { return beta[size_t(u - 1)]; }

    void check_u(int u) const {
        if (u < 1 || u > total)
            throw ContractError("diffusion: timestep " + std::to_string(u) + " outside 1.." +
                                std::to_string(total));
    }
};

inline DiffusionSchedule make_schedule(int T_total, double beta_start, double beta_end) {
    if (T_total < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.total = T_total;
    s.beta.resize(size_t(T_total));
    s.alpha.resize(size_t(T_total));
    s.alpha_bar.resize(size_t(T_total));
    double prod = 1.0;
    for (int i = 0; i < T_total; ++i) {
        const double b = T_total == 1
                             ? beta_start
                             : beta_start + (beta_end - beta_start) * double(i) / double(T_total - 1);
        s.beta[size_t(i)] = b;
        s.alpha[size_t(i)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[size_t(i)] = prod;
    }
    return s;
}

// z_u = sqrt(ab_u) z0 + sqrt(1-ab_u) eps
template <class T>
Tensor<T> q_sample(const Tensor<T>& z0, int u, const Tensor<T>& eps, const DiffusionSchedule& sched) {
    sched.check_u(u);
    check_same_shape(z0.shape(), eps.shape(), "q_sample");
    const T a = T(std::sqrt(sched.ab(u)));
    const T b = T(std::sqrt(1.0 - sched.ab(u)));
    return add(scale(z0, a), scale(eps, b));
}

// Per-latent-cell binary loss weights for the target frame; zero where the
// agent-overlap exclusion applies. Cells replicate across latent channels.
using LossMask = MaskImage;

template <class T>
struct MaskedLoss {
    Tensor<T> loss;
    bool valid = false;  // false when the mask is empty; excluded from averages
    int64_t cells = 0;
};

template <class T>
MaskedLoss<T> masked_l1_loss(const Tensor<T>& eps_pred, const Tensor<T>& eps_true, const LossMask& lm) {
    check_same_shape(eps_pred.shape(), eps_true.shape(), "masked_l1_loss");
    if (eps_pred.shape().size() != 3 || eps_pred.dim(1) != lm.h || eps_pred.dim(2) != lm.w)
        throw DimError("masked_l1_loss: mask " + std::to_string(lm.h) + "x" + std::to_string(lm.w) +
                       " does not match " + shape_str(eps_pred.shape()));
    const int64_t kept = lm.count();
    if (kept == 0) return {Tensor<T>::scalar(T(0)), false, 0};

    const int d = eps_pred.dim(0);
    std::vector<T> w(size_t(eps_pred.size()));
    for (int c = 0; c < d; ++c)
        for (size_t i = 0; i < lm.m.size(); ++i) w[size_t(c) * lm.m.size() + i] = T(lm.m[i]);
    auto weights = Tensor<T>::from(eps_pred.shape(), std::move(w));
    auto masked_abs = mul(abs(sub(eps_pred, eps_true)), weights);
    auto loss = scale(sum(masked_abs), T(1) / T(kept * d));
    return {loss, true, kept};
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

// Minimum contract a training example must satisfy: the clean target latent
// and the loss mask. Everything else (conditioning) is the forward's business.
struct TrainStepStats {
    double loss = 0.0;
    int used = 0;
    int skipped = 0;
};

// One Adam update over a batch: per example draw u ~ U{1..T} and eps ~ N(0,1),
// build eps-prediction loss, average over valid examples, backprop, step.
// ForwardFn: (const Example&, const Tensor<T>& z_u, int u) -> eps prediction.
template <class T, class Example, class ForwardFn>
TrainStepStats train_step(std::vector<Example>& batch, ForwardFn&& forward, ParamSet<T>& params,
                          AdamState<T>& opt_state, const AdamConfig& opt_cfg,
                          const DiffusionSchedule& sched, Rng& rng) {
    TrainStepStats stats;
    Tensor<T> total;
    for (auto& ex : batch) {
        const int u = int(rng.uniform_int(1, sched.total));
        auto eps = Tensor<T>::randn(ex.z0.shape(), rng);
        auto z_u = q_sample(ex.z0, u, eps, sched);
        auto pred = forward(ex, z_u, u);
        auto ml = masked_l1_loss(pred, eps, ex.loss_mask);
        if (!ml.valid) {
            stats.skipped += 1;
            continue;
        }
        stats.used += 1;
        total = total.defined() ? add(total, ml.loss) : ml.loss;
    }
    if (stats.used == 0) return stats;

    auto loss = scale(total, T(1) / T(stats.used));
    stats.loss = double(loss.item());
    if (!std::isfinite(stats.loss)) {
        std::string dump = "train_step: non-finite loss; batch:";
        for (const auto& ex : batch)
            dump += " [mask_cells=" + std::to_string(ex.loss_mask.count()) + "]";
        throw ContractError(dump);
    }
    params.zero_grad();
    backward(loss);
    adam_step(params, opt_state, opt_cfg);
    return stats;
}

// ---------------------------------------------------------------------------
// Ancestral sampler over an evenly strided timestep subsequence
// ---------------------------------------------------------------------------

inline std::vector<int> sample_timesteps(int T_total, int n_steps) {
    if (n_steps < 1) throw ConfigError("ddpm_sample: n_steps must be >= 1");
    if (n_steps > T_total) throw ConfigError("ddpm_sample: n_steps exceeds schedule length");
    std::vector<int> us;
    us.reserve(size_t(n_steps));
    for (int k = 0; k < n_steps; ++k) {
        const int u = n_steps == 1
                          ? T_total
                          : int(std::lround(double(T_total) - double(k) * double(T_total - 1) /
                                                                  double(n_steps - 1)));
        if (us.empty() || us.back() != u) us.push_back(u);
    }
    return us;  // descending, starts at T, ends at 1
}

struct SampleOptions {
    int n_steps = 0;
    double sigma_scale = 1.0;  // 0 gives the deterministic (variance-free) chain
    // Known-region clamp: between steps the cells where known_mask == 0 are
    // re-imposed from the noised known latent (inpainting keeps visible
    // content on-distribution). Leave known undefined for free-form sampling.
    const MaskImage* known_mask = nullptr;
};

// EpsFn: (const Tensor<T>& z_u, int u) -> predicted noise.
template <class T, class EpsFn>
Tensor<T> ddpm_sample(EpsFn&& eps_fn, const DiffusionSchedule& sched, const Shape& latent_shape,
                      Rng& rng, const SampleOptions& opt, const Tensor<T>* known = nullptr) {
    const auto us = sample_timesteps(sched.total, opt.n_steps);
    auto z = Tensor<T>::randn(latent_shape, rng);

    const auto impose_known = [&](Tensor<T>& zz, int u_level) {
        if (!known || !opt.known_mask) return;
        const MaskImage& m = *opt.known_mask;
        const int d = zz.dim(0);
        const int64_t hw = int64_t(zz.dim(1)) * zz.dim(2);
        for (int64_t p = 0; p < hw; ++p) {
            if (m.m[size_t(p)]) continue;  // hole cell: keep the sampled value
            if (u_level == 0) {
                for (int c = 0; c < d; ++c) zz.data()[size_t(c * hw + p)] = known->data()[size_t(c * hw + p)];
            } else {
                const T a = T(std::sqrt(sched.ab(u_level)));
                const T b = T(std::sqrt(1.0 - sched.ab(u_level)));
                for (int c = 0; c < d; ++c)
                    zz.data()[size_t(c * hw + p)] =
                        a * known->data()[size_t(c * hw + p)] + b * T(rng.normal());
            }
        }
    };

    impose_known(z, us.front());
    for (size_t k = 0; k < us.size(); ++k) {
        const int u = us[size_t(k)];
        const int u_prev = k + 1 < us.size() ? us[size_t(k + 1)] : 0;
        const double ab_t = sched.ab(u);
        const double ab_prev = u_prev >= 1 ? sched.ab(u_prev) : 1.0;
        const double beta_eff = 1.0 - ab_t / ab_prev;

        auto eps_hat = eps_fn(z, u);
        check_same_shape(eps_hat.shape(), z.shape(), "ddpm_sample eps");

        // x0 estimate, then posterior q(z_prev | z_u, x0)
        const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
        const double e_coef = std::sqrt(1.0 - ab_t);
        const double c0 = std::sqrt(ab_prev) * beta_eff / (1.0 - ab_t);
        const double c1 = std::sqrt(1.0 - beta_eff) * (1.0 - ab_prev) / (1.0 - ab_t);
        const double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_eff;
        const double sigma = opt.sigma_scale * std::sqrt(std::max(0.0, var));

        auto next = Tensor<T>::zeros(latent_shape);
        for (int64_t i = 0; i < z.size(); ++i) {
            const double zu = double(z.data()[size_t(i)]);
            const double x0 = (zu - e_coef * double(eps_hat.data()[size_t(i)])) * inv_sqrt_ab;
            double v = c0 * x0 + c1 * zu;
            if (sigma > 0.0) v += sigma * rng.normal();
            next.data()[size_t(i)] = T(v);
        }
        z = next;
        impose_known(z, u_prev);
    }
    return z;
}

}  // namespace aef
