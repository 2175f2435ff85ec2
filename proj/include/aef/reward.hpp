#pragma once

#include <string>
#include <vector>

#include "aef/adam.hpp"
#include "aef/factorize.hpp"
#include "aef/metrics.hpp"
#include "aef/ops.hpp"

namespace aef {

// ---------------------------------------------------------------------------
// Reward datasets from factored clips
// ---------------------------------------------------------------------------

enum class RewardMode { Raw, EnvOnly, Aef };

inline RewardMode reward_mode_from_string(const std::string& s) {
    if (s == "raw") return RewardMode::Raw;
    if (s == "env_only") return RewardMode::EnvOnly;
    if (s == "aef") return RewardMode::Aef;
    throw ConfigError("unknown reward mode '" + s + "' (raw|env_only|aef)");
}

inline const char* to_string(RewardMode m) {
    switch (m) {
        case RewardMode::Raw: return "raw";
        case RewardMode::EnvOnly: return "env_only";
        default: return "aef";
    }
}

struct RewardSample {
    Image image;
    double label = 0;  // task progress in [0,1]
};

// Input image per mode: raw frame, inpainted environment, or environment plus
// the agent-agnostic marker. Labels are 0 at clip start, 1 at clip end.
inline std::vector<RewardSample> make_reward_dataset(const VideoClip& clip,
                                                     const std::vector<FactoredFrame>& factored,
                                                     RewardMode mode) {
    if (clip.length() < 2) throw ContractError("make_reward_dataset: single-frame clip");
    if (int(factored.size()) != clip.length())
        throw ContractError("make_reward_dataset: factored frame count mismatch");
    std::vector<RewardSample> out;
    for (int t = 0; t < clip.length(); ++t) {
        RewardSample s;
        s.label = double(t) / double(clip.length() - 1);
        switch (mode) {
            case RewardMode::Raw: s.image = clip.frames[size_t(t)]; break;
            case RewardMode::EnvOnly: s.image = factored[size_t(t)].env; break;
            case RewardMode::Aef: s.image = factored[size_t(t)].g_image; break;
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reward model: small convolutional regressor image -> scalar
// ---------------------------------------------------------------------------

template <class T>
class RewardModel {
  public:
    RewardModel() = default;

    RewardModel(int image_size, RewardMode mode, uint64_t seed) : mode_(mode), size_(image_size) {
        Rng rng(seed ^ 0x5eed1e55ull);
        auto conv = [&](const std::string& n, int ic, int oc) {
            const T s = T(std::sqrt(2.0 / double(ic * 9)));
            w_.push_back(params_.add(n + ".w", Tensor<T>::randn({oc, ic, 3, 3}, rng, s)));
            b_.push_back(params_.add(n + ".b", Tensor<T>::zeros({oc})));
        };
        conv("reward.c1", 3, 16);
        conv("reward.c2", 16, 32);
        conv("reward.c3", 32, 32);
        const int flat = 32 * (image_size / 8) * (image_size / 8);
        fc_w_ = params_.add("reward.fc.w", Tensor<T>::randn({flat, 1}, rng, T(std::sqrt(1.0 / flat))));
        fc_b_ = params_.add("reward.fc.b", Tensor<T>::zeros({1}));
    }

    RewardMode mode() const { return mode_; }
    int image_size() const { return size_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    Tensor<T> forward(const Tensor<T>& img) const {
        auto h = img;
        for (size_t i = 0; i < w_.size(); ++i)
            h = silu(add_channel_bias(conv2d(h, w_[i], 2, 1), b_[i]));
        auto flat = reshape(h, {1, int(h.size())});
        return add_row_bias(matmul(flat, fc_w_), fc_b_);  // [1,1]
    }

    double predict(const Image& img) const {
        NoGradGuard ng;
        return double(forward(img.template to_tensor<T>()).item());
    }

    // Raw prediction clamped for reporting; raw values stay available via
    // predict().
    double predict_clamped(const Image& img) const {
        return std::clamp(predict(img), -0.5, 1.5);
    }

  private:
    RewardMode mode_ = RewardMode::Raw;
    int size_ = 32;
    ParamSet<T> params_;
    std::vector<Tensor<T>> w_, b_;
    Tensor<T> fc_w_, fc_b_;
};

struct RewardTrainReport {
    double train_mse = 0, val_mse = 0;
    int epochs = 0, train_n = 0, val_n = 0;
};

// L2 regression on task progress. Deterministic per seed; aborts on
// divergence. One tenth of the data (at least one sample) is held out for the
// validation number in the report.
template <class T>
RewardTrainReport train_reward(RewardModel<T>& model, const std::vector<RewardSample>& dataset,
                               int epochs, double lr, uint64_t seed) {
    if (dataset.empty()) throw ContractError("train_reward: empty dataset");
    Rng rng(seed ^ 0x7e4a12ull);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    // deterministic shuffle for the split
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
    const int val_n = std::max(1, int(dataset.size()) / 10);
    std::vector<int> val(order.begin(), order.begin() + val_n);
    std::vector<int> train(order.begin() + val_n, order.end());
    if (train.empty()) throw ContractError("train_reward: dataset too small to split");

    AdamState<T> st;
    st.init(model.params());
    AdamConfig cfg;
    cfg.lr = lr;

    RewardTrainReport rep;
    rep.epochs = epochs;
    rep.train_n = int(train.size());
    rep.val_n = val_n;

    for (int e = 0; e < epochs; ++e) {
        for (size_t i = train.size(); i > 1; --i)
            std::swap(train[i - 1], train[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
        double ep_loss = 0;
        for (int idx : train) {
            const auto& s = dataset[size_t(idx)];
            auto pred = model.forward(s.image.template to_tensor<T>());
            auto diff = add_const(pred, T(-s.label));
            auto loss = mul(diff, diff);
            const double lv = double(loss.item());
            if (!std::isfinite(lv)) throw ContractError("train_reward: diverged (non-finite loss)");
            ep_loss += lv;
            model.params().zero_grad();
            backward(sum(loss));
            adam_step(model.params(), st, cfg);
        }
        rep.train_mse = ep_loss / double(train.size());
    }
    double vl = 0;
    for (int idx : val) {
        const double p = model.predict(dataset[size_t(idx)].image);
        vl += (p - dataset[size_t(idx)].label) * (p - dataset[size_t(idx)].label);
    }
    rep.val_mse = vl / double(val_n);
    return rep;
}

// ---------------------------------------------------------------------------
// Transfer evaluation: Spearman rho between predicted rewards and frame order
// ---------------------------------------------------------------------------

struct SpearmanReport {
    std::vector<double> per_trajectory;
    double mean = 0;
    int flagged = 0;

    void finalize() {
        if (per_trajectory.empty()) throw ContractError("SpearmanReport: no trajectories");
        mean = std::accumulate(per_trajectory.begin(), per_trajectory.end(), 0.0) /
               double(per_trajectory.size());
    }
};

// Each trajectory is the sequence of per-frame input images for the model's
// mode (already factored as needed).
template <class T>
SpearmanReport eval_reward_spearman(const RewardModel<T>& model,
                                    const std::vector<std::vector<Image>>& trajectories) {
    SpearmanReport rep;
    for (const auto& traj : trajectories) {
        std::vector<double> pred, order;
        for (size_t t = 0; t < traj.size(); ++t) {
            pred.push_back(model.predict(traj[t]));
            order.push_back(double(t));
        }
        auto s = spearman(pred, order);
        if (s.flagged_constant) rep.flagged += 1;
        rep.per_trajectory.push_back(s.rho);
    }
    rep.finalize();
    return rep;
}

}  // namespace aef
