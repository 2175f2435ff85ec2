#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "aef/drawer.hpp"
#include "aef/png_io.hpp"
#include "aef/rng.hpp"

namespace aef {

// Gaussian action distribution state for the cross-entropy method.
struct CEMState {
    double mu = 0.5;
    double sigma = 0.25;
    double sigma_min = 0.02;
    int iteration = 0;
    std::vector<double> elites;
    std::vector<double> success_history;  // per-iteration success rate
};

// Scores one grasp-retract trial: predicted reward at the attempted grasp
// plus predicted reward after retraction.
using TrialRewardFn = std::function<double(const DrawerEnv::Trial&)>;

// Ground-truth variant: 1 iff the drawer opened.
inline TrialRewardFn ground_truth_reward() {
    return [](const DrawerEnv::Trial& tr) { return tr.success ? 1.0 : 0.0; };
}

// Samples n actions from N(mu, sigma^2), runs the trials, refits mu/sigma on
// the top-n_elite rewards (sigma floored), and records the success rate.
inline CEMState cem_iteration(const CEMState& state, const DrawerEnv& env, AgentSprite sprite,
                              const TrialRewardFn& reward, int n, int n_elite, Rng& rng) {
    if (n_elite > n) throw ConfigError("cem_iteration: n_elite exceeds n");
    std::vector<double> actions, rewards;
    int successes = 0;
    for (int i = 0; i < n; ++i) {
        const double a = std::clamp(rng.normal(state.mu, state.sigma), 0.0, 1.0);
        auto tr = env.run_trial(a, sprite);
        successes += tr.success ? 1 : 0;
        actions.push_back(a);
        rewards.push_back(reward(tr));
    }

    std::vector<int> idx(actions.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return rewards[size_t(a)] > rewards[size_t(b)]; });

    CEMState next = state;
    next.iteration = state.iteration + 1;
    next.elites.clear();
    for (int i = 0; i < n_elite; ++i) next.elites.push_back(actions[size_t(idx[size_t(i)])]);
    const double mean = std::accumulate(next.elites.begin(), next.elites.end(), 0.0) / n_elite;
    double var = 0;
    for (double a : next.elites) var += (a - mean) * (a - mean);
    var /= n_elite;
    next.mu = mean;
    next.sigma = std::max(state.sigma_min, std::sqrt(var));
    next.success_history.push_back(double(successes) / double(n));
    return next;
}

struct CEMCurve {
    std::vector<double> success_rate, mu, sigma;

    void save_csv(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        f << "iteration,success_rate,mu,sigma\n";
        for (size_t i = 0; i < success_rate.size(); ++i) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", i + 1, success_rate[i], mu[i], sigma[i]);
            f << buf;
        }
        if (!f) throw std::runtime_error("CEMCurve: cannot write " + path);
    }

    // Success-rate-vs-iteration plot on a white canvas.
    Image plot() const {
        const int W = 240, H = 160, m = 18;
        Image img(H, W);
        std::fill(img.px.begin(), img.px.end(), 1.f);
        auto put = [&](int y, int x, float r, float g, float b) {
            if (y < 0 || y >= H || x < 0 || x >= W) return;
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        };
        for (int x = m; x < W - m; ++x) {
            put(H - m, x, 0, 0, 0);
            put(m, x, 0.85f, 0.85f, 0.85f);
        }
        for (int y = m; y <= H - m; ++y) put(y, m, 0, 0, 0);
        if (success_rate.empty()) return img;
        const int n = int(success_rate.size());
        auto px = [&](int i) { return n == 1 ? m : m + i * (W - 2 * m) / (n - 1); };
        auto py = [&](double v) { return int(H - m - v * (H - 2 * m)); };
        for (int i = 0; i + 1 < n; ++i) {
            const int x0 = px(i), y0 = py(success_rate[size_t(i)]);
            const int x1 = px(i + 1), y1 = py(success_rate[size_t(i + 1)]);
            const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
            for (int s = 0; s <= steps; ++s) {
                const double f = double(s) / steps;
                put(int(y0 + f * (y1 - y0)), int(x0 + f * (x1 - x0)), 0.1f, 0.45f, 0.1f);
            }
        }
        for (int i = 0; i < n; ++i) {
            const int x = px(i), y = py(success_rate[size_t(i)]);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) put(y + dy, x + dx, 0.0f, 0.3f, 0.0f);
        }
        return img;
    }
};

struct CEMRunResult {
    CEMState final_state;
    CEMCurve curve;
};

// Drives cem_iteration for `iters` rounds. Artifacts (CSV + plot) land in
// out_dir when given.
inline CEMRunResult run_cem(const DrawerEnv& env, AgentSprite sprite, const TrialRewardFn& reward,
                            int iters, int n, int n_elite, uint64_t seed, double sigma_min = 0.02,
                            const std::string& out_dir = "") {
    CEMRunResult res;
    CEMState st;
    st.mu = 0.5;
    st.sigma = 0.25;
    st.sigma_min = sigma_min;
    Rng rng(seed ^ 0xce11ull);
    for (int i = 0; i < iters; ++i) {
        st = cem_iteration(st, env, sprite, reward, n, n_elite, rng);
        res.curve.success_rate.push_back(st.success_history.back());
        res.curve.mu.push_back(st.mu);
        res.curve.sigma.push_back(st.sigma);
    }
    res.final_state = st;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        res.curve.save_csv(out_dir + "/cem_curve.csv");
        write_png(out_dir + "/cem_curve.png", res.curve.plot());
    }
    return res;
}

}  // namespace aef
