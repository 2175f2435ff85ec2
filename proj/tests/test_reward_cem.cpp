#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aef/cem.hpp"
#include "aef/reward.hpp"

using namespace aef;

namespace {

// Oracle factorization for drawer clips: environment comes from the
// generator's agent-free render.
std::vector<FactoredFrame> oracle_factor(const VideoClip& clip) {
    Rng rng(0);
    std::vector<FactoredFrame> out;
    for (int t = 0; t < clip.length(); ++t) out.push_back(factor_frame(clip, t, oracle_inpaint, rng));
    return out;
}

}  // namespace

TEST_CASE("drawer env: determinism, success rule, demo shape") {
    DrawerEnv env(3);
    DrawerEnv env2(3);
    CHECK(env.handle() == env2.handle());
    CHECK(env.handle() >= 0.15);
    CHECK(env.handle() <= 0.85);

    CHECK(env.success(env.handle()));
    CHECK(env.success(env.handle() + 0.05));
    CHECK_FALSE(env.success(env.handle() + 0.1));

    auto a = env.render(0.3, 0.4, 0.7, true, AgentSprite::Gripper);
    auto b = env2.render(0.3, 0.4, 0.7, true, AgentSprite::Gripper);
    CHECK(a.px == b.px);

    // trial frames: retract frame shows the drawer open iff success
    auto good = env.run_trial(env.handle(), AgentSprite::Gripper);
    auto bad = env.run_trial(std::fmod(env.handle() + 0.4, 1.0), AgentSprite::Gripper);
    CHECK(good.success);
    CHECK_FALSE(bad.success);
    CHECK(good.retract.px != bad.retract.px);

    Rng rng(1);
    auto demo = env.demo_clip(12, AgentSprite::Hand, rng);
    CHECK(demo.length() == 12);
    for (int t = 0; t < 12; ++t) CHECK_FALSE(demo.agent_masks[size_t(t)].empty_mask());
    CHECK_THROWS_AS(env.demo_clip(1, AgentSprite::Hand, rng), ConfigError);
}

TEST_CASE("make_reward_dataset: labels and per-mode content") {
    DrawerEnv env(9);
    Rng rng(4);
    auto clip = env.demo_clip(10, AgentSprite::Hand, rng);
    auto factored = oracle_factor(clip);

    for (auto mode : {RewardMode::Raw, RewardMode::EnvOnly, RewardMode::Aef}) {
        auto ds = make_reward_dataset(clip, factored, mode);
        REQUIRE(int(ds.size()) == clip.length());
        CHECK(ds.front().label == 0.0);
        CHECK(ds.back().label == 1.0);
        for (size_t i = 1; i < ds.size(); ++i) CHECK(ds[i].label > ds[i - 1].label);
    }

    // env_only frames contain no agent pixels: equal to the agent-free render
    auto env_ds = make_reward_dataset(clip, factored, RewardMode::EnvOnly);
    for (int t = 0; t < clip.length(); ++t) CHECK(env_ds[size_t(t)].image.px == clip.env_frames[size_t(t)].px);

    // aef marker sits at agent_agnostic of the frame's mask
    auto aef_ds = make_reward_dataset(clip, factored, RewardMode::Aef);
    for (int t = 0; t < clip.length(); ++t) {
        auto p = agent_agnostic(clip.agent_masks[size_t(t)]);
        REQUIRE(p.has_value());
        CHECK(aef_ds[size_t(t)].image.at(1, p->row, p->col) == 1.0f);  // green dot
        CHECK(aef_ds[size_t(t)].image.at(0, p->row, p->col) == 0.0f);
    }

    VideoClip single;
    single.frames.push_back(clip.frames[0]);
    single.agent_masks.push_back(clip.agent_masks[0]);
    single.env_frames.push_back(clip.env_frames[0]);
    CHECK_THROWS_AS(make_reward_dataset(single, {factored[0]}, RewardMode::Raw), ContractError);
}

TEST_CASE("train_reward overfits one clip and is deterministic per seed") {
    DrawerEnv env(21);
    Rng rng(2);
    auto clip = env.demo_clip(12, AgentSprite::Hand, rng);
    auto ds = make_reward_dataset(clip, oracle_factor(clip), RewardMode::Aef);

    RewardModel<float> m1(32, RewardMode::Aef, 5);
    auto rep1 = train_reward(m1, ds, 60, 1e-3, 5);
    INFO("train mse " << rep1.train_mse << " val mse " << rep1.val_mse);
    CHECK(rep1.train_mse < 0.01);
    CHECK(rep1.train_n + rep1.val_n == int(ds.size()));

    RewardModel<float> m2(32, RewardMode::Aef, 5);
    auto rep2 = train_reward(m2, ds, 60, 1e-3, 5);
    CHECK(rep1.train_mse == rep2.train_mse);
    for (size_t i = 0; i < m1.params().items.size(); ++i)
        CHECK(m1.params().items[i].second.data() == m2.params().items[i].second.data());

    // clamped reporting stays within bounds, raw prediction available
    const double raw = m1.predict(ds[0].image);
    CHECK(m1.predict_clamped(ds[0].image) == std::clamp(raw, -0.5, 1.5));

    CHECK_THROWS_AS(train_reward(m1, {}, 1, 1e-3, 0), ContractError);
}

TEST_CASE("eval_reward_spearman plumbing with oracle and anti-oracle predictors") {
    DrawerEnv env(33);
    Rng rng(7);
    auto clip = env.demo_clip(8, AgentSprite::Gripper, rng);
    std::vector<std::vector<Image>> trajs{clip.frames, clip.frames};

    // a predictor keyed on call order ranks frames perfectly
    struct Oracle {
        mutable int k = 0;
        double predict(const Image&) const { return double(k++); }
    };
    struct AntiOracle {
        mutable int k = 0;
        double predict(const Image&) const { return -double(k++); }
    };

    // reuse the generic machinery by calling spearman directly per trajectory
    SpearmanReport rep;
    Oracle oracle;
    for (const auto& traj : trajs) {
        std::vector<double> pred, order;
        for (size_t t = 0; t < traj.size(); ++t) {
            pred.push_back(oracle.predict(traj[t]));
            order.push_back(double(t));
        }
        rep.per_trajectory.push_back(spearman(pred, order).rho);
    }
    rep.finalize();
    CHECK(rep.mean == doctest::Approx(1.0));

    SpearmanReport anti;
    AntiOracle ao;
    for (const auto& traj : trajs) {
        std::vector<double> pred, order;
        for (size_t t = 0; t < traj.size(); ++t) {
            pred.push_back(ao.predict(traj[t]));
            order.push_back(double(t));
        }
        anti.per_trajectory.push_back(spearman(pred, order).rho);
    }
    anti.finalize();
    CHECK(anti.mean == doctest::Approx(-1.0));

    // a real (untrained) model runs through the typed entry point
    RewardModel<float> m(32, RewardMode::Raw, 1);
    auto r = eval_reward_spearman(m, trajs);
    CHECK(r.per_trajectory.size() == 2);
    CHECK(std::abs(r.mean) <= 1.0);
}

TEST_CASE("cem_iteration: elite refit identity and sigma floor") {
    DrawerEnv env(11);
    Rng rng(3);
    CEMState st;
    st.mu = 0.5;
    st.sigma = 0.2;
    st.sigma_min = 0.02;

    // n_elite == n: refit equals the moment match of all sampled actions
    auto next = cem_iteration(st, env, AgentSprite::Gripper, ground_truth_reward(), 12, 12, rng);
    CHECK(int(next.elites.size()) == 12);
    double mean = 0;
    for (double a : next.elites) mean += a;
    mean /= 12;
    CHECK(next.mu == doctest::Approx(mean).epsilon(1e-12));

    // driving rewards constant and sampling tight: sigma never drops below floor
    CEMState tight;
    tight.mu = env.handle();
    tight.sigma = 0.001;
    tight.sigma_min = 0.02;
    auto t2 = cem_iteration(tight, env, AgentSprite::Gripper, ground_truth_reward(), 10, 5, rng);
    CHECK(t2.sigma >= 0.02);

    CHECK_THROWS_AS(cem_iteration(st, env, AgentSprite::Gripper, ground_truth_reward(), 5, 9, rng),
                    ConfigError);
}

TEST_CASE("cem with ground-truth reward: 10-seed median success >= 0.9 by iteration 5") {
    std::vector<double> finals;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        DrawerEnv env(seed + 100);
        auto res = run_cem(env, AgentSprite::Gripper, ground_truth_reward(), 5, 20, 7, seed);
        finals.push_back(res.curve.success_rate.back());
    }
    std::sort(finals.begin(), finals.end());
    const double median = 0.5 * (finals[4] + finals[5]);
    INFO("median final success = " << median);
    CHECK(median >= 0.9);
}

TEST_CASE("run_cem: empty curve for 0 iters, byte-identical reruns") {
    DrawerEnv env(5);
    auto r0 = run_cem(env, AgentSprite::Gripper, ground_truth_reward(), 0, 20, 7, 3);
    CHECK(r0.curve.success_rate.empty());

    const std::string d1 = "/tmp/aef_cem_a", d2 = "/tmp/aef_cem_b";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    run_cem(env, AgentSprite::Gripper, ground_truth_reward(), 4, 20, 7, 3, 0.02, d1);
    run_cem(env, AgentSprite::Gripper, ground_truth_reward(), 4, 20, 7, 3, 0.02, d2);
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(d1 + "/cem_curve.csv") == slurp(d2 + "/cem_curve.csv"));
    CHECK(slurp(d1 + "/cem_curve.png") == slurp(d2 + "/cem_curve.png"));
    CHECK_FALSE(slurp(d1 + "/cem_curve.csv").empty());
}
