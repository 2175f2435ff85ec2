#pragma once

// Orchestration shared by the CLI and the acceptance suite: dataset loading,
// the VIDM training loop, held-out evaluation, and the reward/CEM glue.

#include <chrono>
#include <filesystem>

#include "aef/cem.hpp"
#include "aef/checkpoint.hpp"
#include "aef/config.hpp"
#include "aef/drawer.hpp"
#include "aef/factorize.hpp"
#include "aef/metrics.hpp"
#include "aef/reward.hpp"
#include "aef/synth.hpp"

namespace aef {

inline std::vector<VideoClip> load_dataset(const std::string& dir) {
    const auto m = read_manifest(dir);
    std::vector<VideoClip> clips;
    for (uint64_t seed : m.seeds) clips.push_back(read_clip(dir + "/clips/" + std::to_string(seed), m.fps, seed));
    return clips;
}

// ---------------------------------------------------------------------------
// VIDM training
// ---------------------------------------------------------------------------

template <class T>
struct VidmBundle {
    UNetConfig unet_cfg;
    std::shared_ptr<VidmUnet<T>> model;
    Codec<T> codec;
    DiffusionSchedule sched;
    Config cfg;

    static VidmBundle make(const Config& cfg, uint64_t model_seed) {
        VidmBundle b;
        b.cfg = cfg;
        b.unet_cfg = UNetConfig::from_config(cfg);
        b.model = std::make_shared<VidmUnet<T>>(b.unet_cfg, model_seed);
        b.codec = Codec<T>(CodecConfig::parse(cfg.str("codec.mode"), int(cfg.integer("codec.patch")),
                                              int(cfg.integer("codec.latent_channels"))));
        b.sched = make_schedule(int(cfg.integer("diffusion.T")), cfg.real("diffusion.beta_start"),
                                cfg.real("diffusion.beta_end"));
        return b;
    }

    VidmInpainter<T> inpainter(bool zero_context = false) const {
        VidmInpainter<T> inp;
        inp.model = model.get();
        inp.codec = &codec;
        inp.sched = &sched;
        inp.infer_steps = int(cfg.integer("diffusion.infer_steps"));
        inp.gap_seconds = cfg.real("data.gap_seconds");
        inp.zero_context = zero_context;
        return inp;
    }
};

struct TrainLog {
    std::vector<std::pair<int64_t, double>> loss_curve;  // (step, loss)
    double initial_loss = 0, final_loss = 0;
    int64_t steps = 0;

    void save_csv(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        f << "step,loss\n";
        char buf[64];
        for (const auto& [s, l] : loss_curve) {
            std::snprintf(buf, sizeof buf, "%lld,%.6f\n", (long long)s, l);
            f << buf;
        }
        if (!f) throw std::runtime_error("TrainLog: cannot write " + path);
    }
};

// Streams batches out of the clip set: per example pick a clip, draw an
// assembly, bridge to latent space. Skips flagged-empty-loss examples.
template <class T>
class BatchStream {
  public:
    BatchStream(const std::vector<VideoClip>& clips, const MaskPool& pool, const Codec<T>& codec,
                const Config& cfg)
        : clips_(clips), pool_(pool), codec_(codec) {
        h_ = int(cfg.integer("unet.context_frames"));
        gap_ = cfg.real("data.gap_seconds");
        pool_prob_ = cfg.real("data.pool_prob");
        max_cover_ = cfg.real("data.max_agent_cover");
        loss_region_ = loss_region_from_string(cfg.str_or("train.loss_region", "full"));
    }

    std::vector<VidmExample<T>> next_batch(int batch, Rng& rng) {
        std::vector<VidmExample<T>> out;
        int guard = 0;
        while (int(out.size()) < batch && guard < batch * 20) {
            ++guard;
            const auto& clip = clips_[size_t(rng.uniform_int(0, int64_t(clips_.size()) - 1))];
            auto ex = assemble_training_example(clip, pool_, rng, h_, gap_, codec_.config().patch,
                                                pool_prob_, max_cover_, &stats_, loss_region_);
            if (!ex || ex->flagged_empty_loss) continue;
            out.push_back(make_vidm_example(*ex, codec_));
        }
        if (int(out.size()) < batch)
            throw ContractError("BatchStream: could not assemble a full batch (data too occluded?)");
        return out;
    }

    const AssembleStats& stats() const { return stats_; }

  private:
    const std::vector<VideoClip>& clips_;
    const MaskPool& pool_;
    const Codec<T>& codec_;
    int h_ = 3;
    double gap_ = 0.75, pool_prob_ = 0.5, max_cover_ = 0.5;
    LossRegion loss_region_ = LossRegion::FullMinusAgent;
    AssembleStats stats_;
};

template <class T>
TrainLog train_vidm(VidmBundle<T>& bundle, const std::vector<VideoClip>& clips, const MaskPool& pool,
                    int64_t steps, uint64_t seed, const std::string& out_dir = "",
                    bool quiet = false) {
    const auto& cfg = bundle.cfg;
    BatchStream<T> stream(clips, pool, bundle.codec, cfg);
    const int batch = int(cfg.integer("train.batch"));
    const int64_t log_every = cfg.integer("train.log_every");

    AdamState<T> opt;
    opt.init(bundle.model->params());
    AdamConfig adam;
    adam.lr = cfg.real("train.lr");

    auto& model = *bundle.model;
    auto fwd = [&](const VidmExample<T>& ex, const Tensor<T>& z_u, int u) {
        auto mi = assemble_input<T>(z_u, ex.target_masked, ex.target_mask, ex.context, ex.context_masks);
        return model.forward(mi, u);
    };

    TrainLog log;
    log.steps = steps;
    Rng rng(seed ^ 0x7a11e57ull);
    double run_mean = 0;
    int64_t run_n = 0;
    for (int64_t step = 1; step <= steps; ++step) {
        auto batch_ex = stream.next_batch(batch, rng);
        auto stats = train_step(batch_ex, fwd, model.params(), opt, adam, bundle.sched, rng);
        if (stats.used == 0) continue;
        run_mean += stats.loss;
        run_n += 1;
        if (step == 1) log.initial_loss = stats.loss;
        if (step % log_every == 0 || step == steps) {
            const double avg = run_mean / double(run_n);
            log.loss_curve.emplace_back(step, avg);
            log.final_loss = avg;
            if (!quiet) std::printf("step %6lld  loss %.4f\n", (long long)step, avg);
            run_mean = 0;
            run_n = 0;
        }
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log.save_csv(out_dir + "/loss_curve.csv");
        save_checkpoint(out_dir + "/model.aefckpt", bundle.model->params(),
                        {{"geometry", bundle.unet_cfg.geometry_hash()},
                         {"config_hash", cfg.hash()},
                         {"seed", std::to_string(seed)},
                         {"steps", std::to_string(steps)}});
        cfg.save(out_dir + "/config.resolved");
        std::ofstream hf(out_dir + "/config.hash", std::ios::trunc);
        hf << cfg.hash() << "\n";
    }
    return log;
}

// Load a checkpoint, failing fast when the stored geometry hash does not
// match the model built from the current config.
template <class T>
void load_vidm_checkpoint(VidmBundle<T>& bundle, const std::string& path) {
    auto meta = load_checkpoint(path, bundle.model->params());
    const auto it = meta.find("geometry");
    if (it == meta.end() || it->second != bundle.unet_cfg.geometry_hash())
        throw ContractError("checkpoint geometry hash " +
                            (it == meta.end() ? std::string("<missing>") : it->second) +
                            " does not match configured model " + bundle.unet_cfg.geometry_hash());
}

// ---------------------------------------------------------------------------
// Held-out inpainting evaluation (masks applied to agent-free clips)
// ---------------------------------------------------------------------------

// One evaluation instance: an agent-free clip whose agent_masks have been
// replaced by a pooled mask sequence; ground truth is the clip itself.
inline VideoClip make_eval_clip(uint64_t seed, const MaskPool& pool, int length, int size,
                                double difficulty, Rng& rng) {
    auto clip = generate_clip(seed, length, size, difficulty, false);
    if (pool.sequences.empty()) throw ContractError("make_eval_clip: empty mask pool");
    const auto& seq = pool.sequences[size_t(rng.uniform_int(0, int64_t(pool.sequences.size()) - 1))];
    for (int t = 0; t < clip.length(); ++t) {
        const auto& src = seq[size_t(rng.uniform_int(0, int64_t(seq.size()) - 1))];
        clip.agent_masks[size_t(t)] = mask_resize(src, size, size);
    }
    return clip;
}

struct EvalExample {
    VideoClip clip;  // masks = holes; frames = ground truth
    int t = 0;
};

inline std::vector<EvalExample> make_eval_set(const MaskPool& pool, int n, int length, int size,
                                              double difficulty, int h, double gap, int fps,
                                              uint64_t seed_base) {
    std::vector<EvalExample> out;
    Rng rng(seed_base ^ 0xeba1ull);
    const int stride = context_stride(gap, fps);
    int64_t seed = int64_t(seed_base);
    while (int(out.size()) < n) {
        ++seed;
        auto clip = make_eval_clip(uint64_t(seed), pool, length, size, difficulty, rng);
        const int t = int(rng.uniform_int(h * stride, length - 1));
        if (clip.agent_masks[size_t(t)].empty_mask()) continue;
        out.push_back({std::move(clip), t});
    }
    return out;
}

struct EvalResult {
    MetricReport report;                  // full-frame PSNR/SSIM + surrogate FID
    std::vector<double> masked_psnr;      // per example, masked region only
    double masked_psnr_mean = 0;

    void finalize() {
        report.finalize();
        masked_psnr_mean = std::accumulate(masked_psnr.begin(), masked_psnr.end(), 0.0) /
                           std::max<size_t>(1, masked_psnr.size());
    }
};

template <class InpaintLike>
EvalResult evaluate_inpainter(const std::vector<EvalExample>& eval_set, InpaintLike&& inpaint,
                              uint64_t seed, const std::string& label, int fid_dim = 24) {
    EvalResult res;
    res.report.label = label;
    std::vector<Image> outs, refs;
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t i = 0; i < eval_set.size(); ++i) {
        const auto& ex = eval_set[i];
        Rng rng(seed ^ (0x517ull * (i + 1)));
        auto f = factor_frame(ex.clip, ex.t, inpaint, rng);
        const auto& truth = ex.clip.frames[size_t(ex.t)];
        res.report.psnr_per_frame.push_back(psnr(f.env, truth).db);
        res.report.ssim_per_frame.push_back(ssim(f.env, truth));
        res.masked_psnr.push_back(psnr_masked(f.env, truth, ex.clip.agent_masks[size_t(ex.t)]).db);
        outs.push_back(f.env);
        refs.push_back(truth);
    }
    const auto t1 = std::chrono::steady_clock::now();
    res.report.runtime_per_image_s =
        std::chrono::duration<double>(t1 - t0).count() / double(std::max<size_t>(1, eval_set.size()));
    auto fid = surrogate_fid(outs, refs, seed ^ 0xf1dull, fid_dim);
    res.report.fid = fid.value;
    res.report.fid_flagged = fid.floored || fid.small_sample;
    res.finalize();
    return res;
}

// ---------------------------------------------------------------------------
// Drawer-suite glue: factored trial rewards and mode inputs
// ---------------------------------------------------------------------------

// Input image for a reward model given a rendered frame + agent mask + the
// matching agent-free render (the simulator's own environment oracle).
inline Image reward_input(RewardMode mode, const Image& frame, const MaskImage& mask, const Image& env,
                          const MarkerStyle& marker = {}) {
    switch (mode) {
        case RewardMode::Raw: return frame;
        case RewardMode::EnvOnly: return env;
        default: return render_marker(env, agent_agnostic(mask), marker);
    }
}

// Reward of one grasp-retract trial under a trained model: prediction at the
// attempted grasp plus prediction after retraction.
template <class T>
TrialRewardFn model_trial_reward(const RewardModel<T>& model, const DrawerEnv& env, AgentSprite sprite) {
    return [&model, &env, sprite](const DrawerEnv::Trial& tr) {
        const Image env_grasp = env.render(0.0, 0.0, 0.0, false, sprite, nullptr);
        const Image env_retract = env.render(tr.success ? 1.0 : 0.0, 0.0, 0.0, false, sprite, nullptr);
        const auto m = model.mode();
        const double r1 = model.predict(reward_input(m, tr.grasp, tr.grasp_mask, env_grasp));
        const double r2 = model.predict(reward_input(m, tr.retract, tr.retract_mask, env_retract));
        return r1 + r2;
    };
}

}  // namespace aef
