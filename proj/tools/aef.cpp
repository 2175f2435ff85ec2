// aef: synthetic-video diffusion inpainting and factored-representation
// pipeline. Subcommands cover dataset synthesis, model training, inpainting,
// evaluation, factorization, reward learning and CEM policy search.

#include <CLI11.hpp>

#include "aef/pipeline.hpp"

using namespace aef;

namespace {

struct GlobalOpts {
    std::string config_file, out, preset = "desk";
    int64_t seed = 0;
    int threads = 0;
    bool seed_set = false;
};

Config resolve_config(const GlobalOpts& g) {
    auto cfg = Config::preset(g.preset);
    if (!g.config_file.empty()) cfg.load_file(g.config_file);
    if (g.seed_set) cfg.set("seed", g.seed);
    if (g.threads > 0) {
        set_thread_count(g.threads);
        cfg.set("threads", int64_t(g.threads));
    } else {
        cfg.set("threads", int64_t(thread_count()));
    }
    return cfg;
}

void dump_config(const Config& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    cfg.save(out_dir + "/config.resolved");
    std::ofstream hf(out_dir + "/config.hash", std::ios::trunc);
    hf << cfg.hash() << "\n";
}

std::string dataset_dir_or_env(const std::string& given, const char* what) {
    if (!given.empty()) return given;
    const auto fb = data_dir_fallback();
    if (fb.empty())
        throw ConfigError(std::string("no ") + what + " directory given and AEF_DATA_DIR is not set");
    return fb;
}

// --- synth -----------------------------------------------------------------

int cmd_synth(const GlobalOpts& g, int n_clips, const std::string& task, const std::string& embodiment,
              bool no_agent) {
    auto cfg = resolve_config(g);
    const auto out = g.out;
    if (out.empty()) throw ConfigError("synth: --out is required");
    const uint64_t seed = uint64_t(cfg.integer("seed"));

    if (task == "generic") {
        DatasetManifest m;
        m.fps = int(cfg.integer("data.fps"));
        m.size = int(cfg.integer("data.size"));
        m.clip_len = int(cfg.integer("data.clip_len"));
        m.difficulty = cfg.real("data.difficulty");
        m.with_agent = !no_agent;
        m.sprite = embodiment;
        m.config_hash = cfg.hash();
        for (int i = 0; i < n_clips; ++i) m.seeds.push_back(seed * 1000003ull + uint64_t(i));
        write_dataset(out, m);
        std::printf("wrote %d clips under %s\n", n_clips, out.c_str());
    } else if (task == "drawer") {
        std::filesystem::create_directories(out + "/clips");
        DatasetManifest m;
        m.fps = 4;
        m.size = 32;
        m.clip_len = int(cfg.integer("data.clip_len"));
        m.with_agent = true;
        m.sprite = embodiment;
        m.config_hash = cfg.hash();
        Rng rng(seed ^ 0xd4a3ull);
        for (int i = 0; i < n_clips; ++i) {
            const uint64_t env_seed = seed * 7919ull + uint64_t(i);
            DrawerEnv env(env_seed);
            auto clip = env.demo_clip(m.clip_len, sprite_from_string(embodiment), rng);
            write_clip(out + "/clips/" + std::to_string(env_seed), clip);
            m.seeds.push_back(env_seed);
        }
        write_manifest(out, m);
        std::printf("wrote %d drawer demos (%s) under %s\n", n_clips, embodiment.c_str(), out.c_str());
    } else {
        throw ConfigError("synth: unknown task '" + task + "' (generic|drawer)");
    }
    dump_config(cfg, out);
    return 0;
}

// --- train -------------------------------------------------------------------

int cmd_train(const GlobalOpts& g, const std::string& data_dir, int64_t steps_override) {
    auto cfg = resolve_config(g);
    if (g.out.empty()) throw ConfigError("train: --out is required");
    const auto data = dataset_dir_or_env(data_dir, "dataset");
    if (steps_override > 0) cfg.set("train.steps", steps_override);

    auto clips = load_dataset(data);
    auto pool = mine_mask_sequences(clips);
    auto bundle = VidmBundle<float>::make(cfg, uint64_t(cfg.integer("seed")));
    std::printf("model: %lld parameters (%s)\n", (long long)bundle.model->param_count(),
                bundle.unet_cfg.canonical().c_str());
    auto log = train_vidm(bundle, clips, pool, cfg.integer("train.steps"), uint64_t(cfg.integer("seed")),
                          g.out);
    std::printf("done: initial loss %.4f, final loss %.4f -> %s\n", log.initial_loss, log.final_loss,
                (g.out + "/model.aefckpt").c_str());
    return 0;
}

// --- shared checkpoint loading ----------------------------------------------

VidmBundle<float> load_run(const std::string& run_dir) {
    Config cfg;
    cfg.load_file(run_dir + "/config.resolved");
    auto bundle = VidmBundle<float>::make(cfg, 0);
    load_vidm_checkpoint(bundle, run_dir + "/model.aefckpt");
    return bundle;
}

// --- inpaint ------------------------------------------------------------------

int cmd_inpaint(const GlobalOpts& g, const std::string& run_dir, const std::string& clip_dir, int t) {
    auto bundle = load_run(run_dir);
    if (g.out.empty()) throw ConfigError("inpaint: --out is required");
    const auto m = read_manifest(std::filesystem::path(clip_dir).parent_path().parent_path().string());
    auto clip = read_clip(clip_dir, m.fps, 0);
    auto inp = bundle.inpainter();
    Rng rng(uint64_t(g.seed));
    auto f = factor_frame(clip, t, [&](const VideoClip& c, int tt, Rng& r) { return inp(c, tt, r); }, rng);
    std::filesystem::create_directories(g.out);
    write_png(g.out + "/inpainted.png", f.env);

    // metric row against the ground-truth environment render
    const auto& truth = clip.env_frames[size_t(t)];
    const auto full = psnr(f.env, truth);
    const auto masked = psnr_masked(f.env, truth, clip.agent_masks[size_t(t)]);
    std::printf("frame %d: PSNR %.2f dB (masked %.2f dB) SSIM %.4f%s\n", t, full.db, masked.db,
                ssim(f.env, truth), full.capped ? " [capped]" : "");
    dump_config(bundle.cfg, g.out);
    return 0;
}

// --- eval ---------------------------------------------------------------------

int cmd_eval(const GlobalOpts& g, const std::string& run_dir, const std::string& data_dir, int n_examples) {
    auto bundle = load_run(run_dir);
    if (g.out.empty()) throw ConfigError("eval: --out is required");
    const auto data = dataset_dir_or_env(data_dir, "eval dataset");
    auto clips = load_dataset(data);
    auto pool = mine_mask_sequences(clips);
    const auto& cfg = bundle.cfg;

    auto eval_set = make_eval_set(pool, n_examples, int(cfg.integer("data.clip_len")),
                                  int(cfg.integer("data.size")), cfg.real("data.difficulty"),
                                  int(cfg.integer("unet.context_frames")), cfg.real("data.gap_seconds"),
                                  int(cfg.integer("data.fps")), uint64_t(cfg.integer("seed")));
    auto inp = bundle.inpainter();
    auto res = evaluate_inpainter(
        eval_set, [&](const VideoClip& c, int tt, Rng& r) { return inp(c, tt, r); },
        uint64_t(cfg.integer("seed")), "vidm", int(cfg.integer("metrics.fid_dim")));

    std::filesystem::create_directories(g.out);
    res.report.config_hash = cfg.hash();
    res.report.save_jsonl(g.out + "/metric_report.jsonl");
    std::printf("%s", res.report.table().c_str());
    std::printf("masked-region PSNR: %.2f dB over %zu examples\n", res.masked_psnr_mean,
                res.masked_psnr.size());
    dump_config(cfg, g.out);
    return 0;
}

// --- factorize ------------------------------------------------------------------

int cmd_factorize(const GlobalOpts& g, const std::string& run_dir, const std::string& clip_dir,
                  const std::string& backend) {
    if (g.out.empty()) throw ConfigError("factorize: --out is required");
    const auto ds_dir = std::filesystem::path(clip_dir).parent_path().parent_path().string();
    const auto m = read_manifest(ds_dir);
    auto clip = read_clip(clip_dir, m.fps, 0);

    FactorizeRun run;
    if (backend == "oracle") {
        run = factor_clip(clip, oracle_inpaint, uint64_t(g.seed), {}, g.out, "oracle");
    } else if (backend == "vidm") {
        if (run_dir.empty()) throw ConfigError("factorize: --ckpt is required for the vidm backend");
        auto bundle = load_run(run_dir);
        auto inp = bundle.inpainter();
        FactorizeOptions opt;
        opt.history = int(bundle.cfg.integer("unet.context_frames"));
        opt.gap_seconds = bundle.cfg.real("data.gap_seconds");
        run = factor_clip(clip, [&](const VideoClip& c, int tt, Rng& r) { return inp(c, tt, r); },
                          uint64_t(g.seed), opt, g.out, bundle.unet_cfg.geometry_hash());
    } else {
        throw ConfigError("factorize: unknown backend '" + backend + "' (vidm|oracle)");
    }
    std::printf("factored %zu frames (%lld sampled, %lld cached) -> %s\n", run.frames.size(),
                (long long)run.sampler_calls, (long long)run.cache_hits, g.out.c_str());
    return 0;
}

// --- reward ---------------------------------------------------------------------

int cmd_reward(const GlobalOpts& g, const std::string& data_dir, const std::string& eval_dir,
               const std::string& mode_str) {
    auto cfg = resolve_config(g);
    if (g.out.empty()) throw ConfigError("reward: --out is required");
    const auto mode = reward_mode_from_string(mode_str);
    auto clips = load_dataset(dataset_dir_or_env(data_dir, "demo dataset"));

    std::vector<RewardSample> dataset;
    for (const auto& clip : clips) {
        Rng frng(clip.seed);
        std::vector<FactoredFrame> fr;
        for (int t = 0; t < clip.length(); ++t) fr.push_back(factor_frame(clip, t, oracle_inpaint, frng));
        auto ds = make_reward_dataset(clip, fr, mode);
        dataset.insert(dataset.end(), ds.begin(), ds.end());
    }

    RewardModel<float> model(clips[0].size(), mode, uint64_t(cfg.integer("seed")));
    auto rep = train_reward(model, dataset, int(cfg.integer("reward.epochs")), cfg.real("reward.lr"),
                            uint64_t(cfg.integer("seed")));
    std::printf("reward[%s]: train MSE %.5f, val MSE %.5f (%d train / %d val)\n", mode_str.c_str(),
                rep.train_mse, rep.val_mse, rep.train_n, rep.val_n);

    std::filesystem::create_directories(g.out);
    save_checkpoint(g.out + "/reward.aefckpt", model.params(),
                    {{"mode", mode_str},
                     {"image_size", std::to_string(clips[0].size())},
                     {"config_hash", cfg.hash()}});

    if (!eval_dir.empty()) {
        auto eval_clips = load_dataset(eval_dir);
        std::vector<std::vector<Image>> trajs;
        for (const auto& clip : eval_clips) {
            Rng frng(clip.seed);
            std::vector<Image> traj;
            for (int t = 0; t < clip.length(); ++t) {
                auto f = factor_frame(clip, t, oracle_inpaint, frng);
                traj.push_back(reward_input(mode, clip.frames[size_t(t)], f.mask, f.env));
            }
            trajs.push_back(std::move(traj));
        }
        auto sp = eval_reward_spearman(model, trajs);
        nlohmann::json j;
        j["mode"] = mode_str;
        j["per_trajectory"] = sp.per_trajectory;
        j["mean"] = sp.mean;
        j["flagged"] = sp.flagged;
        std::ofstream f(g.out + "/spearman_report.jsonl", std::ios::trunc);
        f << j.dump() << "\n";
        std::printf("Input Representation      Spearman rho\n%-24s %8.3f  (%zu trajectories)\n",
                    mode_str.c_str(), sp.mean, sp.per_trajectory.size());
    }
    dump_config(cfg, g.out);
    return 0;
}

// --- cem -----------------------------------------------------------------------

int cmd_cem(const GlobalOpts& g, const std::string& reward_ckpt, uint64_t env_seed, bool use_gt) {
    auto cfg = resolve_config(g);
    if (g.out.empty()) throw ConfigError("cem: --out is required");
    DrawerEnv env(env_seed);

    TrialRewardFn reward;
    RewardModel<float> model;
    if (use_gt) {
        reward = ground_truth_reward();
    } else {
        if (reward_ckpt.empty()) throw ConfigError("cem: --reward-ckpt required (or pass --gt)");
        // probe the checkpoint meta for mode/size, then rebuild and load
        ParamSet<float> probe;
        RewardModel<float> tmp(32, RewardMode::Raw, 0);
        auto meta = load_checkpoint(reward_ckpt, tmp.params());
        const auto mode = reward_mode_from_string(meta.at("mode"));
        const int size = std::stoi(meta.at("image_size"));
        model = RewardModel<float>(size, mode, 0);
        load_checkpoint(reward_ckpt, model.params());
        reward = model_trial_reward(model, env, AgentSprite::Gripper);
    }

    auto res = run_cem(env, AgentSprite::Gripper, reward, int(cfg.integer("cem.iters")),
                       int(cfg.integer("cem.trials")), int(cfg.integer("cem.elites")),
                       uint64_t(cfg.integer("seed")), cfg.real("cem.sigma_min_frac"), g.out);
    std::printf("cem: final success %.2f (mu %.3f sigma %.3f, handle %.3f) -> %s/cem_curve.csv\n",
                res.curve.success_rate.empty() ? 0.0 : res.curve.success_rate.back(), res.final_state.mu,
                res.final_state.sigma, env.handle(), g.out.c_str());
    dump_config(cfg, g.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"agent-environment factorization via video inpainting diffusion"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_file, "key=value config file overlaying the preset");
    app.add_option("--preset", g.preset, "config preset: desk | paper")->default_val("desk");
    app.add_option("--seed", g.seed, "run seed")->each([&](const std::string&) { g.seed_set = true; });
    app.add_option("--out", g.out, "output directory");
    app.add_option("--threads", g.threads, "op-internal worker threads");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int n_clips = 32;
    std::string task = "generic", embodiment = "hand";
    bool no_agent = false;
    synth->add_option("--clips", n_clips, "number of clips");
    synth->add_option("--task", task, "generic | drawer");
    synth->add_option("--embodiment", embodiment, "hand | gripper");
    synth->add_flag("--no-agent", no_agent, "render agent-free clips");

    auto* train = app.add_subcommand("train", "train the inpainting model");
    std::string data_dir;
    int64_t steps_override = 0;
    train->add_option("--data", data_dir, "dataset directory (or AEF_DATA_DIR)");
    train->add_option("--steps", steps_override, "override train.steps");

    auto* inpaint = app.add_subcommand("inpaint", "inpaint one frame of a clip");
    std::string run_dir, clip_dir;
    int frame_t = 0;
    inpaint->add_option("--ckpt", run_dir, "training run directory")->required();
    inpaint->add_option("--clip", clip_dir, "clip directory")->required();
    inpaint->add_option("--t", frame_t, "frame index")->required();

    auto* eval = app.add_subcommand("eval", "held-out inpainting evaluation");
    std::string eval_run, eval_data;
    int eval_n = 200;
    eval->add_option("--ckpt", eval_run, "training run directory")->required();
    eval->add_option("--data", eval_data, "dataset directory for mask mining");
    eval->add_option("--n", eval_n, "number of evaluation examples");

    auto* factorize = app.add_subcommand("factorize", "factor a clip into agent/environment");
    std::string fac_run, fac_clip, backend = "vidm";
    factorize->add_option("--ckpt", fac_run, "training run directory (vidm backend)");
    factorize->add_option("--clip", fac_clip, "clip directory")->required();
    factorize->add_option("--backend", backend, "vidm | oracle");

    auto* reward = app.add_subcommand("reward", "train a progress reward model");
    std::string reward_data, reward_eval, reward_mode = "aef";
    reward->add_option("--data", reward_data, "drawer demo dataset (hand embodiment)");
    reward->add_option("--eval-data", reward_eval, "gripper dataset for the transfer report");
    reward->add_option("--mode", reward_mode, "raw | env_only | aef");

    auto* cem = app.add_subcommand("cem", "CEM policy search on the drawer task");
    std::string reward_ckpt;
    uint64_t env_seed = 0;
    bool use_gt = false;
    cem->add_option("--reward-ckpt", reward_ckpt, "reward checkpoint file");
    cem->add_option("--env-seed", env_seed, "drawer environment seed");
    cem->add_flag("--gt", use_gt, "use the ground-truth success reward");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(g, n_clips, task, embodiment, no_agent);
        if (train->parsed()) return cmd_train(g, data_dir, steps_override);
        if (inpaint->parsed()) return cmd_inpaint(g, run_dir, clip_dir, frame_t);
        if (eval->parsed()) return cmd_eval(g, eval_run, eval_data, eval_n);
        if (factorize->parsed()) return cmd_factorize(g, fac_run, fac_clip, backend);
        if (reward->parsed()) return cmd_reward(g, reward_data, reward_eval, reward_mode);
        if (cem->parsed()) return cmd_cem(g, reward_ckpt, env_seed, use_gt);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 2;
    } catch (const DimError& e) {
        std::fprintf(stderr, "error: geometry: %s\n", e.what());
        return 3;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: contract: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: io: %s\n", e.what());
        return 5;
    }
    return 1;
}
