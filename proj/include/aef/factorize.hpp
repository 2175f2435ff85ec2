#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "aef/codec.hpp"
#include "aef/diffusion.hpp"
#include "aef/png_io.hpp"
#include "aef/synth.hpp"
#include "aef/unet.hpp"

namespace aef {

// ---------------------------------------------------------------------------
// Agent-agnostic transform g and marker rendering
// ---------------------------------------------------------------------------

struct GPoint {
    int row = 0, col = 0;
};

// Topmost masked pixel (minimum row); ties broken by minimum column.
// Empty mask -> nullopt.
inline std::optional<GPoint> agent_agnostic(const MaskImage& m) {
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) return GPoint{y, x};
    return std::nullopt;
}

struct MarkerStyle {
    double radius = 1.5;
    float r = 0.0f, g = 1.0f, b = 0.0f;  // green dot
};

inline Image render_marker(const Image& img, const std::optional<GPoint>& p,
                           const MarkerStyle& style = {}) {
    Image out = img;
    if (!p) return out;
    MaskImage disc(img.h, img.w);
    if (style.radius <= 0) {
        if (p->row >= 0 && p->row < img.h && p->col >= 0 && p->col < img.w) disc.at(p->row, p->col) = 1;
    } else {
        fill_disc(disc, p->row, p->col, style.radius);
    }
    paint_mask(out, disc, style.r, style.g, style.b);
    return out;
}

// ---------------------------------------------------------------------------
// FactoredFrame and inpainting backends
// ---------------------------------------------------------------------------

struct FactoredFrame {
    int t = 0;
    Image env;           // agent inpainted away; original pixels outside the mask
    Image agent;         // agent pixels only, zero elsewhere
    MaskImage mask;      // M_agent
    std::optional<GPoint> g_point;
    Image g_image;       // env with the marker drawn
    bool short_history = false;  // history was zero-padded
    bool sampled = false;        // an inpainting run actually happened
};

// Fills the masked region of frame t given the clip context; pixels outside
// the mask are ignored by the caller (composite rule).
using InpaintFn = std::function<Image(const VideoClip&, int t, Rng& rng)>;

// The real pipeline: VIDM epsilon-predictor + codec + DDPM sampling with the
// known-region clamp. Context frames are the raw earlier frames masked by
// their own agent masks; frames before the clip start are zero-padded.
template <class T>
struct VidmInpainter {
    const VidmUnet<T>* model = nullptr;
    const Codec<T>* codec = nullptr;
    const DiffusionSchedule* sched = nullptr;
    int infer_steps = 12;
    double gap_seconds = 0.75;
    bool zero_context = false;  // ablation: zero latents + fully-masked channels

    Image operator()(const VideoClip& clip, int t, Rng& rng) const {
        const auto& cfg = model->config();
        const int h = cfg.context_frames;
        const int stride = context_stride(gap_seconds, clip.fps);
        const int S = clip.size();

        std::vector<Tensor<T>> ctx;
        std::vector<MaskImage> ctx_masks;
        const int lat = cfg.latent_size;
        for (int k = h; k >= 1; --k) {
            const int src = t - k * stride;
            if (src < 0 || zero_context) {
                ctx.push_back(Tensor<T>::zeros({cfg.latent_channels, lat, lat}));
                MaskImage full(lat, lat);
                std::fill(full.m.begin(), full.m.end(), 1);
                ctx_masks.push_back(full);  // fully masked: carries no context
            } else {
                const auto& f = clip.frames[size_t(src)];
                const auto& m = clip.agent_masks[size_t(src)];
                ctx.push_back(center_latent(codec->encode(apply_mask(f, m).template to_tensor<T>())));
                ctx_masks.push_back(mask_downsample(m, codec->config().patch));
            }
        }

        const auto& frame = clip.frames[size_t(t)];
        const auto& hole_px = clip.agent_masks[size_t(t)];
        auto known = center_latent(codec->encode(apply_mask(frame, hole_px).template to_tensor<T>()));
        auto hole = mask_downsample(hole_px, codec->config().patch);

        auto eps_fn = [&](const Tensor<T>& z, int u) {
            auto mi = assemble_input<T>(z, known, hole, ctx, ctx_masks);
            NoGradGuard ng;
            return model->forward(mi, u);
        };
        SampleOptions opt;
        opt.n_steps = infer_steps;
        opt.known_mask = &hole;
        auto z0 = ddpm_sample<T>(eps_fn, *sched, known.shape(), rng, opt, &known);
        auto decoded = codec->decode(uncenter_latent(z0));
        (void)S;
        return Image::from_tensor(decoded);
    }
};

// Ground-truth backend for synthetic clips: the masked region comes from the
// generator's agent-free render. Used for fast reward-pipeline runs and as a
// reference in evaluations.
inline Image oracle_inpaint(const VideoClip& clip, int t, Rng&) {
    return clip.env_frames[size_t(t)];
}

// Copy-last-context-frame baseline: masked pixels taken from frame t-stride.
inline InpaintFn make_copy_last_inpainter(double gap_seconds) {
    return [gap_seconds](const VideoClip& clip, int t, Rng&) {
        const int stride = context_stride(gap_seconds, clip.fps);
        const int src = std::max(0, t - stride);
        return clip.frames[size_t(src)];
    };
}

// ---------------------------------------------------------------------------
// factor_frame / factor_clip
// ---------------------------------------------------------------------------

struct FactorizeOptions {
    MarkerStyle marker;
    double gap_seconds = 0.75;
    int history = 3;  // h, used only for the short-history flag
};

// The composite contract: outside M_agent the output equals the input frame
// bit-exact; only masked pixels come from the inpainting backend.
inline FactoredFrame factor_frame(const VideoClip& clip, int t, const InpaintFn& inpaint, Rng& rng,
                                  const FactorizeOptions& opt = {}) {
    if (t < 0 || t >= clip.length())
        throw ContractError("factor_frame: t=" + std::to_string(t) + " outside clip of length " +
                            std::to_string(clip.length()));
    if (clip.agent_masks.empty()) throw ContractError("factor_frame: clip carries no agent masks");

    const auto& frame = clip.frames[size_t(t)];
    const auto& mask = clip.agent_masks[size_t(t)];
    FactoredFrame out;
    out.t = t;
    out.mask = mask;
    out.short_history = t < opt.history * context_stride(opt.gap_seconds, clip.fps);

    out.agent = Image(frame.h, frame.w);
    for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x)
            if (mask.at(y, x))
                for (int c = 0; c < 3; ++c) out.agent.at(c, y, x) = frame.at(c, y, x);

    if (mask.empty_mask()) {
        out.env = frame;  // no sampling run on the no-op path
    } else {
        Image filled = inpaint(clip, t, rng);
        if (!filled.same_size(frame)) throw DimError("factor_frame: inpainter returned wrong size");
        out.env = frame;
        for (int y = 0; y < frame.h; ++y)
            for (int x = 0; x < frame.w; ++x)
                if (mask.at(y, x))
                    for (int c = 0; c < 3; ++c) out.env.at(c, y, x) = filled.at(c, y, x);
        out.sampled = true;
    }

    out.g_point = agent_agnostic(mask);
    out.g_image = render_marker(out.env, out.g_point, opt.marker);
    return out;
}

struct FactorizeRun {
    std::vector<FactoredFrame> frames;
    int64_t sampler_calls = 0;
    int64_t cache_hits = 0;
};

// Maps factor_frame over the clip with per-frame rngs derived from (seed, t).
// When out_dir is set the run is resumable: frames already on disk are loaded
// instead of re-sampled, and outputs land as env_%04d.png / agent_%04d.png +
// gpoint.csv + provenance.json.
inline FactorizeRun factor_clip(const VideoClip& clip, const InpaintFn& inpaint, uint64_t seed,
                                const FactorizeOptions& opt = {}, const std::string& out_dir = "",
                                const std::string& provenance_hash = "") {
    FactorizeRun run;
    const bool cached = !out_dir.empty();
    if (cached) std::filesystem::create_directories(out_dir);
    Rng base(seed);

    for (int t = 0; t < clip.length(); ++t) {
        const std::string env_p = cached ? out_dir + "/" + fs_detail::frame_name("env", t) : "";
        const std::string agent_p = cached ? out_dir + "/" + fs_detail::frame_name("agent", t) : "";
        if (cached && std::filesystem::exists(env_p) && std::filesystem::exists(agent_p)) {
            FactoredFrame f;
            f.t = t;
            f.env = read_png_image(env_p);
            f.agent = read_png_image(agent_p);
            f.mask = clip.agent_masks[size_t(t)];
            f.g_point = agent_agnostic(f.mask);
            f.g_image = render_marker(f.env, f.g_point, opt.marker);
            run.frames.push_back(std::move(f));
            run.cache_hits += 1;
            continue;
        }
        Rng frame_rng = base.derive(uint64_t(t));
        auto f = factor_frame(clip, t, inpaint, frame_rng, opt);
        if (f.sampled) run.sampler_calls += 1;
        if (cached) {
            write_png(env_p, f.env);
            write_png(agent_p, f.agent);
        }
        run.frames.push_back(std::move(f));
    }

    if (cached) {
        std::ofstream csv(out_dir + "/gpoint.csv", std::ios::trunc);
        csv << "t,row,col\n";
        for (const auto& f : run.frames) {
            if (f.g_point) csv << f.t << "," << f.g_point->row << "," << f.g_point->col << "\n";
            else csv << f.t << ",-1,-1\n";
        }
        nlohmann::json prov;
        prov["model_hash"] = provenance_hash;
        prov["seed"] = seed;
        prov["history"] = opt.history;
        prov["gap_seconds"] = opt.gap_seconds;
        std::ofstream pf(out_dir + "/provenance.json", std::ios::trunc);
        pf << prov.dump(2) << "\n";
    }
    return run;
}

}  // namespace aef
