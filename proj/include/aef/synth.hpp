#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aef/codec.hpp"
#include "aef/config.hpp"
#include "aef/diffusion.hpp"
#include "aef/image.hpp"
#include "aef/png_io.hpp"
#include "aef/rng.hpp"

namespace aef {

// ---------------------------------------------------------------------------
// Agent sprites. The "hand" sprite is the training embodiment; the "gripper"
// differs in shape and color and stands in for the robot end-effector.
// ---------------------------------------------------------------------------

enum class AgentSprite { Hand, Gripper };

inline AgentSprite sprite_from_string(const std::string& s) {
    if (s == "hand") return AgentSprite::Hand;
    if (s == "gripper") return AgentSprite::Gripper;
    throw ConfigError("unknown agent sprite '" + s + "'");
}

// Draws the sprite into img (with shading) and records covered pixels in mask.
// `size` is the nominal sprite radius in pixels, `phase` animates articulation.
inline void draw_agent(Image& img, MaskImage& mask, AgentSprite sprite, double cy, double cx,
                       double size, double phase) {
    MaskImage local(img.h, img.w);
    if (sprite == AgentSprite::Hand) {
        fill_ellipse(local, cy, cx, size, size * 0.85);
        for (int fgr = 0; fgr < 3; ++fgr) {
            const double ang = -1.9 + 0.55 * fgr + 0.35 * std::sin(phase + fgr);
            const double fy = cy + std::sin(ang) * size * 1.35;
            const double fx = cx + std::cos(ang) * size * 1.35;
            fill_disc(local, fy, fx, size * 0.42);
        }
        Image shade = img;
        paint_mask(shade, local, 0.82f, 0.62f, 0.48f);
        // darken toward the palm edge for a little texture
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                if (local.at(y, x)) {
                    const double d = std::hypot(y - cy, x - cx) / std::max(1.0, size * 1.6);
                    const float f = float(1.0 - 0.35 * std::min(1.0, d));
                    img.at(0, y, x) = 0.82f * f;
                    img.at(1, y, x) = 0.62f * f;
                    img.at(2, y, x) = 0.48f * f;
                }
    } else {
        // two parallel fingers and a crossbar, slate blue
        const int w = std::max(1, int(size * 0.45));
        const int gap = std::max(2, int(size * 1.1));
        const int len = std::max(2, int(size * 1.8));
        const double open = 0.5 + 0.5 * std::sin(phase);  // finger spread
        const int g2 = int(gap * (0.75 + 0.5 * open));
        fill_rect(local, int(cy - len), int(cx - g2 / 2 - w), int(cy), int(cx - g2 / 2));
        fill_rect(local, int(cy - len), int(cx + g2 / 2), int(cy), int(cx + g2 / 2 + w));
        fill_rect(local, int(cy - len - w), int(cx - g2 / 2 - w), int(cy - len), int(cx + g2 / 2 + w));
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                if (local.at(y, x)) {
                    const float f = float(0.8 + 0.2 * std::sin(0.9 * y + 0.7 * x));
                    img.at(0, y, x) = 0.35f * f;
                    img.at(1, y, x) = 0.42f * f;
                    img.at(2, y, x) = 0.58f * f;
                }
    }
    for (size_t i = 0; i < mask.m.size(); ++i) mask.m[i] |= local.m[i];
}

// ---------------------------------------------------------------------------
// VideoClip and the procedural scene generator
// ---------------------------------------------------------------------------

struct VideoClip {
    std::vector<Image> frames;
    std::vector<MaskImage> agent_masks;
    std::vector<Image> env_frames;  // ground-truth agent-free renders
    int fps = 4;
    uint64_t seed = 0;

    int length() const { return int(frames.size()); }
    int size() const { return frames.empty() ? 0 : frames[0].h; }
};

namespace synth_detail {

struct SceneObject {
    bool disc = false;
    double y0 = 0, x0 = 0, vy = 0, vx = 0, size = 0;
    float r = 0, g = 0, b = 0;
};

struct Scene {
    int size = 16;
    int grid = 6;
    std::vector<float> bg;  // grid*grid*3 value-noise control points
    double drift_ay = 0, drift_ax = 0, drift_fy = 0, drift_fx = 0, drift_py = 0, drift_px = 0;
    std::vector<SceneObject> objects;
    // agent path: quadratic through three control points + articulation phase
    double ay0 = 0, ax0 = 0, ay1 = 0, ax1 = 0, ay2 = 0, ax2 = 0;
    double agent_size = 0, agent_phase0 = 0, agent_phase_rate = 0;
    AgentSprite sprite = AgentSprite::Hand;
};

inline Scene make_scene(uint64_t seed, int size, double difficulty, AgentSprite sprite) {
    Rng rng(seed);
    Scene s;
    s.size = size;
    s.sprite = sprite;
    s.bg.resize(size_t(s.grid) * s.grid * 3);
    for (auto& v : s.bg) v = float(rng.uniform(0.15, 0.85));
    const double drift = (0.04 + 0.10 * difficulty) * size;
    s.drift_ay = rng.uniform(0.3, 1.0) * drift;
    s.drift_ax = rng.uniform(0.3, 1.0) * drift;
    s.drift_fy = rng.uniform(0.5, 1.5);
    s.drift_fx = rng.uniform(0.5, 1.5);
    s.drift_py = rng.uniform(0, 6.28);
    s.drift_px = rng.uniform(0, 6.28);

    const int n_obj = int(rng.uniform_int(2, 5));
    for (int i = 0; i < n_obj; ++i) {
        SceneObject o;
        o.disc = rng.bernoulli(0.5);
        o.y0 = rng.uniform(0, size);
        o.x0 = rng.uniform(0, size);
        const double speed = (0.01 + 0.05 * difficulty) * size;
        o.vy = rng.uniform(-speed, speed);
        o.vx = rng.uniform(-speed, speed);
        o.size = rng.uniform(0.10, 0.22) * size;
        o.r = float(rng.uniform(0.2, 1.0));
        o.g = float(rng.uniform(0.2, 1.0));
        o.b = float(rng.uniform(0.2, 1.0));
        s.objects.push_back(o);
    }

    // sweep from one side of the scene toward the other through the interior
    s.ay0 = rng.uniform(0.2, 0.8) * size;
    s.ax0 = rng.bernoulli(0.5) ? -0.15 * size : 1.15 * size;
    s.ay1 = rng.uniform(0.25, 0.75) * size;
    s.ax1 = rng.uniform(0.25, 0.75) * size;
    s.ay2 = rng.uniform(0.2, 0.8) * size;
    s.ax2 = s.ax0 < 0 ? 1.15 * size : -0.15 * size;
    s.agent_size = rng.uniform(0.13, 0.19) * (0.8 + 0.55 * difficulty) * size;
    s.agent_phase0 = rng.uniform(0, 6.28);
    s.agent_phase_rate = rng.uniform(0.3, 0.9);
    return s;
}

inline float sample_bg(const Scene& s, int ch, double y, double x) {
    // bilinear over a wrapping control grid
    const double gy = (y / s.size) * s.grid, gx = (x / s.size) * s.grid;
    const int y0 = int(std::floor(gy)), x0 = int(std::floor(gx));
    const double fy = gy - y0, fx = gx - x0;
    auto at = [&](int yy, int xx) {
        yy = ((yy % s.grid) + s.grid) % s.grid;
        xx = ((xx % s.grid) + s.grid) % s.grid;
        return double(s.bg[size_t((yy * s.grid + xx) * 3 + ch)]);
    };
    const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                     fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    return float(v);
}

inline void render_frame(const Scene& s, int t, int length, bool with_agent, Image& img, MaskImage& mask) {
    img = Image(s.size, s.size);
    mask = MaskImage(s.size, s.size);
    const double oy = s.drift_ay * std::sin(6.28 * s.drift_fy * t / length + s.drift_py);
    const double ox = s.drift_ax * std::sin(6.28 * s.drift_fx * t / length + s.drift_px);
    for (int y = 0; y < s.size; ++y)
        for (int x = 0; x < s.size; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = sample_bg(s, c, y + oy, x + ox);

    for (const auto& o : s.objects) {
        const double wy = std::fmod(std::fmod(o.y0 + o.vy * t, double(s.size)) + s.size, double(s.size));
        const double wx = std::fmod(std::fmod(o.x0 + o.vx * t, double(s.size)) + s.size, double(s.size));
        MaskImage om(s.size, s.size);
        if (o.disc) fill_disc(om, wy, wx, o.size);
        else fill_rect(om, int(wy - o.size), int(wx - o.size), int(wy + o.size), int(wx + o.size));
        paint_mask(img, om, o.r, o.g, o.b);
    }

    if (with_agent) {
        const double tt = length > 1 ? double(t) / double(length - 1) : 0.0;
        const double cy = (1 - tt) * (1 - tt) * s.ay0 + 2 * (1 - tt) * tt * s.ay1 + tt * tt * s.ay2;
        const double cx = (1 - tt) * (1 - tt) * s.ax0 + 2 * (1 - tt) * tt * s.ax1 + tt * tt * s.ax2;
        draw_agent(img, mask, s.sprite, cy, cx, s.agent_size, s.agent_phase0 + s.agent_phase_rate * t);
    }
}

}  // namespace synth_detail

// Procedural egocentric-style clip: drifting textured background, moving
// objects, one articulated agent sweeping through and occluding them.
// env_frames render the identical scene without the agent.
inline VideoClip generate_clip(uint64_t seed, int length, int size, double difficulty,
                               bool with_agent = true, AgentSprite sprite = AgentSprite::Hand,
                               int fps = 4) {
    if (length < 1) throw ConfigError("generate_clip: length must be >= 1");
    auto scene = synth_detail::make_scene(seed, size, difficulty, sprite);
    VideoClip clip;
    clip.fps = fps;
    clip.seed = seed;
    clip.frames.resize(size_t(length));
    clip.agent_masks.resize(size_t(length));
    clip.env_frames.resize(size_t(length));
    for (int t = 0; t < length; ++t) {
        MaskImage unused(size, size);
        synth_detail::render_frame(scene, t, length, false, clip.env_frames[size_t(t)], unused);
        if (with_agent) {
            synth_detail::render_frame(scene, t, length, true, clip.frames[size_t(t)],
                                       clip.agent_masks[size_t(t)]);
        } else {
            clip.frames[size_t(t)] = clip.env_frames[size_t(t)];
            clip.agent_masks[size_t(t)] = MaskImage(size, size);
        }
    }
    return clip;
}

// ---------------------------------------------------------------------------
// Mask pool: mined agent tracks plus synthetic masks
// ---------------------------------------------------------------------------

struct MaskPool {
    // each sequence is a temporally contiguous agent track
    std::vector<std::vector<MaskImage>> sequences;
    bool flagged_empty = false;

    int64_t total_masks() const {
        int64_t n = 0;
        for (const auto& s : sequences) n += int64_t(s.size());
        return n;
    }
};

// Nearest-neighbor resize for re-applying pooled masks at other frame sizes.
inline MaskImage mask_resize(const MaskImage& m, int h, int w) {
    if (m.h == h && m.w == w) return m;
    MaskImage out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(y, x) = m.at(std::min(m.h - 1, y * m.h / h), std::min(m.w - 1, x * m.w / w));
    return out;
}

inline MaskPool mine_mask_sequences(const std::vector<VideoClip>& clips) {
    MaskPool pool;
    for (const auto& clip : clips) {
        std::vector<MaskImage> run;
        for (const auto& m : clip.agent_masks) {
            if (!m.empty_mask()) {
                run.push_back(m);
            } else if (!run.empty()) {
                pool.sequences.push_back(std::move(run));
                run.clear();
            }
        }
        if (!run.empty()) pool.sequences.push_back(std::move(run));
    }
    pool.flagged_empty = pool.sequences.empty();
    return pool;
}

// Union of random thick strokes, rectangles and ellipses (1-5 shapes).
// Coverage is kept inside (1%, 40%): a shape that would overshoot is
// reverted, and a floor stamp guarantees the minimum.
inline MaskImage synth_mask(Rng& rng, int size) {
    MaskImage m(size, size);
    const int shapes = int(rng.uniform_int(1, 5));
    for (int i = 0; i < shapes; ++i) {
        const MaskImage before = m;
        const int kind = int(rng.uniform_int(0, 2));
        if (kind == 0) {
            // thick stroke: random walk stamped with discs
            double y = rng.uniform(0, size), x = rng.uniform(0, size);
            double ang = rng.uniform(0, 6.28);
            const double r = rng.uniform(0.03, 0.09) * size;
            const int steps = int(rng.uniform_int(size / 2, size * 2));
            for (int s = 0; s < steps; ++s) {
                fill_disc(m, y, x, r);
                ang += rng.uniform(-0.5, 0.5);
                y += std::sin(ang);
                x += std::cos(ang);
                y = std::clamp(y, 0.0, double(size - 1));
                x = std::clamp(x, 0.0, double(size - 1));
            }
        } else if (kind == 1) {
            const int y0 = int(rng.uniform_int(0, size - 2));
            const int x0 = int(rng.uniform_int(0, size - 2));
            const int hh = std::max(1, int(rng.uniform(0.05, 0.3) * size));
            const int ww = std::max(1, int(rng.uniform(0.05, 0.3) * size));
            fill_rect(m, y0, x0, y0 + hh, x0 + ww);
        } else {
            fill_ellipse(m, rng.uniform(0, size), rng.uniform(0, size),
                         std::max(1.0, rng.uniform(0.04, 0.16) * size),
                         std::max(1.0, rng.uniform(0.04, 0.16) * size));
        }
        if (m.coverage() > 0.38) {
            m = before;
            break;
        }
    }
    while (m.coverage() < 0.015) {
        const int y0 = int(rng.uniform_int(0, size - 2));
        const int x0 = int(rng.uniform_int(0, size - 2));
        fill_rect(m, y0, x0, y0 + std::max(1, size / 10), x0 + std::max(1, size / 10));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Training example assembly (pixel space)
// ---------------------------------------------------------------------------

struct TrainingExample {
    std::vector<Image> context;            // oldest first
    std::vector<MaskImage> context_masks;  // the context frames' agent masks
    Image target;
    MaskImage target_mask;  // synthetic hole to inpaint
    MaskImage agent_mask;   // true agent pixels in the target frame
    LossMask loss_mask;     // latent resolution, hole minus agent overlap
    int t = 0;
    int stride = 0;
    bool flagged_empty_loss = false;
};

struct AssembleStats {
    int64_t skipped_no_target = 0;
    int64_t flagged_empty_loss = 0;
};

// Which latent cells the epsilon loss covers. Hole supervises only the
// synthetic mask region; FullMinusAgent supervises every cell. Agent-overlap
// cells are excluded either way (never supervise on real agent pixels).
enum class LossRegion { Hole, FullMinusAgent };

inline LossRegion loss_region_from_string(const std::string& s) {
    if (s == "hole") return LossRegion::Hole;
    if (s == "full") return LossRegion::FullMinusAgent;
    throw ConfigError("unknown loss region '" + s + "' (hole|full)");
}

inline int context_stride(double gap_seconds, int fps) {
    return std::max(1, int(std::lround(gap_seconds * fps)));
}

// Draws a target frame (rejecting frames with excessive agent coverage), picks
// a hole mask from the pool or the synthetic sampler, and builds the loss mask
// at latent-cell granularity: hole cells minus any cell overlapping the true
// agent mask.
inline std::optional<TrainingExample> assemble_training_example(
    const VideoClip& clip, const MaskPool& pool, Rng& rng, int h, double gap_seconds, int latent_patch,
    double pool_prob = 0.5, double max_agent_cover = 0.5, AssembleStats* stats = nullptr,
    LossRegion loss_region = LossRegion::Hole) {
    const int stride = context_stride(gap_seconds, clip.fps);
    const int first = h * stride;
    if (first > clip.length() - 1) throw ConfigError("assemble_training_example: clip too short for h=" +
                                                     std::to_string(h) + " at stride " + std::to_string(stride));
    std::vector<int> candidates;
    for (int t = first; t < clip.length(); ++t)
        if (clip.agent_masks[size_t(t)].coverage() <= max_agent_cover) candidates.push_back(t);
    if (candidates.empty()) {
        if (stats) stats->skipped_no_target += 1;
        return std::nullopt;
    }
    const int t = candidates[size_t(rng.uniform_int(0, int64_t(candidates.size()) - 1))];

    TrainingExample ex;
    ex.t = t;
    ex.stride = stride;
    for (int k = h; k >= 1; --k) {
        ex.context.push_back(clip.frames[size_t(t - k * stride)]);
        ex.context_masks.push_back(clip.agent_masks[size_t(t - k * stride)]);
    }
    ex.target = clip.frames[size_t(t)];
    ex.agent_mask = clip.agent_masks[size_t(t)];

    const int S = clip.size();
    const bool use_pool = !pool.sequences.empty() && rng.bernoulli(pool_prob);
    if (use_pool) {
        const auto& seq = pool.sequences[size_t(rng.uniform_int(0, int64_t(pool.sequences.size()) - 1))];
        const auto& src = seq[size_t(rng.uniform_int(0, int64_t(seq.size()) - 1))];
        ex.target_mask = mask_resize(src, S, S);
    } else {
        ex.target_mask = synth_mask(rng, S);
    }

    auto hole = mask_downsample(ex.target_mask, latent_patch);
    auto agent = mask_downsample(ex.agent_mask, latent_patch);
    ex.loss_mask = LossMask(hole.h, hole.w);
    for (size_t i = 0; i < hole.m.size(); ++i) {
        const bool base = loss_region == LossRegion::Hole ? hole.m[i] != 0 : true;
        ex.loss_mask.m[i] = uint8_t(base && !agent.m[i]);
    }
    ex.flagged_empty_loss = ex.loss_mask.count() == 0;
    if (ex.flagged_empty_loss && stats) stats->flagged_empty_loss += 1;
    return ex;
}

// ---------------------------------------------------------------------------
// Latent-space bridge to the diffusion model
// ---------------------------------------------------------------------------

// Latents are centered to [-1,1] for diffusion; masks stay {0,1}.
template <class T>
Tensor<T> center_latent(const Tensor<T>& v) {
    return add_const(scale(v, T(2)), T(-1));
}

template <class T>
Tensor<T> uncenter_latent(const Tensor<T>& z) {
    return add_const(scale(z, T(0.5)), T(0.5));
}

template <class T>
struct VidmExample {
    Tensor<T> z0;             // clean target latent (centered)
    Tensor<T> target_masked;  // target with the hole zeroed, encoded+centered
    MaskImage target_mask;    // latent resolution
    std::vector<Tensor<T>> context;  // masked context latents, oldest first
    std::vector<MaskImage> context_masks;
    LossMask loss_mask;
};

template <class T>
VidmExample<T> make_vidm_example(const TrainingExample& ex, const Codec<T>& codec) {
    const int s = codec.config().patch;
    VidmExample<T> out;
    out.z0 = center_latent(codec.encode(ex.target.template to_tensor<T>()));
    // the hole the model must fill is the union of the synthetic mask and the
    // agent pixels: neither is visible context at inference time
    MaskImage hole(ex.target.h, ex.target.w);
    for (size_t i = 0; i < hole.m.size(); ++i)
        hole.m[i] = uint8_t(ex.target_mask.m[i] || ex.agent_mask.m[i]);
    out.target_masked = center_latent(codec.encode(apply_mask(ex.target, hole).template to_tensor<T>()));
    out.target_mask = mask_downsample(hole, s);
    for (size_t f = 0; f < ex.context.size(); ++f) {
        out.context.push_back(center_latent(
            codec.encode(apply_mask(ex.context[f], ex.context_masks[f]).template to_tensor<T>())));
        out.context_masks.push_back(mask_downsample(ex.context_masks[f], s));
    }
    out.loss_mask = ex.loss_mask;
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory I/O: clips/<seed>/frame_%04d.png, mask_%04d.png,
// env_%04d.png + manifest.json (config, seeds, fps, sizes)
// ---------------------------------------------------------------------------

namespace fs_detail {
inline std::string frame_name(const char* prefix, int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d.png", prefix, t);
    return buf;
}
}  // namespace fs_detail

inline void write_clip(const std::string& dir, const VideoClip& clip) {
    std::filesystem::create_directories(dir);
    for (int t = 0; t < clip.length(); ++t) {
        write_png(dir + "/" + fs_detail::frame_name("frame", t), clip.frames[size_t(t)]);
        write_png(dir + "/" + fs_detail::frame_name("mask", t), clip.agent_masks[size_t(t)]);
        write_png(dir + "/" + fs_detail::frame_name("env", t), clip.env_frames[size_t(t)]);
    }
}

inline VideoClip read_clip(const std::string& dir, int fps, uint64_t seed) {
    VideoClip clip;
    clip.fps = fps;
    clip.seed = seed;
    for (int t = 0;; ++t) {
        const std::string f = dir + "/" + fs_detail::frame_name("frame", t);
        if (!std::filesystem::exists(f)) break;
        clip.frames.push_back(read_png_image(f));
        clip.agent_masks.push_back(read_png_mask(dir + "/" + fs_detail::frame_name("mask", t)));
        clip.env_frames.push_back(read_png_image(dir + "/" + fs_detail::frame_name("env", t)));
    }
    if (clip.frames.empty()) throw std::runtime_error("read_clip: no frames under " + dir);
    return clip;
}

struct DatasetManifest {
    std::vector<uint64_t> seeds;
    int fps = 4;
    int size = 16;
    int clip_len = 20;
    double difficulty = 0.5;
    bool with_agent = true;
    std::string sprite = "hand";
    std::string config_hash;
};

inline void write_manifest(const std::string& dir, const DatasetManifest& m) {
    nlohmann::json j;
    j["seeds"] = m.seeds;
    j["fps"] = m.fps;
    j["size"] = m.size;
    j["clip_len"] = m.clip_len;
    j["difficulty"] = m.difficulty;
    j["with_agent"] = m.with_agent;
    j["sprite"] = m.sprite;
    j["config_hash"] = m.config_hash;
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("write_manifest: cannot write " + dir);
}

inline DatasetManifest read_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("read_manifest: missing manifest.json under " + dir);
    nlohmann::json j;
    f >> j;
    DatasetManifest m;
    m.seeds = j["seeds"].get<std::vector<uint64_t>>();
    m.fps = j["fps"];
    m.size = j["size"];
    m.clip_len = j["clip_len"];
    m.difficulty = j["difficulty"];
    m.with_agent = j["with_agent"];
    m.sprite = j.value("sprite", "hand");
    m.config_hash = j.value("config_hash", "");
    return m;
}

// Generates and writes a full dataset; regeneration from the manifest
// reproduces identical bytes.
inline void write_dataset(const std::string& dir, const DatasetManifest& m) {
    std::filesystem::create_directories(dir + "/clips");
    for (uint64_t seed : m.seeds) {
        auto clip = generate_clip(seed, m.clip_len, m.size, m.difficulty, m.with_agent,
                                  sprite_from_string(m.sprite), m.fps);
        write_clip(dir + "/clips/" + std::to_string(seed), clip);
    }
    write_manifest(dir, m);
}

}  // namespace aef
