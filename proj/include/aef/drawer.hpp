#pragma once

#include "aef/synth.hpp"

namespace aef {

// Simulated 1D drawer task. The hidden handle position lives on the drawer
// face; an action is how far along the face the end-effector extends before
// grasping. The drawer opens iff the grasp lands within tolerance of the
// handle. Rendering is deterministic given (scene seed, state).
struct DrawerEnvConfig {
    int size = 32;
    double tolerance = 0.06;
    double handle_lo = 0.15, handle_hi = 0.85;
};

class DrawerEnv {
  public:
    DrawerEnv(uint64_t seed, DrawerEnvConfig cfg = {}) : cfg_(cfg), seed_(seed) {
        Rng rng(seed ^ 0xd7a3e7ull);
        handle_ = rng.uniform(cfg.handle_lo, cfg.handle_hi);
        for (auto& v : wall_) v = float(rng.uniform(0.25, 0.55));
        wood_ = float(rng.uniform(0.45, 0.7));
    }

    double handle() const { return handle_; }
    uint64_t seed() const { return seed_; }
    const DrawerEnvConfig& config() const { return cfg_; }
    bool success(double action) const { return std::abs(action - handle_) <= cfg_.tolerance; }

    // agent_x: normalized [0,1] horizontal gripper position; agent_depth:
    // 0 = parked at the bottom edge, 1 = at the drawer face; open: drawer
    // state in [0,1].
    Image render(double open, double agent_x, double agent_depth, bool with_agent, AgentSprite sprite,
                 MaskImage* mask_out = nullptr) const {
        const int S = cfg_.size;
        Image img(S, S);
        MaskImage mask(S, S);

        // textured wall
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float v = wall_[size_t((y / 4 % 4) * 4 + (x / 4 % 4))];
                img.at(0, y, x) = v;
                img.at(1, y, x) = v * 0.95f;
                img.at(2, y, x) = v * 0.9f;
            }

        // cabinet body across the upper half; the drawer face slides down as
        // it opens, revealing the dark interior
        const int body_top = S / 6;
        const int face_h = S / 5;
        const int face_shut = body_top + S / 8;
        const int face_y = face_shut + int(std::lround(open * 0.38 * S));
        MaskImage body(S, S);
        fill_rect(body, body_top, S / 12, face_shut - 1, S - 1 - S / 12);
        paint_mask(img, body, wood_, wood_ * 0.8f, wood_ * 0.55f);
        if (face_y > face_shut) {
            MaskImage interior(S, S);
            fill_rect(interior, face_shut, S / 12 + 1, face_y - 1, S - 1 - S / 12 - 1);
            paint_mask(img, interior, 0.08f, 0.06f, 0.05f);
        }
        MaskImage face(S, S);
        fill_rect(face, face_y, S / 12, face_y + face_h, S - 1 - S / 12);
        paint_mask(img, face, wood_ * 1.15f, wood_ * 0.9f, wood_ * 0.6f);

        // handle: bright block on the face at the hidden position
        const int hx = int(std::lround(handle_ * (S - 1)));
        MaskImage knob(S, S);
        fill_rect(knob, face_y + face_h / 3, hx - std::max(1, S / 24), face_y + face_h / 3 + std::max(1, S / 16),
                  hx + std::max(1, S / 24));
        paint_mask(img, knob, 0.95f, 0.85f, 0.25f);

        if (with_agent) {
            const double park_y = S - 1.0 - S / 10.0;
            const double grasp_y = face_y + face_h / 2.0;
            const double cy = park_y + (grasp_y - park_y) * agent_depth;
            const double cx = agent_x * (S - 1);
            draw_agent(img, mask, sprite, cy, cx, 0.085 * S, 2.2 + 1.3 * agent_depth);
        }
        if (mask_out) *mask_out = mask;
        return img;
    }

    // Grasp-then-retract trial. Returns the frame at attempted grasp and the
    // frame after retraction (drawer open iff the grasp succeeded).
    struct Trial {
        Image grasp, retract;
        MaskImage grasp_mask, retract_mask;
        bool success = false;
    };

    Trial run_trial(double action, AgentSprite sprite) const {
        Trial tr;
        tr.success = success(action);
        tr.grasp = render(0.0, action, 1.0, true, sprite, &tr.grasp_mask);
        tr.retract = render(tr.success ? 1.0 : 0.0, action, 0.0, true, sprite, &tr.retract_mask);
        return tr;
    }

    // Monotone-progress demonstration: approach the handle over the first
    // half, pull the drawer open over the second half. Ground-truth progress
    // is t/(L-1).
    VideoClip demo_clip(int length, AgentSprite sprite, Rng& rng) const {
        if (length < 2) throw ConfigError("demo_clip: need at least 2 frames");
        VideoClip clip;
        clip.fps = 4;
        clip.seed = seed_;
        const double start_x = rng.uniform(0.1, 0.9);
        const int approach = length / 2;
        for (int t = 0; t < length; ++t) {
            double open = 0, ax = 0, depth = 0;
            if (t < approach) {
                const double f = approach > 1 ? double(t) / double(approach - 1) : 1.0;
                ax = start_x + (handle_ - start_x) * f;
                depth = f;
            } else {
                const double f = double(t - approach + 1) / double(length - approach);
                open = f;
                ax = handle_;
                depth = 1.0;
            }
            MaskImage m;
            clip.frames.push_back(render(open, ax, depth, true, sprite, &m));
            clip.agent_masks.push_back(m);
            clip.env_frames.push_back(render(open, ax, depth, false, sprite, nullptr));
        }
        return clip;
    }

  private:
    DrawerEnvConfig cfg_;
    uint64_t seed_ = 0;
    double handle_ = 0.5;
    float wall_[16] = {};
    float wood_ = 0.5f;
};

}  // namespace aef
