#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aef/adam.hpp"
#include "aef/config.hpp"
#include "aef/image.hpp"
#include "aef/ops.hpp"

namespace aef {

struct UNetConfig {
    int latent_channels = 3;  // d
    int context_frames = 3;   // h
    int base_channels = 64;
    std::vector<int> channel_multipliers = {1, 2, 4};
    std::vector<int> attention_enabled = {0, 1, 1};  // requested per level
    int heads = 8;
    int groupnorm_groups = 32;
    int latent_size = 16;
    int res_blocks = 2;
    int token_budget = 4096;
    int max_timestep = 1000;

    int levels() const { return int(channel_multipliers.size()); }
    int frames() const { return context_frames + 1; }
    int input_channels() const { return 2 * latent_channels + 1; }
    int level_channels(int level) const { return base_channels * channel_multipliers[size_t(level)]; }
    int level_size(int level) const { return latent_size >> level; }

    static UNetConfig from_config(const Config& c) {
        UNetConfig u;
        u.latent_channels = int(c.integer("codec.latent_channels"));
        u.context_frames = int(c.integer("unet.context_frames"));
        u.base_channels = int(c.integer("unet.base_channels"));
        u.channel_multipliers = parse_int_list(c.str("unet.channel_multipliers"));
        u.attention_enabled = parse_int_list(c.str("unet.attention_levels"));
        u.heads = int(c.integer("unet.heads"));
        u.groupnorm_groups = int(c.integer("unet.groupnorm_groups"));
        u.latent_size = int(c.integer("unet.latent_size"));
        u.res_blocks = int(c.integer("unet.res_blocks"));
        u.token_budget = int(c.integer("unet.token_budget"));
        u.max_timestep = int(c.integer("diffusion.T"));
        u.validate();
        return u;
    }

    void validate() const {
        if (context_frames < 0) throw ConfigError("unet: context_frames must be >= 0");
        if (channel_multipliers.empty()) throw ConfigError("unet: need at least one level");
        if (attention_enabled.size() != channel_multipliers.size())
            throw ConfigError("unet: attention_levels length != channel_multipliers length");
        if (base_channels % groupnorm_groups != 0)
            throw ConfigError("unet: base_channels " + std::to_string(base_channels) +
                              " not divisible by groupnorm_groups " + std::to_string(groupnorm_groups));
        if (latent_size % (1 << (levels() - 1)) != 0)
            throw ConfigError("unet: latent_size " + std::to_string(latent_size) +
                              " not divisible across " + std::to_string(levels()) + " levels");
        for (int l = 0; l < levels(); ++l) {
            if (level_channels(l) % groupnorm_groups != 0)
                throw ConfigError("unet: level " + std::to_string(l) + " channels not divisible by groups");
            if (level_channels(l) % heads != 0)
                throw ConfigError("unet: level " + std::to_string(l) + " channels not divisible by heads");
        }
    }

    // Canonical geometry string; hashed into checkpoints for fail-fast loads.
    std::string canonical() const {
        std::ostringstream o;
        o << "d=" << latent_channels << ";h=" << context_frames << ";base=" << base_channels << ";mult=";
        for (size_t i = 0; i < channel_multipliers.size(); ++i) o << (i ? "," : "") << channel_multipliers[i];
        o << ";attn=";
        for (size_t i = 0; i < attention_enabled.size(); ++i) o << (i ? "," : "") << attention_enabled[i];
        o << ";heads=" << heads << ";gn=" << groupnorm_groups << ";S=" << latent_size
          << ";rb=" << res_blocks << ";budget=" << token_budget;
        return o.str();
    }

    std::string geometry_hash() const { return hex64(fnv1a64(canonical())); }
};

// Tokens seen by an attention layer at a pyramid level: all frames' spatial
// positions attend jointly.
inline int count_tokens(const UNetConfig& cfg, int level) {
    const int s = cfg.level_size(level);
    return cfg.frames() * s * s;
}

inline bool attention_active(const UNetConfig& cfg, int level) {
    return cfg.attention_enabled[size_t(level)] != 0 && count_tokens(cfg, level) <= cfg.token_budget;
}

// ---------------------------------------------------------------------------
// Model input: (2d+1, h+1, H, W). Per frame slice the channel blocks are
// [noisy-target d | masked-latent d | mask 1]; context slices carry zeros in
// the noisy-target block; frame h (last) is the target.
// ---------------------------------------------------------------------------

template <class T>
struct ModelInput {
    Tensor<T> stacked;
    int d = 0;

    int frames() const { return stacked.dim(1); }
    int spatial() const { return stacked.dim(2); }
};

template <class T>
ModelInput<T> assemble_input(const Tensor<T>& z_u, const Tensor<T>& target_masked,
                             const MaskImage& target_mask, const std::vector<Tensor<T>>& context_latents,
                             const std::vector<MaskImage>& context_masks) {
    if (z_u.shape().size() != 3) throw DimError("assemble_input: z_u must be [d,H,W]");
    const int d = z_u.dim(0), H = z_u.dim(1), W = z_u.dim(2);
    check_same_shape(z_u.shape(), target_masked.shape(), "assemble_input target");
    if (target_mask.h != H || target_mask.w != W)
        throw DimError("assemble_input: target mask size mismatch");
    if (context_latents.size() != context_masks.size())
        throw DimError("assemble_input: " + std::to_string(context_latents.size()) + " context latents vs " +
                       std::to_string(context_masks.size()) + " masks");
    const int h = int(context_latents.size());
    const int C = 2 * d + 1, F = h + 1;

    for (int f = 0; f < h; ++f) {
        check_same_shape(z_u.shape(), context_latents[size_t(f)].shape(), "assemble_input context");
        if (context_masks[size_t(f)].h != H || context_masks[size_t(f)].w != W)
            throw DimError("assemble_input: context mask size mismatch at frame " + std::to_string(f));
    }

    const int64_t hw = int64_t(H) * W;
    // graph parents: z_u and target_masked and contexts (differentiable packing)
    std::vector<std::shared_ptr<Node<T>>> parents{z_u.node(), target_masked.node()};
    for (const auto& cl : context_latents) parents.push_back(cl.node());

    auto out = Tensor<T>::result({C, F, H, W}, parents, [d, h, hw](Node<T>& n) {
        // parent order: z_u, target_masked, context...
        auto& ps = n.parents;
        auto scatter = [&](const std::shared_ptr<Node<T>>& p, int block, int f) {
            if (!p->requires_grad) return;
            p->ensure_grad();
            for (int c = 0; c < d; ++c)
                for (int64_t i = 0; i < hw; ++i)
                    p->grad[size_t(c * hw + i)] += n.grad[size_t(((int64_t(block) + c) * (h + 1) + f) * hw + i)];
        };
        scatter(ps[0], 0, h);
        scatter(ps[1], d, h);
        for (int f = 0; f < h; ++f) scatter(ps[size_t(2 + f)], d, f);
    });
    std::fill(out.data().begin(), out.data().end(), T(0));

    auto put = [&](const std::vector<T>& src, int block, int f) {
        for (int c = 0; c < d; ++c)
            for (int64_t i = 0; i < hw; ++i)
                out.data()[size_t(((int64_t(block) + c) * F + f) * hw + i)] = src[size_t(c * hw + i)];
    };
    auto put_mask = [&](const MaskImage& m, int f) {
        for (int64_t i = 0; i < hw; ++i) {
            if (m.m[size_t(i)] > 1) throw ContractError("assemble_input: mask channel must be binary");
            out.data()[size_t((int64_t(2 * d) * F + f) * hw + i)] = T(m.m[size_t(i)]);
        }
    };

    // context slices, oldest first; target is the last slice
    for (int f = 0; f < h; ++f) {
        put(context_latents[size_t(f)].data(), d, f);
        put_mask(context_masks[size_t(f)], f);
    }
    put(z_u.data(), 0, h);
    put(target_masked.data(), d, h);
    put_mask(target_mask, h);

    ModelInput<T> mi;
    mi.stacked = out;
    mi.d = d;
    return mi;
}

// ---------------------------------------------------------------------------
// VIDM U-Net: frame slices share conv weights and are processed in parallel;
// attention layers and the final merge convolution are the only cross-frame
// paths.
// ---------------------------------------------------------------------------

namespace unet_detail {

// [F,C,H,W] <-> per-frame [C,H,W] plumbing (contiguous blocks).
template <class T>
std::vector<Tensor<T>> split_frames(const Tensor<T>& x) {
    const int F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto flat = reshape(x, {F * C, H, W});
    std::vector<Tensor<T>> out;
    out.reserve(size_t(F));
    for (int f = 0; f < F; ++f) out.push_back(slice_channels(flat, f * C, (f + 1) * C));
    return out;
}

template <class T>
Tensor<T> stack_frames(const std::vector<Tensor<T>>& frames) {
    const int F = int(frames.size());
    const int C = frames[0].dim(0), H = frames[0].dim(1), W = frames[0].dim(2);
    return reshape(concat_channels(frames), {F, C, H, W});
}

}  // namespace unet_detail

template <class T>
class VidmUnet {
  public:
    VidmUnet(const UNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed ^ 0xae2f00d5u);
        const int E = temb_dim();

        time_w1_ = params_.add("time.w1", he(rng, {cfg.base_channels, E}, cfg.base_channels));
        time_b1_ = zeros_p("time.b1", {E});
        time_w2_ = params_.add("time.w2", he(rng, {E, E}, E));
        time_b2_ = zeros_p("time.b2", {E});

        init_w_ = conv_p("init.w", cfg.input_channels(), cfg.base_channels, 3, rng);
        init_b_ = zeros_p("init.b", {cfg.base_channels});

        int ch = cfg.base_channels;
        for (int l = 0; l < cfg.levels(); ++l) {
            const int out_ch = cfg.level_channels(l);
            Level lev;
            lev.attn_on = attention_active(cfg, l);
            for (int b = 0; b < cfg.res_blocks; ++b) {
                lev.blocks.push_back(make_res("enc" + std::to_string(l) + ".res" + std::to_string(b),
                                              b == 0 ? ch : out_ch, out_ch, 0, rng));
                if (lev.attn_on)
                    lev.attns.push_back(make_attn("enc" + std::to_string(l) + ".attn" + std::to_string(b),
                                                  out_ch, rng));
            }
            ch = out_ch;
            if (l + 1 < cfg.levels())
                lev.resample = make_res("down" + std::to_string(l), ch, cfg.level_channels(l + 1), -1, rng);
            enc_.push_back(std::move(lev));
            if (l + 1 < cfg.levels()) ch = cfg.level_channels(l + 1);
        }

        mid_res1_ = make_res("mid.res1", ch, ch, 0, rng);
        mid_attn_on_ = attention_active(cfg, cfg.levels() - 1);
        if (mid_attn_on_) mid_attn_ = make_attn("mid.attn", ch, rng);
        mid_res2_ = make_res("mid.res2", ch, ch, 0, rng);

        for (int l = cfg.levels() - 1; l >= 0; --l) {
            const int out_ch = cfg.level_channels(l);
            Level lev;
            lev.attn_on = attention_active(cfg, l);
            // first block consumes the skip concat
            lev.blocks.push_back(make_res("dec" + std::to_string(l) + ".res0", ch + out_ch, out_ch, 0, rng));
            if (lev.attn_on) lev.attns.push_back(make_attn("dec" + std::to_string(l) + ".attn0", out_ch, rng));
            for (int b = 1; b < cfg.res_blocks; ++b) {
                lev.blocks.push_back(
                    make_res("dec" + std::to_string(l) + ".res" + std::to_string(b), out_ch, out_ch, 0, rng));
                if (lev.attn_on)
                    lev.attns.push_back(make_attn("dec" + std::to_string(l) + ".attn" + std::to_string(b),
                                                  out_ch, rng));
            }
            ch = out_ch;
            if (l > 0) lev.resample = make_res("up" + std::to_string(l), ch, cfg.level_channels(l - 1), +1, rng);
            dec_.push_back(std::move(lev));
            if (l > 0) ch = cfg.level_channels(l - 1);
        }

        head_gn_s_ = ones_p("head.gn.s", {cfg.base_channels});
        head_gn_b_ = zeros_p("head.gn.b", {cfg.base_channels});
        merge_w_ = conv_p("head.merge.w", cfg.frames() * cfg.base_channels, cfg.base_channels, 1, rng);
        merge_b_ = zeros_p("head.merge.b", {cfg.base_channels});
        out_w_ = conv_p("head.out.w", cfg.base_channels, cfg.latent_channels, 3, rng, T(0.2));
        out_b_ = zeros_p("head.out.b", {cfg.latent_channels});
    }

    const UNetConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    int64_t param_count() const { return params_.count(); }

    // Epsilon prediction for the target slice.
    Tensor<T> forward(const ModelInput<T>& input, int u) const {
        const auto& s = input.stacked.shape();
        if (s.size() != 4 || s[0] != cfg_.input_channels() || s[1] != cfg_.frames() ||
            s[2] != cfg_.latent_size || s[3] != cfg_.latent_size)
            throw DimError("unet.forward: input " + shape_str(s) + " does not match config (" +
                           std::to_string(cfg_.input_channels()) + "," + std::to_string(cfg_.frames()) +
                           "," + std::to_string(cfg_.latent_size) + "," + std::to_string(cfg_.latent_size) + ")");
        if (u < 1 || u > cfg_.max_timestep)
            throw ContractError("unet.forward: timestep " + std::to_string(u) + " outside 1.." +
                                std::to_string(cfg_.max_timestep));

        auto temb = time_embedding(u);

        // frames as batch: [F, C, H, W]
        auto x = permute_cf(input.stacked);
        auto h = add_channel_bias_n(conv2d(x, init_w_, 1, 1), init_b_);

        std::vector<Tensor<T>> skips;
        for (size_t l = 0; l < enc_.size(); ++l) {
            const auto& lev = enc_[l];
            for (size_t b = 0; b < lev.blocks.size(); ++b) {
                h = res_forward(lev.blocks[b], h, temb);
                if (lev.attn_on) h = attn_forward(lev.attns[b], h);
            }
            skips.push_back(h);
            if (lev.resample) h = res_forward(*lev.resample, h, temb);
        }

        h = res_forward(mid_res1_, h, temb);
        if (mid_attn_on_) h = attn_forward(mid_attn_, h);
        h = res_forward(mid_res2_, h, temb);

        for (size_t i = 0; i < dec_.size(); ++i) {
            const auto& lev = dec_[i];
            auto skip = skips[skips.size() - 1 - i];
            h = concat_channel_axis1(h, skip);
            for (size_t b = 0; b < lev.blocks.size(); ++b) {
                h = res_forward(lev.blocks[b], h, temb);
                if (lev.attn_on) h = attn_forward(lev.attns[b], h);
            }
            if (lev.resample) h = res_forward(*lev.resample, h, temb);
        }

        // head: per-slice norm, (h+1)x1x1 merge across frames, project to d
        auto frames = unet_detail::split_frames(h);
        for (auto& f : frames)
            f = silu(group_norm(f, cfg_.groupnorm_groups, T(1e-5), head_gn_s_, head_gn_b_));
        auto cat = concat_channels(frames);  // [(h+1)*base, H, W]
        auto merged = silu(add_channel_bias(conv2d(cat, merge_w_, 1, 0), merge_b_));
        return add_channel_bias(conv2d(merged, out_w_, 1, 1), out_b_);
    }

  private:
    struct Res {
        Tensor<T> gn1_s, gn1_b, conv1_w, conv1_b, temb_w, temb_b, gn2_s, gn2_b, conv2_w, conv2_b;
        std::optional<Tensor<T>> skip_w;
        int in_ch = 0, out_ch = 0;
        int resample = 0;  // -1 avgpool inside, +1 nearest-upsample inside
    };
    struct Attn {
        Tensor<T> gn_s, gn_b, wq, wk, wv, wo;
    };
    struct Level {
        std::vector<Res> blocks;
        std::vector<Attn> attns;
        std::optional<Res> resample;
        bool attn_on = false;
    };

    int temb_dim() const { return cfg_.base_channels * 2; }

    Tensor<T> he(Rng& rng, Shape shape, int fan_in, T gain = T(1)) {
        auto t = Tensor<T>::randn(shape, rng, T(std::sqrt(2.0 / double(fan_in))) * gain);
        return t;
    }

    Tensor<T> conv_p(const std::string& name, int ic, int oc, int k, Rng& rng, T gain = T(1)) {
        return params_.add(name, he(rng, {oc, ic, k, k}, ic * k * k, gain));
    }
    Tensor<T> zeros_p(const std::string& name, Shape s) { return params_.add(name, Tensor<T>::zeros(std::move(s))); }
    Tensor<T> ones_p(const std::string& name, Shape s) {
        return params_.add(name, Tensor<T>::filled(std::move(s), T(1)));
    }

    Res make_res(const std::string& p, int ic, int oc, int resample, Rng& rng) {
        Res r;
        r.in_ch = ic;
        r.out_ch = oc;
        r.resample = resample;
        r.gn1_s = ones_p(p + ".gn1.s", {ic});
        r.gn1_b = zeros_p(p + ".gn1.b", {ic});
        r.conv1_w = conv_p(p + ".conv1.w", ic, oc, 3, rng);
        r.conv1_b = zeros_p(p + ".conv1.b", {oc});
        r.temb_w = params_.add(p + ".temb.w", he(rng, {temb_dim(), oc}, temb_dim()));
        r.temb_b = zeros_p(p + ".temb.b", {oc});
        r.gn2_s = ones_p(p + ".gn2.s", {oc});
        r.gn2_b = zeros_p(p + ".gn2.b", {oc});
        r.conv2_w = conv_p(p + ".conv2.w", oc, oc, 3, rng, T(0.2));
        r.conv2_b = zeros_p(p + ".conv2.b", {oc});
        if (ic != oc) r.skip_w = conv_p(p + ".skip.w", ic, oc, 1, rng);
        return r;
    }

    Attn make_attn(const std::string& p, int ch, Rng& rng) {
        Attn a;
        a.gn_s = ones_p(p + ".gn.s", {ch});
        a.gn_b = zeros_p(p + ".gn.b", {ch});
        a.wq = params_.add(p + ".wq", he(rng, {ch, ch}, ch));
        a.wk = params_.add(p + ".wk", he(rng, {ch, ch}, ch));
        a.wv = params_.add(p + ".wv", he(rng, {ch, ch}, ch));
        a.wo = params_.add(p + ".wo", he(rng, {ch, ch}, ch, T(0.2)));
        return a;
    }

    // Sinusoidal embedding of the diffusion timestep through a 2-layer MLP.
    Tensor<T> time_embedding(int u) const {
        const int E = temb_dim();
        const int half = cfg_.base_channels / 2;
        std::vector<T> emb(size_t(cfg_.base_channels), T(0));
        for (int i = 0; i < half; ++i) {
            const double w = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
            emb[size_t(i)] = T(std::sin(u * w));
            emb[size_t(half + i)] = T(std::cos(u * w));
        }
        auto e = Tensor<T>::from({1, cfg_.base_channels}, std::move(emb));
        auto h1 = silu(add_row_bias(matmul(e, time_w1_), time_b1_));
        return add_row_bias(matmul(h1, time_w2_), time_b2_);  // [1, E]
    }

    // (C,F,H,W) -> (F,C,H,W)
    Tensor<T> permute_cf(const Tensor<T>& x) const {
        const int C = x.dim(0), F = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t hw = int64_t(H) * W;
        auto out = Tensor<T>::result({F, C, H, W}, {x.node()}, [x = x.node(), C, F, hw](Node<T>& n) {
            x->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int f = 0; f < F; ++f)
                    for (int64_t p = 0; p < hw; ++p)
                        x->grad[size_t((int64_t(c) * F + f) * hw + p)] +=
                            n.grad[size_t((int64_t(f) * C + c) * hw + p)];
        });
        const auto& xv = x.data();
        auto& o = out.data();
        for (int c = 0; c < C; ++c)
            for (int f = 0; f < F; ++f)
                for (int64_t p = 0; p < hw; ++p)
                    o[size_t((int64_t(f) * C + c) * hw + p)] = xv[size_t((int64_t(c) * F + f) * hw + p)];
        return out;
    }

    // concat along channel axis of [F,C,H,W] tensors
    Tensor<T> concat_channel_axis1(const Tensor<T>& a, const Tensor<T>& b) const {
        const int F = a.dim(0);
        auto fa = unet_detail::split_frames(a);
        auto fb = unet_detail::split_frames(b);
        std::vector<Tensor<T>> cat;
        cat.reserve(size_t(F));
        for (int f = 0; f < F; ++f)
            cat.push_back(concat_channels(std::vector<Tensor<T>>{fa[size_t(f)], fb[size_t(f)]}));
        return unet_detail::stack_frames(cat);
    }

    Tensor<T> res_forward(const Res& r, const Tensor<T>& x, const Tensor<T>& temb) const {
        auto frames = unet_detail::split_frames(x);
        std::vector<Tensor<T>> hs, sk;
        hs.reserve(frames.size());
        sk.reserve(frames.size());
        for (auto& f : frames) {
            auto t = silu(group_norm(f, cfg_.groupnorm_groups, T(1e-5), r.gn1_s, r.gn1_b));
            auto s = f;
            if (r.resample < 0) {
                t = avgpool2x(t);
                s = avgpool2x(s);
            } else if (r.resample > 0) {
                t = upsample_nearest2x(t);
                s = upsample_nearest2x(s);
            }
            hs.push_back(t);
            sk.push_back(s);
        }
        auto h = add_channel_bias_n(conv2d(unet_detail::stack_frames(hs), r.conv1_w, 1, 1), r.conv1_b);

        auto tv = reshape(add_row_bias(matmul(silu(temb), r.temb_w), r.temb_b), {r.out_ch});
        h = add_channel_bias_n(h, tv);

        auto frames2 = unet_detail::split_frames(h);
        for (auto& f : frames2) f = silu(group_norm(f, cfg_.groupnorm_groups, T(1e-5), r.gn2_s, r.gn2_b));
        auto h2 = add_channel_bias_n(conv2d(unet_detail::stack_frames(frames2), r.conv2_w, 1, 1), r.conv2_b);

        auto skip = unet_detail::stack_frames(sk);
        if (r.skip_w) skip = conv2d(skip, *r.skip_w, 1, 0);
        return add(h2, skip);
    }

    Tensor<T> attn_forward(const Attn& a, const Tensor<T>& x) const {
        const int F = x.dim(0), H = x.dim(2), W = x.dim(3);
        auto frames = unet_detail::split_frames(x);
        std::vector<Tensor<T>> toks;
        toks.reserve(frames.size());
        for (auto& f : frames)
            toks.push_back(channels_to_rows(group_norm(f, cfg_.groupnorm_groups, T(1e-5), a.gn_s, a.gn_b)));
        auto tok = concat_rows(toks);  // [F*H*W, C]
        auto q = matmul(tok, a.wq);
        auto k = matmul(tok, a.wk);
        auto v = matmul(tok, a.wv);
        auto att = multi_head_attention(q, k, v, cfg_.heads, a.wo);

        std::vector<Tensor<T>> outs;
        outs.reserve(size_t(F));
        for (int f = 0; f < F; ++f)
            outs.push_back(rows_to_channels(slice_rows(att, f * H * W, (f + 1) * H * W), H, W));
        return add(unet_detail::stack_frames(outs), x);
    }

    UNetConfig cfg_;
    ParamSet<T> params_;
    Tensor<T> time_w1_, time_b1_, time_w2_, time_b2_;
    Tensor<T> init_w_, init_b_;
    std::vector<Level> enc_, dec_;
    Res mid_res1_, mid_res2_;
    Attn mid_attn_;
    bool mid_attn_on_ = false;
    Tensor<T> head_gn_s_, head_gn_b_, merge_w_, merge_b_, out_w_, out_b_;
};

}  // namespace aef
