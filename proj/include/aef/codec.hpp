#pragma once

#include <cmath>
#include <string>

#include "aef/adam.hpp"
#include "aef/image.hpp"
#include "aef/ops.hpp"
#include "aef/rng.hpp"

namespace aef {

enum class CodecMode { ExactPatch, TrainedAe };

struct CodecConfig {
    int patch = 1;           // spatial downsampling factor s
    int latent_channels = 3; // d
    CodecMode mode = CodecMode::ExactPatch;

    // Exact-patch is lossless iff d == 3*s*s; a smaller d selects a fixed
    // orthonormal projection and the round trip becomes lossy.
    bool lossless() const { return mode == CodecMode::ExactPatch && latent_channels == 3 * patch * patch; }

    static CodecConfig parse(const std::string& mode_str, int patch, int d) {
        CodecConfig c;
        c.patch = patch;
        c.latent_channels = d;
        if (mode_str == "exact-patch") c.mode = CodecMode::ExactPatch;
        else if (mode_str == "trained-ae") c.mode = CodecMode::TrainedAe;
        else throw ConfigError("codec: unknown mode '" + mode_str + "'");
        if (patch < 1) throw ConfigError("codec: patch must be >= 1");
        if (c.mode == CodecMode::ExactPatch && d > 3 * patch * patch)
            throw ConfigError("codec: latent_channels " + std::to_string(d) + " exceeds 3*s^2 = " +
                              std::to_string(3 * patch * patch));
        return c;
    }
};

namespace detail {

inline void check_divisible(int H, int W, int s) {
    if (H % s != 0 || W % s != 0)
        throw ConfigError("codec: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by patch size " + std::to_string(s));
}

// Deterministic orthonormal rows [d, 3*s*s] via Gram-Schmidt on a seeded
// Gaussian matrix. Fixed (not trained); used only when d < 3*s*s.
inline std::vector<double> projection_rows(int d, int full) {
    Rng rng(0x9e3779b9u ^ uint64_t(d * 131 + full));
    std::vector<std::vector<double>> rows;
    while (int(rows.size()) < d) {
        std::vector<double> v(size_t(full), 0.0);
        for (auto& x : v) x = rng.normal();
        for (const auto& r : rows) {
            double dot = 0;
            for (int i = 0; i < full; ++i) dot += v[size_t(i)] * r[size_t(i)];
            for (int i = 0; i < full; ++i) v[size_t(i)] -= dot * r[size_t(i)];
        }
        double nrm = 0;
        for (double x : v) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm < 1e-8) continue;
        for (auto& x : v) x /= nrm;
        rows.push_back(std::move(v));
    }
    std::vector<double> flat;
    flat.reserve(size_t(d) * full);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return flat;
}

}  // namespace detail

// Tiny convolutional autoencoder for the trained-ae mode. log2(s) stride-2
// stages each way.
template <class T>
struct CodecAutoencoder {
    CodecConfig cfg;
    ParamSet<T> params;
    std::vector<Tensor<T>> enc_w, enc_b, dec_w, dec_b;
    int stages = 0;

    CodecAutoencoder() = default;

    CodecAutoencoder(const CodecConfig& c, Rng& rng) : cfg(c) {
        int s = c.patch;
        if (s < 2 || (s & (s - 1)) != 0)
            throw ConfigError("codec: trained-ae needs a power-of-two patch >= 2");
        for (int t = s; t > 1; t /= 2) ++stages;
        const int hidden = 48;
        // per encoder stage: conv3x3 (in->hidden), silu, conv3x3 stride2 (hidden->out)
        int in_ch = 3;
        for (int i = 0; i < stages; ++i) {
            const int out_ch = (i == stages - 1) ? c.latent_channels : hidden;
            add_conv("codec.enc" + std::to_string(i) + ".a", in_ch, hidden, rng, enc_w, enc_b);
            add_conv("codec.enc" + std::to_string(i) + ".b", hidden, out_ch, rng, enc_w, enc_b);
            in_ch = out_ch;
        }
        for (int i = 0; i < stages; ++i) {
            const int out_ch = (i == stages - 1) ? 3 : hidden;
            add_conv("codec.dec" + std::to_string(i) + ".a", in_ch, hidden, rng, dec_w, dec_b);
            add_conv("codec.dec" + std::to_string(i) + ".b", hidden, out_ch, rng, dec_w, dec_b);
            in_ch = out_ch;
        }
    }

    void add_conv(const std::string& name, int ic, int oc, Rng& rng, std::vector<Tensor<T>>& ws,
                  std::vector<Tensor<T>>& bs) {
        const T std_dev = T(std::sqrt(2.0 / double(ic * 9)));
        ws.push_back(params.add(name + ".w", Tensor<T>::randn({oc, ic, 3, 3}, rng, std_dev)));
        bs.push_back(params.add(name + ".b", Tensor<T>::zeros({oc})));
    }

    Tensor<T> encode(const Tensor<T>& img) const {
        Tensor<T> h = img;
        for (int i = 0; i < stages; ++i) {
            h = silu(add_channel_bias(conv2d(h, enc_w[size_t(2 * i)], 1, 1), enc_b[size_t(2 * i)]));
            h = add_channel_bias(conv2d(h, enc_w[size_t(2 * i + 1)], 2, 1), enc_b[size_t(2 * i + 1)]);
            if (i + 1 < stages) h = silu(h);
        }
        return h;
    }

    Tensor<T> decode(const Tensor<T>& z) const {
        Tensor<T> h = z;
        for (int i = 0; i < stages; ++i) {
            h = upsample_nearest2x(h);
            h = silu(add_channel_bias(conv2d(h, dec_w[size_t(2 * i)], 1, 1), dec_b[size_t(2 * i)]));
            h = add_channel_bias(conv2d(h, dec_w[size_t(2 * i + 1)], 1, 1), dec_b[size_t(2 * i + 1)]);
            if (i + 1 < stages) h = silu(h);
        }
        return h;
    }
};

// Maps images to the diffusion latent space and back. Exact-patch mode is a
// pure space-to-depth rearrangement (bitwise invertible); trained-ae wraps
// the autoencoder above.
template <class T>
class Codec {
  public:
    Codec() = default;
    explicit Codec(const CodecConfig& cfg) : cfg_(cfg) {
        if (cfg.mode == CodecMode::ExactPatch && !cfg.lossless())
            proj_ = detail::projection_rows(cfg.latent_channels, 3 * cfg.patch * cfg.patch);
    }

    Codec(const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.mode == CodecMode::TrainedAe) ae_ = std::make_shared<CodecAutoencoder<T>>(cfg, rng);
        else if (!cfg.lossless()) proj_ = detail::projection_rows(cfg.latent_channels, 3 * cfg.patch * cfg.patch);
    }

    const CodecConfig& config() const { return cfg_; }
    bool lossy() const { return !cfg_.lossless(); }
    CodecAutoencoder<T>* autoencoder() { return ae_.get(); }

    Tensor<T> encode(const Tensor<T>& img) const {
        if (img.shape().size() != 3 || img.dim(0) != 3)
            throw DimError("codec.encode: want [3,H,W], got " + shape_str(img.shape()));
        const int s = cfg_.patch, H = img.dim(1), W = img.dim(2);
        detail::check_divisible(H, W, s);
        if (cfg_.mode == CodecMode::TrainedAe) return ae_->encode(img);

        const int lh = H / s, lw = W / s, full = 3 * s * s, d = cfg_.latent_channels;
        std::vector<T> patch(size_t(full), T(0));
        auto out = Tensor<T>::zeros({d, lh, lw});
        for (int py = 0; py < lh; ++py)
            for (int px = 0; px < lw; ++px) {
                gather_patch(img, py, px, patch);
                T* dst = out.data().data();
                if (proj_.empty()) {
                    for (int c = 0; c < full; ++c) dst[size_t((int64_t(c) * lh + py) * lw + px)] = patch[size_t(c)];
                } else {
                    for (int c = 0; c < d; ++c) {
                        double acc = 0;
                        const double* row = proj_.data() + int64_t(c) * full;
                        for (int i = 0; i < full; ++i) acc += row[i] * double(patch[size_t(i)]);
                        dst[size_t((int64_t(c) * lh + py) * lw + px)] = T(acc);
                    }
                }
            }
        return out;
    }

    Tensor<T> decode(const Tensor<T>& latent) const {
        if (latent.shape().size() != 3 || latent.dim(0) != cfg_.latent_channels)
            throw DimError("codec.decode: latent " + shape_str(latent.shape()) + " does not match config d=" +
                           std::to_string(cfg_.latent_channels));
        if (cfg_.mode == CodecMode::TrainedAe) return ae_->decode(latent);

        const int s = cfg_.patch, lh = latent.dim(1), lw = latent.dim(2);
        const int H = lh * s, W = lw * s, full = 3 * s * s, d = cfg_.latent_channels;
        auto out = Tensor<T>::zeros({3, H, W});
        std::vector<T> patch(size_t(full), T(0));
        for (int py = 0; py < lh; ++py)
            for (int px = 0; px < lw; ++px) {
                const T* src = latent.data().data();
                if (proj_.empty()) {
                    for (int c = 0; c < full; ++c) patch[size_t(c)] = src[size_t((int64_t(c) * lh + py) * lw + px)];
                } else {
                    // transpose of the orthonormal projection (least-squares inverse)
                    for (int i = 0; i < full; ++i) {
                        double acc = 0;
                        for (int c = 0; c < d; ++c)
                            acc += proj_[size_t(int64_t(c) * full + i)] *
                                   double(src[size_t((int64_t(c) * lh + py) * lw + px)]);
                        patch[size_t(i)] = T(acc);
                    }
                }
                scatter_patch(out, py, px, patch);
            }
        return out;
    }

  private:
    void gather_patch(const Tensor<T>& img, int py, int px, std::vector<T>& patch) const {
        const int s = cfg_.patch, H = img.dim(1), W = img.dim(2);
        int idx = 0;
        for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    patch[size_t(idx++)] = img.data()[size_t((int64_t(c) * H + py * s + dy) * W + px * s + dx)];
    }

    void scatter_patch(Tensor<T>& img, int py, int px, const std::vector<T>& patch) const {
        const int s = cfg_.patch, H = img.dim(1), W = img.dim(2);
        int idx = 0;
        for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    img.data()[size_t((int64_t(c) * H + py * s + dy) * W + px * s + dx)] = patch[size_t(idx++)];
    }

    CodecConfig cfg_;
    std::vector<double> proj_;
    std::shared_ptr<CodecAutoencoder<T>> ae_;
};

// Latent-resolution mask: a cell is masked if ANY covered pixel is masked,
// so no occluded pixel is ever treated as visible context.
inline MaskImage mask_downsample(const MaskImage& mask, int s) {
    if (s < 1) throw ConfigError("mask_downsample: patch must be >= 1");
    detail::check_divisible(mask.h, mask.w, s);
    for (auto v : mask.m)
        if (v != 0 && v != 1) throw ContractError("mask_downsample: mask must be binary");
    MaskImage out(mask.h / s, mask.w / s);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) out.at(y / s, x / s) = 1;
    return out;
}

}  // namespace aef
