#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "aef/common.hpp"
#include "aef/tensor.hpp"

namespace aef {

// Planar RGB image, values in [0,1], layout [3][H][W].
struct Image {
    int h = 0, w = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(size_t(3) * h_ * w_, 0.f) {}

    float& at(int c, int y, int x) { return px[size_t((int64_t(c) * h + y) * w + x)]; }
    float at(int c, int y, int x) const { return px[size_t((int64_t(c) * h + y) * w + x)]; }

    bool same_size(const Image& o) const { return h == o.h && w == o.w; }

    template <class T>
    Tensor<T> to_tensor() const {
        std::vector<T> data(px.size());
        for (size_t i = 0; i < px.size(); ++i) data[i] = T(px[i]);
        return Tensor<T>::from({3, h, w}, std::move(data));
    }

    template <class T>
    static Image from_tensor(const Tensor<T>& t, bool clamp01 = true) {
        if (t.shape().size() != 3 || t.dim(0) != 3)
            throw DimError("Image::from_tensor: want [3,H,W], got " + shape_str(t.shape()));
        Image im(t.dim(1), t.dim(2));
        for (size_t i = 0; i < im.px.size(); ++i) {
            float v = float(t.data()[i]);
            im.px[i] = clamp01 ? std::clamp(v, 0.f, 1.f) : v;
        }
        return im;
    }
};

// Binary mask, 1 = agent / hole.
struct MaskImage {
    int h = 0, w = 0;
    std::vector<uint8_t> m;

    MaskImage() = default;
    MaskImage(int h_, int w_) : h(h_), w(w_), m(size_t(h_) * w_, 0) {}

    uint8_t& at(int y, int x) { return m[size_t(int64_t(y) * w + x)]; }
    uint8_t at(int y, int x) const { return m[size_t(int64_t(y) * w + x)]; }

    int64_t count() const {
        int64_t n = 0;
        for (auto v : m) n += v != 0;
        return n;
    }

    bool empty_mask() const { return count() == 0; }
    double coverage() const { return m.empty() ? 0.0 : double(count()) / double(m.size()); }
};

// --- drawing helpers (used by the synthetic generator and marker rendering) ---

inline void fill_disc(MaskImage& m, double cy, double cx, double r) {
    const int y0 = std::max(0, int(std::floor(cy - r))), y1 = std::min(m.h - 1, int(std::ceil(cy + r)));
    const int x0 = std::max(0, int(std::floor(cx - r))), x1 = std::min(m.w - 1, int(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = 1;
}

inline void fill_rect(MaskImage& m, int y0, int x0, int y1, int x1) {
    y0 = std::clamp(y0, 0, m.h - 1);
    y1 = std::clamp(y1, 0, m.h - 1);
    x0 = std::clamp(x0, 0, m.w - 1);
    x1 = std::clamp(x1, 0, m.w - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
}

inline void fill_ellipse(MaskImage& m, double cy, double cx, double ry, double rx) {
    const int y0 = std::max(0, int(std::floor(cy - ry))), y1 = std::min(m.h - 1, int(std::ceil(cy + ry)));
    const int x0 = std::max(0, int(std::floor(cx - rx))), x1 = std::min(m.w - 1, int(std::ceil(cx + rx)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = (y - cy) / ry, dx = (x - cx) / rx;
            if (dy * dy + dx * dx <= 1.0) m.at(y, x) = 1;
        }
}

inline void paint_mask(Image& im, const MaskImage& m, float r, float g, float b) {
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            if (m.at(y, x)) {
                im.at(0, y, x) = r;
                im.at(1, y, x) = g;
                im.at(2, y, x) = b;
            }
}

inline Image apply_mask(const Image& im, const MaskImage& m, float fill = 0.f) {
    Image out = im;
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            if (m.at(y, x))
                for (int c = 0; c < 3; ++c) out.at(c, y, x) = fill;
    return out;
}

// Mean squared error over masked pixels only (all channels).
inline double masked_mse(const Image& a, const Image& b, const MaskImage& m) {
    if (!a.same_size(b)) throw DimError("masked_mse: image size mismatch");
    double acc = 0;
    int64_t n = 0;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x)
            if (m.at(y, x)) {
                for (int c = 0; c < 3; ++c) {
                    const double d = a.at(c, y, x) - b.at(c, y, x);
                    acc += d * d;
                }
                n += 3;
            }
    return n ? acc / double(n) : 0.0;
}

}  // namespace aef
