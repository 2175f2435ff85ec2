#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "aef/image.hpp"
#include "aef/ops.hpp"
#include "aef/rng.hpp"

namespace aef {

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

struct PsnrResult {
    double db = 0.0;
    bool capped = false;  // MSE was zero; value is the configured cap
};

inline PsnrResult psnr(const Image& a, const Image& b, double peak = 1.0) {
    if (!a.same_size(b)) throw DimError("psnr: image size mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        const double d = double(a.px[i]) - double(b.px[i]);
        mse += d * d;
    }
    mse /= double(a.px.size());
    if (mse == 0.0) return {kPsnrCap, true};
    return {10.0 * std::log10(peak * peak / mse), false};
}

// PSNR restricted to masked pixels (mask 1 = evaluate here).
inline PsnrResult psnr_masked(const Image& a, const Image& b, const MaskImage& m, double peak = 1.0) {
    const double mse = masked_mse(a, b, m);
    if (m.empty_mask()) return {kPsnrCap, true};
    if (mse == 0.0) return {kPsnrCap, true};
    return {10.0 * std::log10(peak * peak / mse), false};
}

// ---------------------------------------------------------------------------
// SSIM: mean local SSIM with a Gaussian window (sigma = window/6), standard
// k1/k2 constants, evaluated per channel at positions where the window fits.
// ---------------------------------------------------------------------------

inline double ssim(const Image& a, const Image& b, int window = 7, double k1 = 0.01, double k2 = 0.03,
                   double peak = 1.0) {
    if (!a.same_size(b)) throw DimError("ssim: image size mismatch");
    if (window % 2 == 0) throw ConfigError("ssim: window must be odd");
    if (window > a.h || window > a.w)
        throw ConfigError("ssim: window " + std::to_string(window) + " exceeds image " +
                          std::to_string(a.h) + "x" + std::to_string(a.w));
    const int r = window / 2;
    const double sigma = double(window) / 6.0;
    std::vector<double> w(size_t(window) * window);
    double wsum = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double g = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            w[size_t((dy + r) * window + dx + r)] = g;
            wsum += g;
        }
    for (auto& v : w) v /= wsum;

    const double c1 = (k1 * peak) * (k1 * peak);
    const double c2 = (k2 * peak) * (k2 * peak);
    double acc = 0;
    int64_t n = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = r; y < a.h - r; ++y)
            for (int x = r; x < a.w - r; ++x) {
                double ma = 0, mb = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const double wv = w[size_t((dy + r) * window + dx + r)];
                        ma += wv * a.at(c, y + dy, x + dx);
                        mb += wv * b.at(c, y + dy, x + dx);
                    }
                double va = 0, vb = 0, cov = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const double wv = w[size_t((dy + r) * window + dx + r)];
                        const double da = a.at(c, y + dy, x + dx) - ma;
                        const double db = b.at(c, y + dy, x + dx) - mb;
                        va += wv * da * da;
                        vb += wv * db * db;
                        cov += wv * da * db;
                    }
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
    return acc / double(n);
}

// ---------------------------------------------------------------------------
// Surrogate FID: Frechet distance between Gaussian fits of features from a
// fixed seeded random convolutional extractor.
// ---------------------------------------------------------------------------

namespace metric_detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major d*d).
// Returns eigenvalues; A is overwritten, V receives eigenvectors in columns.
inline void jacobi_eigen(std::vector<double>& A, int d, std::vector<double>& evals,
                         std::vector<double>& V) {
    V.assign(size_t(d) * d, 0.0);
    for (int i = 0; i < d; ++i) V[size_t(i) * d + i] = 1.0;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += A[size_t(p) * d + q] * A[size_t(p) * d + q];
        if (off < 1e-22) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                const double apq = A[size_t(p) * d + q];
                if (std::abs(apq) < 1e-18) continue;
                const double app = A[size_t(p) * d + p], aqq = A[size_t(q) * d + q];
                const double theta = (aqq - app) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int k = 0; k < d; ++k) {
                    const double akp = A[size_t(k) * d + p], akq = A[size_t(k) * d + q];
                    A[size_t(k) * d + p] = c * akp - s * akq;
                    A[size_t(k) * d + q] = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    const double apk = A[size_t(p) * d + k], aqk = A[size_t(q) * d + k];
                    A[size_t(p) * d + k] = c * apk - s * aqk;
                    A[size_t(q) * d + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    const double vkp = V[size_t(k) * d + p], vkq = V[size_t(k) * d + q];
                    V[size_t(k) * d + p] = c * vkp - s * vkq;
                    V[size_t(k) * d + q] = s * vkp + c * vkq;
                }
            }
    }
    evals.resize(size_t(d));
    for (int i = 0; i < d; ++i) evals[size_t(i)] = A[size_t(i) * d + i];
}

// Symmetric PSD square root via eigendecomposition; negative eigenvalues are
// floored at zero. Sets `floored` when flooring was material.
inline std::vector<double> sqrtm_psd(std::vector<double> A, int d, bool* floored) {
    std::vector<double> evals, V;
    jacobi_eigen(A, d, evals, V);
    for (auto& e : evals) {
        if (e < -1e-8 && floored) *floored = true;
        e = e > 0 ? std::sqrt(e) : 0.0;
    }
    std::vector<double> R(size_t(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int k = 0; k < d; ++k) acc += V[size_t(i) * d + k] * evals[size_t(k)] * V[size_t(j) * d + k];
            R[size_t(i) * d + j] = acc;
        }
    return R;
}

inline std::vector<double> matmul_dd(const std::vector<double>& A, const std::vector<double>& B, int d) {
    std::vector<double> C(size_t(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double a = A[size_t(i) * d + k];
            for (int j = 0; j < d; ++j) C[size_t(i) * d + j] += a * B[size_t(k) * d + j];
        }
    return C;
}

}  // namespace metric_detail

struct FrechetResult {
    double value = 0.0;
    bool floored = false;       // covariance eigenvalue floor was applied
    bool small_sample = false;  // fewer than 2*dim samples in a set
};

// Frechet distance between Gaussian fits of two feature sets (rows = samples).
inline FrechetResult frechet_from_features(const std::vector<std::vector<double>>& fa,
                                           const std::vector<std::vector<double>>& fb) {
    if (fa.size() < 2 || fb.size() < 2) throw ContractError("frechet: need at least 2 samples per set");
    const int d = int(fa[0].size());
    FrechetResult res;
    if (int(fa.size()) < 2 * d || int(fb.size()) < 2 * d) res.small_sample = true;

    auto fit = [&](const std::vector<std::vector<double>>& f, std::vector<double>& mu,
                   std::vector<double>& cov) {
        const int n = int(f.size());
        mu.assign(size_t(d), 0.0);
        for (const auto& row : f)
            for (int i = 0; i < d; ++i) mu[size_t(i)] += row[size_t(i)];
        for (auto& v : mu) v /= n;
        cov.assign(size_t(d) * d, 0.0);
        for (const auto& row : f)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov[size_t(i) * d + j] += (row[size_t(i)] - mu[size_t(i)]) * (row[size_t(j)] - mu[size_t(j)]);
        for (auto& v : cov) v /= std::max(1, n - 1);
    };

    std::vector<double> mua, mub, ca, cb;
    fit(fa, mua, ca);
    fit(fb, mub, cb);

    double dmu = 0;
    for (int i = 0; i < d; ++i) dmu += (mua[size_t(i)] - mub[size_t(i)]) * (mua[size_t(i)] - mub[size_t(i)]);
    double tra = 0, trb = 0;
    for (int i = 0; i < d; ++i) {
        tra += ca[size_t(i) * d + i];
        trb += cb[size_t(i) * d + i];
    }

    // tr sqrt( sqrt(Ca) Cb sqrt(Ca) ) — symmetric PSD route
    auto sca = metric_detail::sqrtm_psd(ca, d, &res.floored);
    auto inner = metric_detail::matmul_dd(metric_detail::matmul_dd(sca, cb, d), sca, d);
    // symmetrize against accumulation noise
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (inner[size_t(i) * d + j] + inner[size_t(j) * d + i]);
            inner[size_t(i) * d + j] = inner[size_t(j) * d + i] = v;
        }
    auto s = metric_detail::sqrtm_psd(inner, d, &res.floored);
    double trs = 0;
    for (int i = 0; i < d; ++i) trs += s[size_t(i) * d + i];

    res.value = std::max(0.0, dmu + tra + trb - 2.0 * trs);
    return res;
}

// Fixed random conv feature extractor (stand-in for Inception features).
// Deterministic given extractor_seed; all images in a call must share a size.
class FeatureExtractor {
  public:
    FeatureExtractor(uint64_t seed, int feature_dim = 24) : dim_(feature_dim) {
        Rng rng(seed ^ 0xf1d0f00dull);
        w1_ = Tensor<float>::randn({8, 3, 3, 3}, rng, float(std::sqrt(2.0 / 27.0)));
        w2_ = Tensor<float>::randn({dim_, 8, 3, 3}, rng, float(std::sqrt(2.0 / 72.0)));
    }

    int dim() const { return dim_; }

    std::vector<double> features(const Image& img) const {
        NoGradGuard ng;
        auto x = img.to_tensor<float>();
        auto h1 = conv2d(x, w1_, 2, 1);
        auto& h1d = h1.data();
        for (auto& v : h1d) v = std::max(0.f, v);
        auto h2 = conv2d(h1, w2_, 2, 1);
        auto& h2d = h2.data();
        for (auto& v : h2d) v = std::max(0.f, v);
        // global average pool per channel
        const int C = h2.dim(0);
        const int64_t hw = int64_t(h2.dim(1)) * h2.dim(2);
        std::vector<double> f(size_t(C), 0.0);
        for (int c = 0; c < C; ++c) {
            double acc = 0;
            for (int64_t p = 0; p < hw; ++p) acc += double(h2d[size_t(c * hw + p)]);
            f[size_t(c)] = acc / double(hw);
        }
        return f;
    }

  private:
    int dim_;
    Tensor<float> w1_, w2_;
};

inline FrechetResult surrogate_fid(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                                   uint64_t extractor_seed, int feature_dim = 24) {
    FeatureExtractor ex(extractor_seed, feature_dim);
    std::vector<std::vector<double>> fa, fb;
    fa.reserve(set_a.size());
    fb.reserve(set_b.size());
    for (const auto& im : set_a) fa.push_back(ex.features(im));
    for (const auto& im : set_b) fb.push_back(ex.features(im));
    return frechet_from_features(fa, fb);
}

// ---------------------------------------------------------------------------
// Spearman's rank correlation (average ranks for ties)
// ---------------------------------------------------------------------------

struct SpearmanResult {
    double rho = 0.0;
    bool flagged_constant = false;  // undefined (constant input); rho forced to 0
};

inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const int n = int(x.size());
    std::vector<int> idx(size_t(n), 0);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return x[size_t(a)] < x[size_t(b)]; });
    std::vector<double> r(size_t(n), 0.0);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && x[size_t(idx[size_t(j + 1)])] == x[size_t(idx[size_t(i)])]) ++j;
        const double rank = 0.5 * (i + j) + 1.0;  // average of 1-based ranks
        for (int k = i; k <= j; ++k) r[size_t(idx[size_t(k)])] = rank;
        i = j + 1;
    }
    return r;
}

inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ContractError("spearman: need two equal-length vectors of size >= 2");
    const auto all_equal = [](const std::vector<double>& v) {
        for (double e : v)
            if (e != v[0]) return false;
        return true;
    };
    if (all_equal(x) || all_equal(y)) return {0.0, true};

    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const int n = int(x.size());
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        mx += rx[size_t(i)];
        my += ry[size_t(i)];
    }
    mx /= n;
    my /= n;
    double num = 0, vx = 0, vy = 0;
    for (int i = 0; i < n; ++i) {
        const double a = rx[size_t(i)] - mx, b = ry[size_t(i)] - my;
        num += a * b;
        vx += a * a;
        vy += b * b;
    }
    return {num / std::sqrt(vx * vy), false};
}

// ---------------------------------------------------------------------------
// MetricReport
// ---------------------------------------------------------------------------

struct MetricReport {
    std::vector<double> psnr_per_frame, ssim_per_frame;
    double psnr_mean = 0, ssim_mean = 0;
    double fid = 0;
    bool fid_flagged = false;
    double runtime_per_image_s = 0;
    int count = 0;
    std::string config_hash, label = "vidm";

    void finalize() {
        count = int(psnr_per_frame.size());
        if (count == 0) throw ContractError("MetricReport: no samples");
        psnr_mean = std::accumulate(psnr_per_frame.begin(), psnr_per_frame.end(), 0.0) / count;
        ssim_mean = std::accumulate(ssim_per_frame.begin(), ssim_per_frame.end(), 0.0) / count;
    }

    // line-delimited records, one frame per line plus a summary line
    void save_jsonl(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        for (size_t i = 0; i < psnr_per_frame.size(); ++i) {
            nlohmann::json j;
            j["frame"] = i;
            j["psnr"] = psnr_per_frame[i];
            j["ssim"] = ssim_per_frame[i];
            f << j.dump() << "\n";
        }
        nlohmann::json s;
        s["summary"] = true;
        s["label"] = label;
        s["psnr_mean"] = psnr_mean;
        s["ssim_mean"] = ssim_mean;
        s["surrogate_fid"] = fid;
        s["fid_flagged"] = fid_flagged;
        s["runtime_per_image_s"] = runtime_per_image_s;
        s["count"] = count;
        s["config_hash"] = config_hash;
        f << s.dump() << "\n";
        if (!f) throw std::runtime_error("MetricReport: cannot write " + path);
    }

    std::string table() const {
        char buf[256];
        std::string out = "Method                    PSNR↑    SSIM↑    sFID↓    Runtime↓\n";
        std::snprintf(buf, sizeof buf, "%-24s %7.2f  %7.3f  %7.2f  %7.2fs/image\n", label.c_str(),
                      psnr_mean, ssim_mean, fid, runtime_per_image_s);
        return out + buf;
    }
};

}  // namespace aef
