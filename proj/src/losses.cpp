#include "sgs/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace sgs {

namespace {

void check_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
    }
}

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        k[i] = std::exp(-0.5 * (i - half) * (i - half) / (kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable zero-padded convolution of a single-channel plane.
void conv_same(const std::vector<double>& in, int h, int w,
               const std::array<double, kSsimWindow>& k, std::vector<double>* tmp,
               std::vector<double>* out) {
    const int half = kSsimWindow / 2;
    tmp->assign(in.size(), 0.0);
    out->assign(in.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -half; t <= half; ++t) {
                const int xx = x + t;
                if (xx < 0 || xx >= w) continue;
                acc += k[t + half] * in[y * w + xx];
            }
            (*tmp)[y * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -half; t <= half; ++t) {
                const int yy = y + t;
                if (yy < 0 || yy >= h) continue;
                acc += k[t + half] * (*tmp)[yy * w + x];
            }
            (*out)[y * w + x] = acc;
        }
    }
}

}  // namespace

LossResult l1_loss(const Image& img, const Image& ref) {
    check_same_shape(img, ref, "l1_loss");
    LossResult res;
    res.grad = Image(img.height(), img.width(), img.channels());
    const size_t n = img.count();
    if (n == 0) return res;
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = img.data()[i] - ref.data()[i];
        sum += std::abs(d);
        res.grad.data()[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / static_cast<double>(n);
    }
    res.value = sum / static_cast<double>(n);
    return res;
}

LossResult dssim_loss(const Image& img, const Image& ref) {
    check_same_shape(img, ref, "dssim_loss");
    const int h = img.height(), w = img.width(), ch = img.channels();
    if (h < kSsimWindow || w < kSsimWindow) {
        throw std::invalid_argument("dssim_loss: image smaller than the SSIM window");
    }
    const auto kernel = ssim_kernel();
    const size_t plane = static_cast<size_t>(h) * w;

    LossResult res;
    res.grad = Image(h, w, ch);
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    std::vector<double> mu_x, mu_y, s_xx, s_yy, s_xy, tmp;
    std::vector<double> g_mu(plane), g_sxx(plane), g_sxy(plane), back(plane);

    double ssim_sum = 0.0;
    const double inv_count = 1.0 / (static_cast<double>(plane) * ch);
    for (int c = 0; c < ch; ++c) {
        for (int py = 0; py < h; ++py) {
            for (int px = 0; px < w; ++px) {
                const size_t i = static_cast<size_t>(py) * w + px;
                x[i] = img.at(py, px, c);
                y[i] = ref.at(py, px, c);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
        }
        conv_same(x, h, w, kernel, &tmp, &mu_x);
        conv_same(y, h, w, kernel, &tmp, &mu_y);
        conv_same(xx, h, w, kernel, &tmp, &s_xx);
        conv_same(yy, h, w, kernel, &tmp, &s_yy);
        conv_same(xy, h, w, kernel, &tmp, &s_xy);

        for (size_t i = 0; i < plane; ++i) {
            const double var_x = s_xx[i] - mu_x[i] * mu_x[i];
            const double var_y = s_yy[i] - mu_y[i] * mu_y[i];
            const double cov = s_xy[i] - mu_x[i] * mu_y[i];
            const double a1 = 2.0 * mu_x[i] * mu_y[i] + kSsimC1;
            const double a2 = 2.0 * cov + kSsimC2;
            const double b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kSsimC1;
            const double b2 = var_x + var_y + kSsimC2;
            const double r1 = a1 / b1;
            const double r2 = a2 / b2;
            const double s = r1 * r2;
            ssim_sum += s;

            // d(1 - mean ssim)/d(map) folded in, chained through the three
            // convolution outputs that involve X. The terms are arranged so
            // they cancel bit-exactly when X == Y (a1 == b1, a2 == b2), which
            // keeps identical images a true stationary point.
            const double d_s = -inv_count;
            const double u = d_s / b2;
            g_mu[i] = d_s * (2.0 / (b1 * b2)) *
                      (mu_y[i] * (a2 - a1) + mu_x[i] * s * (b1 - b2));
            g_sxx[i] = -s * u;
            g_sxy[i] = 2.0 * r1 * u;
        }

        conv_same(g_mu, h, w, kernel, &tmp, &back);
        for (size_t i = 0; i < plane; ++i) {
            res.grad.data()[i * ch + c] += back[i];
        }
        conv_same(g_sxx, h, w, kernel, &tmp, &back);
        for (size_t i = 0; i < plane; ++i) {
            res.grad.data()[i * ch + c] += 2.0 * x[i] * back[i];
        }
        conv_same(g_sxy, h, w, kernel, &tmp, &back);
        for (size_t i = 0; i < plane; ++i) {
            res.grad.data()[i * ch + c] += y[i] * back[i];
        }
    }
    res.value = 1.0 - ssim_sum * inv_count;
    return res;
}

LossResult mask_loss(const Image& alpha, const Image& mask_ref) {
    check_same_shape(alpha, mask_ref, "mask_loss");
    constexpr double kEps = 1e-6;
    LossResult res;
    res.grad = Image(alpha.height(), alpha.width(), alpha.channels());
    const size_t n = alpha.count();
    if (n == 0) return res;
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double raw = alpha.data()[i];
        const double m = std::clamp(raw, kEps, 1.0 - kEps);
        const double r = mask_ref.data()[i];
        sum += -(r * std::log(m) + (1.0 - r) * std::log(1.0 - m));
        if (raw > kEps && raw < 1.0 - kEps) {
            res.grad.data()[i] = (-r / m + (1.0 - r) / (1.0 - m)) / static_cast<double>(n);
        }
    }
    res.value = sum / static_cast<double>(n);
    return res;
}

LossResult depth_loss(const Image& depth, const Image& mono, const Image& valid, bool align) {
    check_same_shape(depth, mono, "depth_loss");
    check_same_shape(depth, valid, "depth_loss");
    size_t n_valid = 0;
    double sum_m = 0.0, sum_d = 0.0, sum_mm = 0.0, sum_md = 0.0;
    const size_t n = depth.count();
    for (size_t i = 0; i < n; ++i) {
        if (valid.data()[i] <= 0.0) continue;
        ++n_valid;
        const double m = mono.data()[i];
        const double d = depth.data()[i];
        sum_m += m;
        sum_d += d;
        sum_mm += m * m;
        sum_md += m * d;
    }
    if (n_valid == 0) {
        throw std::invalid_argument("depth_loss: no valid pixels");
    }

    double a = 1.0, b = 0.0;
    if (align) {
        // least-squares a, b minimizing sum (a m + b - d)^2
        const double denom = n_valid * sum_mm - sum_m * sum_m;
        if (std::abs(denom) > 1e-12 * std::max(1.0, sum_mm)) {
            a = (n_valid * sum_md - sum_m * sum_d) / denom;
            b = (sum_d - a * sum_m) / n_valid;
        } else {
            a = 0.0;  // constant prior carries no shape information
            b = sum_d / n_valid;
        }
    }

    LossResult res;
    res.grad = Image(depth.height(), depth.width(), depth.channels());
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (valid.data()[i] <= 0.0) continue;
        const double r = depth.data()[i] - (a * mono.data()[i] + b);
        sum += r * r;
        res.grad.data()[i] = 2.0 * r / static_cast<double>(n_valid);
    }
    res.value = sum / static_cast<double>(n_valid);
    return res;
}

TotalLoss total_loss(const LossParts& parts, const LossWeights& w) {
    TotalLoss out;
    out.l1 = parts.l1.value;
    out.dssim = parts.dssim.value;
    out.mask = parts.mask.value;
    out.depth = parts.depth.value;
    out.value = (1.0 - w.ssim) * out.l1 + w.ssim * out.dssim + w.mask * out.mask +
                w.depth * out.depth;

    if (!parts.l1.grad.empty()) {
        out.d_color = Image(parts.l1.grad.height(), parts.l1.grad.width(),
                            parts.l1.grad.channels());
        for (size_t i = 0; i < out.d_color.count(); ++i) {
            out.d_color.data()[i] = (1.0 - w.ssim) * parts.l1.grad.data()[i];
        }
        if (!parts.dssim.grad.empty()) {
            for (size_t i = 0; i < out.d_color.count(); ++i) {
                out.d_color.data()[i] += w.ssim * parts.dssim.grad.data()[i];
            }
        }
    } else if (!parts.dssim.grad.empty()) {
        out.d_color = Image(parts.dssim.grad.height(), parts.dssim.grad.width(),
                            parts.dssim.grad.channels());
        for (size_t i = 0; i < out.d_color.count(); ++i) {
            out.d_color.data()[i] = w.ssim * parts.dssim.grad.data()[i];
        }
    }
    if (!parts.mask.grad.empty()) {
        out.d_alpha = Image(parts.mask.grad.height(), parts.mask.grad.width(),
                            parts.mask.grad.channels());
        for (size_t i = 0; i < out.d_alpha.count(); ++i) {
            out.d_alpha.data()[i] = w.mask * parts.mask.grad.data()[i];
        }
    }
    if (!parts.depth.grad.empty()) {
        out.d_depth = Image(parts.depth.grad.height(), parts.depth.grad.width(),
                            parts.depth.grad.channels());
        for (size_t i = 0; i < out.d_depth.count(); ++i) {
            out.d_depth.data()[i] = w.depth * parts.depth.grad.data()[i];
        }
    }
    return out;
}

}  // namespace sgs
