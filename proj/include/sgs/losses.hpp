#pragma once

#include "sgs/image.hpp"

namespace sgs {

// Weights of the composite training loss.
struct LossWeights {
    double ssim = 0.2;   // blends L1 against D-SSIM
    double mask = 0.1;   // silhouette BCE
    double depth = 0.05;  // depth consistency
};

struct LossResult {
    double value = 0.0;
    Image grad;  // with respect to the first image argument
};

// Mean absolute difference over all pixels and channels.
LossResult l1_loss(const Image& img, const Image& ref);

// 1 - mean SSIM, 11x11 Gaussian window sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 on
// unit dynamic range, channels averaged. Throws on images smaller than the
// window.
LossResult dssim_loss(const Image& img, const Image& ref);

// Binary cross-entropy between a rendered alpha image and a reference mask;
// predictions are clamped to [1e-6, 1 - 1e-6].
LossResult mask_loss(const Image& alpha, const Image& mask_ref);

// Mean squared difference over valid pixels. With align set, a scale and
// shift fitted to mono by least squares (treated as constants in the
// gradient) remove the monocular scale/shift ambiguity first. Throws when no
// pixel is valid.
LossResult depth_loss(const Image& depth, const Image& mono, const Image& valid, bool align);

struct LossParts {
    LossResult l1;
    LossResult dssim;
    LossResult mask;
    LossResult depth;
};

struct TotalLoss {
    double value = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double mask = 0.0;
    double depth = 0.0;
    Image d_color;  // (1 - w.ssim) * l1.grad + w.ssim * dssim.grad
    Image d_alpha;  // w.mask * mask.grad
    Image d_depth;  // w.depth * depth.grad
};

// (1 - w_ssim) L1 + w_ssim D-SSIM + w_mask mask + w_depth depth; gradients are
// the same linear combination of the part gradients.
TotalLoss total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace sgs
