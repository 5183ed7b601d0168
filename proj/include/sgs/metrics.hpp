#pragma once

#include "sgs/image.hpp"

namespace sgs {

// 10 log10(1 / MSE) on [0, 1] images, capped at 100 dB for identical inputs.
double psnr(const Image& img, const Image& ref);

// Mean SSIM (same window and constants as the D-SSIM loss).
double ssim(const Image& img, const Image& ref);

}  // namespace sgs
