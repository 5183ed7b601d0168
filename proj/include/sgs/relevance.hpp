#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sgs/image.hpp"

namespace sgs {

// Channel-major C x H x W grid of latent values.
class LatentGrid {
public:
    LatentGrid() = default;
    LatentGrid(int channels, int height, int width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<size_t>(channels) * height * width, fill) {}

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    size_t count() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
    }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const LatentGrid& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

// Strictly decreasing alpha-bar sequence in (0, 1]. Step t (1-based) indexes
// alpha_bar[t - 1].
struct NoiseSchedule {
    std::vector<double> alpha_bar;

    int steps() const { return static_cast<int>(alpha_bar.size()); }
    double alpha_bar_at(int t) const;
    void validate() const;

    // picks the noising step used for relevance probing
    int default_edit_step() const { return static_cast<int>(std::lround(0.6 * steps())); }

    // classic linear-beta schedule with alpha_bar_t = prod (1 - beta_i)
    static NoiseSchedule linear_beta(int steps, double beta_start = 1e-4, double beta_end = 0.02);
};

// Opaque condition handles passed straight through to the backend; guidance
// scales ride along for backends that apply classifier-free guidance.
struct TextCondition {
    std::string instruction;
    double guidance_scale = 7.5;
};

struct ImageCondition {
    std::string source;
    double guidance_scale = 1.5;
};

// Shape-preserving noise predictor. Implementations must be deterministic for
// fixed inputs; text == nullptr means the null instruction.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual LatentGrid predict_noise(const LatentGrid& z_t, int t, const ImageCondition& image,
                                     const TextCondition* text) const = 0;
};

// Deterministic test double: predicts `baseline` everywhere plus `amplitude`
// inside a rectangle, but only while a text condition is present.
class ToyDenoiser : public Denoiser {
public:
    ToyDenoiser(int x0, int y0, int width, int height, double amplitude, double baseline = 0.0)
        : x0_(x0), y0_(y0), width_(width), height_(height), amplitude_(amplitude),
          baseline_(baseline) {}

    LatentGrid predict_noise(const LatentGrid& z_t, int t, const ImageCondition& image,
                             const TextCondition* text) const override;

private:
    int x0_, y0_, width_, height_;
    double amplitude_, baseline_;
};

// sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) noise
LatentGrid forward_noise(const LatentGrid& z0, int t, const LatentGrid& noise,
                         const NoiseSchedule& schedule);

// |text-conditioned - null-conditioned| noise difference, channel-mean, then
// min-max normalized to [0, 1] (constant maps normalize to zero).
Image relevance_map(const Denoiser& denoiser, const LatentGrid& z_t, int t,
                    const ImageCondition& image_cond, const TextCondition& text_cond);

// mask = 1 where relevance > tau; optional 3x3 Gaussian blur first.
Image threshold_mask(const Image& relevance, double tau = 0.35, bool blur = false);

// Nearest-neighbor upsampling of a mask to pixel resolution.
Image upsample_mask(const Image& mask, int target_height, int target_width);

// Per element: mask ? edited : original. Unmasked values are copied bitwise.
LatentGrid blend_latents(const LatentGrid& edited, const LatentGrid& original, const Image& mask);

// Latent exchange files: magic "LTNT", u32 LE C H W, float32 LE channel-major.
void save_latent(const LatentGrid& grid, const std::string& path);
LatentGrid load_latent(const std::string& path);

}  // namespace sgs
