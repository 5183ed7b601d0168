#pragma once

#include <Eigen/Dense>

#include "sgs/gaussians.hpp"
#include "sgs/geometry.hpp"
#include "sgs/image.hpp"

namespace sgs {

struct RenderSettings {
    Eigen::Vector3d background{0.0, 0.0, 0.0};
    int sh_degree = 0;              // degree evaluated at render time (<= cloud degree)
    double alpha_cutoff = 1.0 / 255.0;  // contributions below this are skipped
    double extent_sigma = 3.0;      // splat truncation radius in std devs; <= 0 disables
    int max_blend = 0;              // per-pixel blend cap; 0 = unlimited
    int threads = 0;                // 0 = hardware concurrency

    static RenderSettings exact() {
        RenderSettings s;
        s.alpha_cutoff = 0.0;
        s.extent_sigma = 0.0;
        return s;
    }
};

struct RenderOutput {
    Image color;  // H x W x 3, [0, 1]
    Image alpha;  // H x W, [0, 1]
    Image depth;  // H x W, accumulated depth, 0 where nothing rendered
};

// Upstream gradient images, one per RenderOutput buffer. Empty images stand
// for all-zero gradients.
struct RenderGrad {
    Image d_color;
    Image d_alpha;
    Image d_depth;
};

// Gradients with the same shapes as the learnable GaussianCloud fields.
struct ParamGradients {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector4d> rotations;
    std::vector<Eigen::Vector3d> log_scales;
    std::vector<double> opacity_logits;
    std::vector<Eigen::Matrix3Xd> sh;

    void resize_like(const GaussianCloud& cloud);
    void accumulate(const ParamGradients& other);
};

// Front-to-back alpha compositing of the cloud into color, accumulated alpha
// and accumulated depth. Gaussians are sorted by camera-space depth of their
// means, ties broken by index.
RenderOutput render(const GaussianCloud& cloud, const Camera& cam, const RenderSettings& settings);

// Analytic gradients of render() with respect to every learnable field,
// including the chains through Sigma = R S S^T R^T, the EWA projection and
// the SH color evaluation. Contributions skipped by the forward cutoffs get
// zero gradient.
ParamGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                               const RenderSettings& settings, const RenderGrad& upstream);

// Brute-force single-pixel reference: loops every Gaussian with no cutoffs
// except the 0.99 alpha clamp. Defines the semantics render() must reproduce
// when its cutoffs are disabled.
void render_pixel_oracle(const GaussianCloud& cloud, const Camera& cam,
                         const RenderSettings& settings, int px, int py,
                         Eigen::Vector3d* color, double* alpha, double* depth);

}  // namespace sgs
