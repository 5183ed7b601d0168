#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sgs/gaussians.hpp"
#include "sgs/geometry.hpp"
#include "sgs/image.hpp"

namespace sgs {

struct Aabb {
    Eigen::Vector3d min{-1.0, -1.0, -1.0};
    Eigen::Vector3d max{1.0, 1.0, 1.0};

    Eigen::Vector3d extent() const { return max - min; }
    double volume() const { return extent().prod(); }
    bool contains(const Eigen::Vector3d& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
};

// Binary foreground mask paired with the camera it was captured from.
struct Silhouette {
    Image mask;  // H x W, values in {0, 1}
    Camera cam;

    void validate() const;
};

struct HullSample {
    Eigen::Vector3d position;
    Eigen::Vector3d color;
};

struct CarveResult {
    std::vector<Eigen::Vector3d> points;
    bool empty_warning = false;  // set when nothing survives the carve
};

// Samples n points uniformly in bounds (deterministic per seed) and keeps
// those that land, for every view, in front of the camera, inside the image
// and on a foreground pixel (nearest-pixel lookup).
CarveResult carve(const std::vector<Silhouette>& views, const Aabb& bounds, size_t n_samples,
                  uint64_t seed, int threads = 0);

struct ColorizeResult {
    std::vector<HullSample> samples;
    size_t dropped = 0;  // points visible in zero views
};

// Mean bilinear color over the views each point is visible in.
ColorizeResult assign_colors(const std::vector<Eigen::Vector3d>& points,
                             const std::vector<Camera>& cams, const std::vector<Image>& images);

// Converts hull samples to Gaussians: isotropic scale from the mean distance
// to the knn nearest neighbors, identity rotation, logit-encoded opacity, DC
// color from the sample color. Needs at least knn + 1 samples.
GaussianCloud init_gaussians(const std::vector<HullSample>& samples, double init_opacity = 0.1,
                             int knn = 3);

// Cube centered at the origin scaled to reach every camera center; fallback
// when a dataset does not declare scene bounds.
Aabb default_carve_bounds(const std::vector<Camera>& cams);

}  // namespace sgs
