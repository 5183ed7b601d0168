#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sgs/geometry.hpp"

namespace sgs {

int sh_basis_count(int degree);

// Real spherical-harmonic basis values up to `degree` at a unit direction.
// `out` must hold sh_basis_count(degree) doubles.
void sh_basis(const Eigen::Vector3d& dir, int degree, double* out);

// Gradient of each basis value with respect to the (unit) direction.
void sh_basis_gradient(const Eigen::Vector3d& dir, int degree, Eigen::Vector3d* out);

// SH color evaluation: linear combination plus the 0.5 DC offset, clamped to
// [0, 1]. coeffs is 3 x sh_basis_count(degree).
Eigen::Vector3d eval_color(const Eigen::Matrix3Xd& coeffs, const Eigen::Vector3d& view_dir,
                           int degree);

// The set of Gaussians being optimized. Parallel arrays indexed by Gaussian.
struct GaussianCloud {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Rotation> rotations;
    std::vector<Scale> scales;
    std::vector<double> opacity_logits;
    std::vector<Eigen::Matrix3Xd> sh;  // each 3 x basis_count
    int sh_degree = 0;

    size_t size() const { return positions.size(); }
    int basis_count() const { return sh_basis_count(sh_degree); }

    double opacity(size_t i) const { return 1.0 / (1.0 + std::exp(-opacity_logits[i])); }

    void resize(size_t n, int degree);

    // Throws on shape mismatches, non-finite values, or badly denormalized
    // quaternions.
    void validate() const;
};

// Binary little-endian PLY, one vertex element carrying
// x y z rot_0..3 scale_0..2 opacity f_dc_0..2 [f_rest_*] as float32.
void save_ply(const GaussianCloud& cloud, const std::string& path);
GaussianCloud load_ply(const std::string& path);

}  // namespace sgs
