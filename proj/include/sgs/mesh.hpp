#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sgs/gaussians.hpp"
#include "sgs/hull.hpp"

namespace sgs {

// Regular grid of non-negative density samples over an axis-aligned box.
// resolution counts sample points per axis (cells are resolution - 1).
struct ScalarField {
    Eigen::Vector3i resolution{2, 2, 2};
    Aabb bounds;
    std::vector<double> values;  // x fastest, then y, then z

    double& at(int i, int j, int k) {
        return values[(static_cast<size_t>(k) * resolution.y() + j) * resolution.x() + i];
    }
    double at(int i, int j, int k) const {
        return values[(static_cast<size_t>(k) * resolution.y() + j) * resolution.x() + i];
    }
    Eigen::Vector3d spacing() const {
        return bounds.extent().cwiseQuotient((resolution - Eigen::Vector3i::Ones()).cast<double>());
    }
    Eigen::Vector3d position(int i, int j, int k) const {
        const Eigen::Vector3d s = spacing();
        return bounds.min + Eigen::Vector3d(i * s.x(), j * s.y(), k * s.z());
    }
    void validate() const;
};

struct TriangleMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Eigen::Vector3i> triangles;

    void validate() const;  // index range and degeneracy checks
};

// Sum of alpha-weighted Gaussian densities sampled on a grid, each Gaussian
// truncated at three standard deviations. Gaussians with alpha below
// min_opacity are ignored (0 keeps everything).
ScalarField opacity_field(const GaussianCloud& cloud, const Aabb& bounds,
                          const Eigen::Vector3i& resolution, double min_opacity = 0.0,
                          int threads = 0);

// Standard 256-case marching cubes with linear edge interpolation, shared
// vertices and outward winding for density above the iso value. An iso value
// outside the sampled range yields an empty mesh.
TriangleMesh marching_cubes(const ScalarField& field, double iso = 0.3, int threads = 0);

// Uniform-weight umbrella smoothing; each iteration moves every vertex by
// factor times the offset to its neighbor centroid.
TriangleMesh laplacian_smooth(const TriangleMesh& mesh, int iterations = 5, double factor = 0.5);

// Quadric-error edge collapse down to at most target_faces faces (or until no
// legal collapse remains). Collapses that would break the surface manifold or
// flip faces are rejected.
TriangleMesh decimate(const TriangleMesh& mesh, size_t target_faces = 100000);

enum class MeshFormat { ply, obj };

void write_mesh(const TriangleMesh& mesh, const std::string& path, MeshFormat format);
TriangleMesh load_mesh(const std::string& path);  // format from extension

}  // namespace sgs
