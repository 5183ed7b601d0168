#pragma once

#include <Eigen/Dense>
#include <optional>

namespace sgs {

inline constexpr double kDefaultZNear = 1e-4;

// Diagonal floor added to projected covariances, in px^2. Keeps every splat at
// least ~one pixel wide so sub-pixel Gaussians do not alias away.
inline constexpr double kCovarianceLowPass = 0.3;

// Unit quaternion, (w, x, y, z) order.
struct Rotation {
    Eigen::Vector4d wxyz{1.0, 0.0, 0.0, 0.0};

    static Rotation identity() { return Rotation{}; }
    double norm() const { return wxyz.norm(); }
};

// Per-axis standard deviations stored as logs, so any real value maps to a
// strictly positive scale.
struct Scale {
    Eigen::Vector3d log_sigma{Eigen::Vector3d::Zero()};

    Eigen::Vector3d sigma() const { return log_sigma.array().exp(); }
};

// Pinhole camera, world-to-camera extrinsics, z forward / x right / y down.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
        return rotation * p_world + translation;
    }

    // Throws std::invalid_argument on non-orthonormal rotation, reflection,
    // non-positive focal lengths or degenerate image size.
    void validate() const;

    // Camera at `eye` looking toward `target`; `up` is the world up hint.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double fx, double fy, int width, int height);
};

struct ProjectedPoint {
    double u = 0.0;  // pixels
    double v = 0.0;  // pixels
    double depth = 0.0;  // camera-space z, scene units
};

// Rotation matrix from a quaternion; renormalizes internally. Components must
// be finite and the norm within 1e-3 of one.
Eigen::Matrix3d quat_to_matrix(const Rotation& q);

// Partial derivatives of quat_to_matrix with respect to the four raw
// quaternion components, including the internal-normalization chain.
void quat_to_matrix_jacobian(const Rotation& q, Eigen::Matrix3d d_matrix[4]);

// Sigma = R S S^T R^T. Symmetric positive semi-definite by construction.
Eigen::Matrix3d compose_covariance(const Scale& s, const Rotation& q);

// Pinhole projection. Empty when the point is at or behind the near plane;
// never silently clamps.
std::optional<ProjectedPoint> project_point(const Camera& cam, const Eigen::Vector3d& p_world,
                                            double z_near = kDefaultZNear);

// Jacobian of the perspective map (u, v) at a camera-space point.
Eigen::Matrix<double, 2, 3> perspective_jacobian(const Camera& cam, const Eigen::Vector3d& p_cam);

// EWA covariance projection: Sigma' = J W Sigma W^T J^T plus the low-pass
// floor on the diagonal. Throws std::invalid_argument if the point fails the
// project_point visibility precondition.
Eigen::Matrix2d project_covariance(const Camera& cam, const Eigen::Vector3d& p_world,
                                   const Eigen::Matrix3d& cov,
                                   double low_pass = kCovarianceLowPass);

}  // namespace sgs
