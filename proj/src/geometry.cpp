#include "sgs/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace sgs {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw std::invalid_argument("camera focal lengths must be positive");
    }
    if (width < 1 || height < 1) {
        throw std::invalid_argument("camera image size must be at least 1x1");
    }
    if (!rotation.allFinite() || !translation.allFinite()) {
        throw std::invalid_argument("camera pose has non-finite entries");
    }
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw std::invalid_argument("camera rotation is not orthonormal");
    }
    if (rotation.determinant() < 0.0) {
        throw std::invalid_argument("camera rotation is a reflection");
    }
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double fx, double fy, int width, int height) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(up).normalized();
    if (!right.allFinite() || right.norm() < 0.5) {
        // up parallel to the view direction; pick any perpendicular axis
        right = forward.cross(Eigen::Vector3d::UnitX());
        if (right.norm() < 1e-6) right = forward.cross(Eigen::Vector3d::UnitY());
        right.normalize();
    }
    const Eigen::Vector3d down = forward.cross(right);

    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

Eigen::Matrix3d quat_to_matrix(const Rotation& q) {
    if (!q.wxyz.allFinite()) {
        throw std::invalid_argument("quaternion has non-finite components");
    }
    const double n = q.wxyz.norm();
    if (std::abs(n - 1.0) > 1e-3) {
        throw std::invalid_argument("quaternion norm too far from one");
    }
    const Eigen::Vector4d u = q.wxyz / n;
    const double w = u[0], x = u[1], y = u[2], z = u[3];

    Eigen::Matrix3d m;
    m << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
         2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
         2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return m;
}

namespace {

// dR/d(unit quaternion component); rows follow the expansion in quat_to_matrix.
void unit_quat_matrix_partials(const Eigen::Vector4d& u, Eigen::Matrix3d d[4]) {
    const double w = u[0], x = u[1], y = u[2], z = u[3];
    d[0] << 0, -2 * z, 2 * y,
            2 * z, 0, -2 * x,
            -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z,
            2 * y, -4 * x, -2 * w,
            2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w,
            2 * x, 0, 2 * z,
            -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x,
            2 * w, -4 * z, 2 * y,
            2 * x, 2 * y, 0;
}

}  // namespace

void quat_to_matrix_jacobian(const Rotation& q, Eigen::Matrix3d d_matrix[4]) {
    const double n = q.wxyz.norm();
    const Eigen::Vector4d u = q.wxyz / n;

    Eigen::Matrix3d d_unit[4];
    unit_quat_matrix_partials(u, d_unit);

    // Chain through u = q / |q|: du_m/dq_k = (delta_mk - u_m u_k) / |q|.
    for (int k = 0; k < 4; ++k) {
        d_matrix[k].setZero();
        for (int m = 0; m < 4; ++m) {
            const double dmk = (m == k) ? 1.0 : 0.0;
            d_matrix[k] += d_unit[m] * ((dmk - u[m] * u[k]) / n);
        }
    }
}

Eigen::Matrix3d compose_covariance(const Scale& s, const Rotation& q) {
    if (!s.log_sigma.allFinite()) {
        throw std::invalid_argument("scale has non-finite components");
    }
    const Eigen::Matrix3d r = quat_to_matrix(q);
    const Eigen::Vector3d var = (2.0 * s.log_sigma).array().exp();
    return r * var.asDiagonal() * r.transpose();
}

std::optional<ProjectedPoint> project_point(const Camera& cam, const Eigen::Vector3d& p_world,
                                            double z_near) {
    const Eigen::Vector3d p = cam.to_camera(p_world);
    if (!(p.z() > z_near)) {
        return std::nullopt;
    }
    ProjectedPoint out;
    out.u = cam.fx * p.x() / p.z() + cam.cx;
    out.v = cam.fy * p.y() / p.z() + cam.cy;
    out.depth = p.z();
    return out;
}

Eigen::Matrix<double, 2, 3> perspective_jacobian(const Camera& cam, const Eigen::Vector3d& p_cam) {
    const double x = p_cam.x(), y = p_cam.y(), z = p_cam.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / z, 0.0, -cam.fx * x / (z * z),
         0.0, cam.fy / z, -cam.fy * y / (z * z);
    return j;
}

Eigen::Matrix2d project_covariance(const Camera& cam, const Eigen::Vector3d& p_world,
                                   const Eigen::Matrix3d& cov, double low_pass) {
    const Eigen::Vector3d p = cam.to_camera(p_world);
    if (!(p.z() > kDefaultZNear)) {
        throw std::invalid_argument("project_covariance: point not visible");
    }
    const Eigen::Matrix<double, 2, 3> m = perspective_jacobian(cam, p) * cam.rotation;
    Eigen::Matrix2d out = m * cov * m.transpose();
    out(0, 0) += low_pass;
    out(1, 1) += low_pass;
    return out;
}

}  // namespace sgs
