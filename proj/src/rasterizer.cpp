#include "sgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sgs/errors.hpp"
#include "sgs/parallel.hpp"

namespace sgs {

namespace {

// Per-pixel weights are clamped here so (1 - alpha_i) never reaches zero and
// the backward-pass divisions stay bounded.
constexpr double kAlphaClamp = 0.99;

// Blending below this residual transmittance cannot move any output by more
// than ~1e-9, so the walk stops early.
constexpr double kMinTransmittance = 1e-9;

struct Splat {
    int index = 0;  // position in the cloud
    double u = 0.0, v = 0.0;
    double alpha = 0.0;  // sigmoid of the opacity logit
    Eigen::Vector3d p_cam;
    Eigen::Matrix2d cov2d;
    Eigen::Matrix2d conic;
    Eigen::Vector3d color;      // after the [0,1] clamp
    Eigen::Vector3d raw_color;  // before the clamp
    Eigen::Vector3d view_dir;
    double view_dist = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

int clamp_to(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

// Projects and shades every visible Gaussian, returning splats sorted
// front-to-back by mean depth (ties by cloud index).
std::vector<Splat> preprocess(const GaussianCloud& cloud, const Camera& cam,
                              const RenderSettings& settings, int use_degree) {
    cam.validate();
    cloud.validate();

    const Eigen::Vector3d cam_center = cam.center();
    std::vector<Splat> splats;
    splats.reserve(cloud.size());

    double basis[16];
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto proj = project_point(cam, cloud.positions[i]);
        if (!proj) continue;

        Splat s;
        s.index = static_cast<int>(i);
        s.u = proj->u;
        s.v = proj->v;
        s.p_cam = cam.to_camera(cloud.positions[i]);
        s.alpha = cloud.opacity(i);

        const Eigen::Matrix3d cov = compose_covariance(cloud.scales[i], cloud.rotations[i]);
        s.cov2d = project_covariance(cam, cloud.positions[i], cov);
        const double det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(1, 0);
        s.conic << s.cov2d(1, 1), -s.cov2d(0, 1), -s.cov2d(1, 0), s.cov2d(0, 0);
        s.conic /= det;

        s.view_dist = (cloud.positions[i] - cam_center).norm();
        s.view_dir = (cloud.positions[i] - cam_center) / s.view_dist;
        sh_basis(s.view_dir, use_degree, basis);
        s.raw_color = Eigen::Vector3d::Constant(0.5);
        for (int b = 0; b < sh_basis_count(use_degree); ++b) {
            s.raw_color += cloud.sh[i].col(b) * basis[b];
        }
        s.color = s.raw_color.cwiseMax(0.0).cwiseMin(1.0);

        if (settings.extent_sigma > 0.0) {
            const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
            const double disc = std::sqrt(std::max(0.0, mid * mid - det));
            const double radius = settings.extent_sigma * std::sqrt(mid + disc);
            s.x0 = clamp_to(static_cast<int>(std::ceil(s.u - radius)), 0, cam.width - 1);
            s.x1 = clamp_to(static_cast<int>(std::floor(s.u + radius)), 0, cam.width - 1);
            s.y0 = clamp_to(static_cast<int>(std::ceil(s.v - radius)), 0, cam.height - 1);
            s.y1 = clamp_to(static_cast<int>(std::floor(s.v + radius)), 0, cam.height - 1);
            if (std::ceil(s.u - radius) > cam.width - 1 || std::floor(s.u + radius) < 0 ||
                std::ceil(s.v - radius) > cam.height - 1 || std::floor(s.v + radius) < 0) {
                continue;  // splat support misses the image
            }
        } else {
            s.x0 = 0;
            s.x1 = cam.width - 1;
            s.y0 = 0;
            s.y1 = cam.height - 1;
        }
        splats.push_back(std::move(s));
    }

    std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        if (a.p_cam.z() != b.p_cam.z()) return a.p_cam.z() < b.p_cam.z();
        return a.index < b.index;
    });
    return splats;
}

struct BlendEntry {
    int splat = 0;          // index into the splat array
    double weight = 0.0;    // alpha_i after the 0.99 clamp
    double transmittance = 0.0;  // product of (1 - alpha_j) before this entry
    double gauss = 0.0;     // exp(-0.5 d^T conic d)
    bool clamped = false;   // weight hit the 0.99 ceiling
    Eigen::Vector2d offset{0.0, 0.0};  // pixel minus projected mean
};

// Walks the splats covering pixel (px, py) front to back. Appends one entry
// per accepted contribution when `record` is given.
void blend_pixel(const std::vector<Splat>& splats, const std::vector<int>& row_splats,
                 const RenderSettings& settings, int px, int py, Eigen::Vector3d* color,
                 double* alpha_out, double* depth_out, std::vector<BlendEntry>* record) {
    double transmittance = 1.0;
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double depth = 0.0;
    int blended = 0;

    for (int si : row_splats) {
        const Splat& s = splats[si];
        if (px < s.x0 || px > s.x1) continue;
        const Eigen::Vector2d d(px - s.u, py - s.v);
        const double maha = d.dot(s.conic * d);
        const double gauss = std::exp(-0.5 * maha);
        const double raw = s.alpha * gauss;
        const double weight = std::min(kAlphaClamp, raw);
        if (weight < settings.alpha_cutoff || weight <= 0.0) continue;

        acc += s.color * (weight * transmittance);
        depth += s.p_cam.z() * (weight * transmittance);
        if (record) {
            record->push_back({si, weight, transmittance, gauss, raw > kAlphaClamp, d});
        }
        transmittance *= 1.0 - weight;
        ++blended;
        if (settings.max_blend > 0 && blended >= settings.max_blend) break;
        if (transmittance < kMinTransmittance) break;
    }

    *color = acc + settings.background * transmittance;
    *alpha_out = 1.0 - transmittance;
    *depth_out = depth;
}

// Splats intersecting a row, preserving depth order.
std::vector<int> splats_on_row(const std::vector<Splat>& splats, int y) {
    std::vector<int> out;
    for (size_t i = 0; i < splats.size(); ++i) {
        if (y >= splats[i].y0 && y <= splats[i].y1) out.push_back(static_cast<int>(i));
    }
    return out;
}

}  // namespace

void ParamGradients::resize_like(const GaussianCloud& cloud) {
    positions.assign(cloud.size(), Eigen::Vector3d::Zero());
    rotations.assign(cloud.size(), Eigen::Vector4d::Zero());
    log_scales.assign(cloud.size(), Eigen::Vector3d::Zero());
    opacity_logits.assign(cloud.size(), 0.0);
    sh.assign(cloud.size(), Eigen::Matrix3Xd::Zero(3, cloud.basis_count()));
}

void ParamGradients::accumulate(const ParamGradients& other) {
    for (size_t i = 0; i < positions.size(); ++i) {
        positions[i] += other.positions[i];
        rotations[i] += other.rotations[i];
        log_scales[i] += other.log_scales[i];
        opacity_logits[i] += other.opacity_logits[i];
        sh[i] += other.sh[i];
    }
}

RenderOutput render(const GaussianCloud& cloud, const Camera& cam,
                    const RenderSettings& settings) {
    const int use_degree = std::min(settings.sh_degree, cloud.sh_degree);
    const std::vector<Splat> splats = preprocess(cloud, cam, settings, use_degree);

    RenderOutput out;
    out.color = Image(cam.height, cam.width, 3);
    out.alpha = Image(cam.height, cam.width, 1);
    out.depth = Image(cam.height, cam.width, 1);

    parallel_blocks(cam.height, settings.threads, [&](int, int y_begin, int y_end) {
        for (int y = y_begin; y < y_end; ++y) {
            const std::vector<int> row = splats_on_row(splats, y);
            for (int x = 0; x < cam.width; ++x) {
                Eigen::Vector3d color;
                double alpha, depth;
                blend_pixel(splats, row, settings, x, y, &color, &alpha, &depth, nullptr);
                for (int c = 0; c < 3; ++c) out.color.at(y, x, c) = color[c];
                out.alpha.at(y, x) = alpha;
                out.depth.at(y, x) = depth;
            }
        }
    });
    return out;
}

namespace {

// Per-splat accumulation of screen-space gradients. Everything downstream of
// (u, v, conic, alpha, color, z) is folded in a single pass afterwards.
struct SplatGrad {
    double du = 0.0, dv = 0.0;
    Eigen::Matrix2d dconic = Eigen::Matrix2d::Zero();
    double dalpha = 0.0;  // w.r.t. sigmoid(opacity logit)
    Eigen::Vector3d dcolor = Eigen::Vector3d::Zero();
    double dz = 0.0;  // w.r.t. camera-space depth of the mean
};

}  // namespace

ParamGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                               const RenderSettings& settings, const RenderGrad& upstream) {
    const int use_degree = std::min(settings.sh_degree, cloud.sh_degree);
    const std::vector<Splat> splats = preprocess(cloud, cam, settings, use_degree);

    const bool has_color = !upstream.d_color.empty();
    const bool has_alpha = !upstream.d_alpha.empty();
    const bool has_depth = !upstream.d_depth.empty();
    if (has_color && (upstream.d_color.height() != cam.height ||
                      upstream.d_color.width() != cam.width || upstream.d_color.channels() != 3)) {
        throw std::invalid_argument("render_backward: color gradient shape mismatch");
    }
    if (has_alpha && (upstream.d_alpha.height() != cam.height ||
                      upstream.d_alpha.width() != cam.width || upstream.d_alpha.channels() != 1)) {
        throw std::invalid_argument("render_backward: alpha gradient shape mismatch");
    }
    if (has_depth && (upstream.d_depth.height() != cam.height ||
                      upstream.d_depth.width() != cam.width || upstream.d_depth.channels() != 1)) {
        throw std::invalid_argument("render_backward: depth gradient shape mismatch");
    }

    const int threads = std::min(resolve_threads(settings.threads), std::max(cam.height, 1));
    std::vector<std::vector<SplatGrad>> worker_grads(threads,
                                                     std::vector<SplatGrad>(splats.size()));

    parallel_blocks(cam.height, threads, [&](int worker, int y_begin, int y_end) {
        std::vector<SplatGrad>& grads = worker_grads[worker];
        std::vector<BlendEntry> entries;
        for (int y = y_begin; y < y_end; ++y) {
            const std::vector<int> row = splats_on_row(splats, y);
            for (int x = 0; x < cam.width; ++x) {
                entries.clear();
                Eigen::Vector3d color;
                double alpha, depth;
                blend_pixel(splats, row, settings, x, y, &color, &alpha, &depth, &entries);
                if (entries.empty()) continue;

                Eigen::Vector3d d_color = Eigen::Vector3d::Zero();
                if (has_color) {
                    for (int c = 0; c < 3; ++c) d_color[c] = upstream.d_color.at(y, x, c);
                }
                const double d_alpha = has_alpha ? upstream.d_alpha.at(y, x) : 0.0;
                const double d_depth = has_depth ? upstream.d_depth.at(y, x) : 0.0;
                if (d_color.isZero(0.0) && d_alpha == 0.0 && d_depth == 0.0) continue;

                const double t_final =
                    entries.back().transmittance * (1.0 - entries.back().weight);
                // Walk back to front, keeping the color/depth mass blended
                // after the current entry.
                Eigen::Vector3d suffix_color = settings.background * t_final;
                double suffix_depth = 0.0;
                for (size_t k = entries.size(); k-- > 0;) {
                    const BlendEntry& e = entries[k];
                    const Splat& s = splats[e.splat];
                    SplatGrad& g = grads[e.splat];

                    const double contrib = e.weight * e.transmittance;
                    const double one_minus = 1.0 - e.weight;
                    const double z = s.p_cam.z();

                    g.dcolor += d_color * contrib;
                    g.dz += d_depth * contrib;

                    double d_weight =
                        d_color.dot(s.color * e.transmittance - suffix_color / one_minus);
                    d_weight += d_alpha * (t_final / one_minus);
                    d_weight += d_depth * (z * e.transmittance - suffix_depth / one_minus);

                    suffix_color += s.color * contrib;
                    suffix_depth += z * contrib;

                    if (e.clamped) continue;  // flat region of min(0.99, .)

                    g.dalpha += d_weight * e.gauss;
                    const double d_gauss = d_weight * s.alpha;
                    const Eigen::Vector2d conic_d = s.conic * e.offset;
                    const Eigen::Vector2d d_offset = -d_gauss * e.gauss * conic_d;
                    g.du -= d_offset.x();  // offset = pixel - (u, v)
                    g.dv -= d_offset.y();
                    g.dconic += (-0.5 * d_gauss * e.gauss) * (e.offset * e.offset.transpose());
                }
            }
        }
    });

    // Merge in worker order so results are reproducible for a fixed count.
    std::vector<SplatGrad>& total = worker_grads[0];
    for (int w = 1; w < threads; ++w) {
        for (size_t i = 0; i < splats.size(); ++i) {
            total[i].du += worker_grads[w][i].du;
            total[i].dv += worker_grads[w][i].dv;
            total[i].dconic += worker_grads[w][i].dconic;
            total[i].dalpha += worker_grads[w][i].dalpha;
            total[i].dcolor += worker_grads[w][i].dcolor;
            total[i].dz += worker_grads[w][i].dz;
        }
    }

    ParamGradients out;
    out.resize_like(cloud);

    double basis[16];
    Eigen::Vector3d basis_grad[16];
    Eigen::Matrix3d quat_jac[4];
    const int use_basis = sh_basis_count(use_degree);

    for (size_t si = 0; si < splats.size(); ++si) {
        const Splat& s = splats[si];
        const SplatGrad& g = total[si];
        const int i = s.index;

        // opacity logit through the sigmoid
        out.opacity_logits[i] = g.dalpha * s.alpha * (1.0 - s.alpha);

        // color -> SH coefficients and view direction; clamped channels are
        // flat so they pass nothing back
        sh_basis(s.view_dir, use_degree, basis);
        sh_basis_gradient(s.view_dir, use_degree, basis_grad);
        Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
        for (int c = 0; c < 3; ++c) {
            if (s.raw_color[c] <= 0.0 || s.raw_color[c] >= 1.0) continue;
            for (int b = 0; b < use_basis; ++b) {
                out.sh[i](c, b) += g.dcolor[c] * basis[b];
                d_dir += g.dcolor[c] * cloud.sh[i](c, b) * basis_grad[b];
            }
        }
        Eigen::Vector3d d_mu =
            (Eigen::Matrix3d::Identity() - s.view_dir * s.view_dir.transpose()) * d_dir /
            s.view_dist;

        // conic -> projected covariance (derivative of the matrix inverse)
        const Eigen::Matrix2d d_cov2d = -s.conic * g.dconic * s.conic;

        // Sigma' = M Sigma M^T with M = J W
        const Eigen::Matrix3d cov = compose_covariance(cloud.scales[i], cloud.rotations[i]);
        const Eigen::Matrix<double, 2, 3> jac = perspective_jacobian(cam, s.p_cam);
        const Eigen::Matrix<double, 2, 3> m = jac * cam.rotation;
        const Eigen::Matrix<double, 2, 3> d_m = (d_cov2d + d_cov2d.transpose()) * m * cov;
        const Eigen::Matrix3d d_cov = m.transpose() * d_cov2d * m;
        const Eigen::Matrix<double, 2, 3> d_jac = d_m * cam.rotation.transpose();

        // camera-space mean: projection, Jacobian entries and blended depth
        const double x = s.p_cam.x(), y = s.p_cam.y(), z = s.p_cam.z();
        const double inv_z = 1.0 / z, inv_z2 = inv_z * inv_z, inv_z3 = inv_z2 * inv_z;
        Eigen::Vector3d d_pcam;
        d_pcam.x() = g.du * cam.fx * inv_z - d_jac(0, 2) * cam.fx * inv_z2;
        d_pcam.y() = g.dv * cam.fy * inv_z - d_jac(1, 2) * cam.fy * inv_z2;
        d_pcam.z() = -g.du * cam.fx * x * inv_z2 - g.dv * cam.fy * y * inv_z2 -
                     d_jac(0, 0) * cam.fx * inv_z2 - d_jac(1, 1) * cam.fy * inv_z2 +
                     d_jac(0, 2) * 2.0 * cam.fx * x * inv_z3 +
                     d_jac(1, 2) * 2.0 * cam.fy * y * inv_z3 + g.dz;
        d_mu += cam.rotation.transpose() * d_pcam;
        out.positions[i] = d_mu;

        // Sigma = R diag(sigma^2) R^T
        const Eigen::Matrix3d rot = quat_to_matrix(cloud.rotations[i]);
        const Eigen::Vector3d var = (2.0 * cloud.scales[i].log_sigma).array().exp();
        const Eigen::Matrix3d sym = d_cov + d_cov.transpose();
        const Eigen::Matrix3d d_rot = sym * rot * var.asDiagonal();
        const Eigen::Matrix3d rtpr = rot.transpose() * d_cov * rot;
        for (int k = 0; k < 3; ++k) {
            out.log_scales[i][k] = rtpr(k, k) * 2.0 * var[k];
        }
        quat_to_matrix_jacobian(cloud.rotations[i], quat_jac);
        for (int k = 0; k < 4; ++k) {
            out.rotations[i][k] = (d_rot.array() * quat_jac[k].array()).sum();
        }
    }
    return out;
}

void render_pixel_oracle(const GaussianCloud& cloud, const Camera& cam,
                         const RenderSettings& settings, int px, int py, Eigen::Vector3d* color,
                         double* alpha, double* depth) {
    const int use_degree = std::min(settings.sh_degree, cloud.sh_degree);
    const Eigen::Vector3d cam_center = cam.center();

    // Depth-sort every visible Gaussian, ties by index.
    std::vector<std::pair<double, size_t>> order;
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d p = cam.to_camera(cloud.positions[i]);
        if (p.z() > kDefaultZNear) order.emplace_back(p.z(), i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    double transmittance = 1.0;
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double depth_acc = 0.0;
    for (const auto& [z, i] : order) {
        const auto proj = project_point(cam, cloud.positions[i]);
        const Eigen::Matrix3d cov = compose_covariance(cloud.scales[i], cloud.rotations[i]);
        const Eigen::Matrix2d cov2d = project_covariance(cam, cloud.positions[i], cov);
        const Eigen::Vector2d d(px - proj->u, py - proj->v);
        const Eigen::Matrix2d inv = cov2d.inverse();
        const double weight =
            std::min(kAlphaClamp, cloud.opacity(i) * std::exp(-0.5 * d.dot(inv * d)));

        const Eigen::Vector3d dir = (cloud.positions[i] - cam_center).normalized();
        const Eigen::Vector3d c = eval_color(cloud.sh[i], dir, use_degree);
        acc += c * weight * transmittance;
        depth_acc += z * weight * transmittance;
        transmittance *= 1.0 - weight;
    }
    *color = acc + settings.background * transmittance;
    *alpha = 1.0 - transmittance;
    *depth = depth_acc;
}

}  // namespace sgs
