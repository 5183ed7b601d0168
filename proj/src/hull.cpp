#include "sgs/hull.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "sgs/parallel.hpp"
#include "sgs/rng.hpp"

namespace sgs {

void Silhouette::validate() const {
    if (mask.channels() != 1) {
        throw std::invalid_argument("silhouette mask must be single channel");
    }
    if (mask.height() != cam.height || mask.width() != cam.width) {
        throw std::invalid_argument("silhouette size does not match its camera");
    }
    for (size_t i = 0; i < mask.count(); ++i) {
        const double v = mask.data()[i];
        if (v != 0.0 && v != 1.0) {
            throw std::invalid_argument("silhouette mask values must be 0 or 1");
        }
    }
}

namespace {

// Strict intersection test: outside the frustum counts as outside the hull.
bool inside_all_views(const std::vector<Silhouette>& views, const Eigen::Vector3d& p) {
    for (const Silhouette& s : views) {
        const auto proj = project_point(s.cam, p);
        if (!proj) return false;
        const int px = static_cast<int>(std::lround(proj->u));
        const int py = static_cast<int>(std::lround(proj->v));
        if (px < 0 || px >= s.cam.width || py < 0 || py >= s.cam.height) return false;
        if (s.mask.at(py, px) < 0.5) return false;
    }
    return true;
}

Eigen::Vector3d bilinear_sample(const Image& img, double u, double v) {
    const int w = img.width(), h = img.height();
    const double x = std::clamp(u, 0.0, static_cast<double>(w - 1));
    const double y = std::clamp(v, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), w - 2 >= 0 ? w - 2 : 0);
    const int y0 = std::min(static_cast<int>(std::floor(y)), h - 2 >= 0 ? h - 2 : 0);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;

    Eigen::Vector3d out = Eigen::Vector3d::Zero();
    const int ch = std::min(img.channels(), 3);
    for (int c = 0; c < ch; ++c) {
        const double v00 = img.at(y0, x0, c), v10 = img.at(y0, x1, c);
        const double v01 = img.at(y1, x0, c), v11 = img.at(y1, x1, c);
        out[c] = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
    }
    if (ch == 1) out[1] = out[2] = out[0];
    return out;
}

}  // namespace

CarveResult carve(const std::vector<Silhouette>& views, const Aabb& bounds, size_t n_samples,
                  uint64_t seed, int threads) {
    if (views.empty()) {
        throw std::invalid_argument("carve: need at least one view");
    }
    if (n_samples == 0) {
        throw std::invalid_argument("carve: need at least one sample");
    }
    for (const Silhouette& s : views) s.validate();

    // Draw all candidates up front so the result does not depend on the
    // thread count, then test them in parallel.
    std::vector<Eigen::Vector3d> candidates(n_samples);
    Rng rng(seed);
    for (size_t i = 0; i < n_samples; ++i) {
        candidates[i] = {rng.uniform(bounds.min.x(), bounds.max.x()),
                         rng.uniform(bounds.min.y(), bounds.max.y()),
                         rng.uniform(bounds.min.z(), bounds.max.z())};
    }

    std::vector<uint8_t> keep(n_samples, 0);
    parallel_blocks(static_cast<int>(n_samples), threads, [&](int, int begin, int end) {
        for (int i = begin; i < end; ++i) {
            keep[i] = inside_all_views(views, candidates[i]) ? 1 : 0;
        }
    });

    CarveResult res;
    for (size_t i = 0; i < n_samples; ++i) {
        if (keep[i]) res.points.push_back(candidates[i]);
    }
    res.empty_warning = res.points.empty();
    return res;
}

ColorizeResult assign_colors(const std::vector<Eigen::Vector3d>& points,
                             const std::vector<Camera>& cams, const std::vector<Image>& images) {
    if (cams.size() != images.size()) {
        throw std::invalid_argument("assign_colors: camera/image count mismatch");
    }
    for (size_t k = 0; k < cams.size(); ++k) {
        if (images[k].height() != cams[k].height || images[k].width() != cams[k].width) {
            throw std::invalid_argument("assign_colors: image size does not match camera");
        }
    }

    ColorizeResult res;
    res.samples.reserve(points.size());
    for (const Eigen::Vector3d& p : points) {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        int visible = 0;
        for (size_t k = 0; k < cams.size(); ++k) {
            const auto proj = project_point(cams[k], p);
            if (!proj) continue;
            const int px = static_cast<int>(std::lround(proj->u));
            const int py = static_cast<int>(std::lround(proj->v));
            if (px < 0 || px >= cams[k].width || py < 0 || py >= cams[k].height) continue;
            sum += bilinear_sample(images[k], proj->u, proj->v);
            ++visible;
        }
        if (visible == 0) {
            ++res.dropped;
            continue;
        }
        res.samples.push_back({p, sum / visible});
    }
    return res;
}

namespace {

// Uniform-grid k-nearest-neighbor mean distance; brute force within an
// expanding shell of cells around each query.
std::vector<double> knn_mean_distance(const std::vector<Eigen::Vector3d>& pts, int knn) {
    const size_t n = pts.size();
    Eigen::Vector3d lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Eigen::Vector3d span = (hi - lo).cwiseMax(1e-12);
    // target a handful of points per cell
    const double cell = std::max(span.maxCoeff() / std::max(1.0, std::cbrt(double(n) / 2.0)),
                                 1e-12);
    const Eigen::Vector3i dims = ((span / cell).array().ceil() + 1.0).cast<int>();

    auto cell_of = [&](const Eigen::Vector3d& p) -> Eigen::Vector3i {
        Eigen::Vector3i c;
        for (int k = 0; k < 3; ++k) {
            c[k] = std::clamp(static_cast<int>(std::floor((p[k] - lo[k]) / cell)), 0,
                              dims[k] - 1);
        }
        return c;
    };
    auto cell_key = [&](const Eigen::Vector3i& c) {
        return (static_cast<int64_t>(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
    };

    std::unordered_map<int64_t, std::vector<int>> grid;
    grid.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        grid[cell_key(cell_of(pts[i]))].push_back(static_cast<int>(i));
    }

    std::vector<double> result(n, 0.0);
    std::vector<double> best;
    for (size_t i = 0; i < n; ++i) {
        best.assign(knn, std::numeric_limits<double>::infinity());
        const Eigen::Vector3i c0 = cell_of(pts[i]);
        for (int ring = 0;; ++ring) {
            bool any_cell = false;
            for (int dz = -ring; dz <= ring; ++dz) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    for (int dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const Eigen::Vector3i c = c0 + Eigen::Vector3i(dx, dy, dz);
                        if ((c.array() < 0).any() || (c.array() >= dims.array()).any()) continue;
                        any_cell = true;
                        const auto it = grid.find(cell_key(c));
                        if (it == grid.end()) continue;
                        for (int j : it->second) {
                            if (static_cast<size_t>(j) == i) continue;
                            const double d = (pts[j] - pts[i]).norm();
                            if (d < best[knn - 1]) {
                                best[knn - 1] = d;
                                for (int b = knn - 1; b > 0 && best[b] < best[b - 1]; --b) {
                                    std::swap(best[b], best[b - 1]);
                                }
                            }
                        }
                    }
                }
            }
            // The kth distance is final once the unexplored shell cannot hold
            // anything closer.
            const bool settled = std::isfinite(best[knn - 1]) && best[knn - 1] <= ring * cell;
            if (settled) break;
            if (!any_cell && ring > dims.maxCoeff()) break;
        }
        double mean = 0.0;
        for (int b = 0; b < knn; ++b) mean += best[b];
        result[i] = mean / knn;
    }
    return result;
}

}  // namespace

GaussianCloud init_gaussians(const std::vector<HullSample>& samples, double init_opacity,
                             int knn) {
    if (knn < 1) {
        throw std::invalid_argument("init_gaussians: knn must be positive");
    }
    if (samples.size() < static_cast<size_t>(knn) + 1) {
        throw std::invalid_argument("init_gaussians: need at least knn + 1 samples");
    }
    if (init_opacity <= 0.0 || init_opacity >= 1.0) {
        throw std::invalid_argument("init_gaussians: init_opacity must lie in (0, 1)");
    }

    std::vector<Eigen::Vector3d> pts(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) pts[i] = samples[i].position;
    const std::vector<double> mean_dist = knn_mean_distance(pts, knn);

    constexpr double kSH0 = 0.28209479177387814;
    const double logit = std::log(init_opacity / (1.0 - init_opacity));

    GaussianCloud cloud;
    cloud.resize(samples.size(), 0);
    for (size_t i = 0; i < samples.size(); ++i) {
        cloud.positions[i] = samples[i].position;
        cloud.scales[i].log_sigma.setConstant(std::log(std::max(mean_dist[i], 1e-9)));
        cloud.opacity_logits[i] = logit;
        cloud.sh[i].col(0) = (samples[i].color - Eigen::Vector3d::Constant(0.5)) / kSH0;
    }
    return cloud;
}

Aabb default_carve_bounds(const std::vector<Camera>& cams) {
    double radius = 1.0;
    for (const Camera& cam : cams) {
        radius = std::max(radius, cam.center().norm());
    }
    Aabb box;
    box.min = Eigen::Vector3d::Constant(-radius);
    box.max = Eigen::Vector3d::Constant(radius);
    return box;
}

}  // namespace sgs
