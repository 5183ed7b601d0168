#include "sgs/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "sgs/errors.hpp"
#include "sgs/rng.hpp"

namespace sgs {

void TrainConfig::validate() const {
    if (iterations < 0) {
        throw std::invalid_argument("iterations must be non-negative");
    }
    for (double lr : {lr_position, lr_rotation, lr_scale, lr_opacity, lr_color}) {
        if (!(lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    }
    if (prune_interval < 0 || prune_opacity_floor < 0.0) {
        throw std::invalid_argument("bad prune schedule");
    }
}

GaussianCloud prune(const GaussianCloud& cloud, double opacity_floor) {
    GaussianCloud out;
    out.sh_degree = cloud.sh_degree;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.opacity(i) < opacity_floor) continue;
        out.positions.push_back(cloud.positions[i]);
        out.rotations.push_back(cloud.rotations[i]);
        out.scales.push_back(cloud.scales[i]);
        out.opacity_logits.push_back(cloud.opacity_logits[i]);
        out.sh.push_back(cloud.sh[i]);
    }
    return out;
}

Trainer::Trainer(TrainConfig config, size_t cloud_size) : config_(std::move(config)) {
    config_.validate();
    sh_cols_ = sh_basis_count(config_.render.sh_degree);
    moments_.positions_m.assign(cloud_size, Eigen::Vector3d::Zero());
    moments_.positions_v.assign(cloud_size, Eigen::Vector3d::Zero());
    moments_.rotations_m.assign(cloud_size, Eigen::Vector4d::Zero());
    moments_.rotations_v.assign(cloud_size, Eigen::Vector4d::Zero());
    moments_.scales_m.assign(cloud_size, Eigen::Vector3d::Zero());
    moments_.scales_v.assign(cloud_size, Eigen::Vector3d::Zero());
    moments_.opacity_m.assign(cloud_size, 0.0);
    moments_.opacity_v.assign(cloud_size, 0.0);
    moments_.sh_m.assign(cloud_size, Eigen::Matrix3Xd::Zero(3, sh_cols_));
    moments_.sh_v.assign(cloud_size, Eigen::Matrix3Xd::Zero(3, sh_cols_));
}

namespace {

// One Adam update with bias correction, elementwise over an Eigen block.
template <typename T>
void adam_axpy(T& param, T& m, T& v, const T& grad, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2) {
    m = beta1 * m + (1.0 - beta1) * grad;
    v = (beta2 * v.array() + (1.0 - beta2) * grad.array().square()).matrix();
    const auto m_hat = m.array() / bias1;
    const auto v_hat = v.array() / bias2;
    param = (param.array() - lr * m_hat / (v_hat.sqrt() + eps)).matrix();
}

void adam_axpy(double& param, double& m, double& v, double grad, double lr, double beta1,
               double beta2, double eps, double bias1, double bias2) {
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad * grad;
    param -= lr * (m / bias1) / (std::sqrt(v / bias2) + eps);
}

}  // namespace

void Trainer::apply_update(GaussianCloud& cloud, const ParamGradients& grads) {
    const double t = iteration_ + 1;
    const double bias1 = 1.0 - std::pow(config_.beta1, t);
    const double bias2 = 1.0 - std::pow(config_.beta2, t);

    // position rate decays exponentially toward lr * lr_position_final
    const double progress = config_.iterations > 1
                                ? static_cast<double>(iteration_) / (config_.iterations - 1)
                                : 1.0;
    const double lr_pos = config_.lr_position * std::pow(config_.lr_position_final, progress);

    for (size_t i = 0; i < cloud.size(); ++i) {
        adam_axpy(cloud.positions[i], moments_.positions_m[i], moments_.positions_v[i],
                  grads.positions[i], lr_pos, config_.beta1, config_.beta2, config_.adam_eps,
                  bias1, bias2);
        Eigen::Vector4d q = cloud.rotations[i].wxyz;
        adam_axpy(q, moments_.rotations_m[i], moments_.rotations_v[i], grads.rotations[i],
                  config_.lr_rotation, config_.beta1, config_.beta2, config_.adam_eps, bias1,
                  bias2);
        cloud.rotations[i].wxyz = q.normalized();
        adam_axpy(cloud.scales[i].log_sigma, moments_.scales_m[i], moments_.scales_v[i],
                  grads.log_scales[i], config_.lr_scale, config_.beta1, config_.beta2,
                  config_.adam_eps, bias1, bias2);
        adam_axpy(cloud.opacity_logits[i], moments_.opacity_m[i], moments_.opacity_v[i],
                  grads.opacity_logits[i], config_.lr_opacity, config_.beta1, config_.beta2,
                  config_.adam_eps, bias1, bias2);

        // only the SH columns in use receive gradients
        for (int c = 0; c < 3; ++c) {
            for (int b = 0; b < std::min<int>(sh_cols_, cloud.basis_count()); ++b) {
                adam_axpy(cloud.sh[i](c, b), moments_.sh_m[i](c, b), moments_.sh_v[i](c, b),
                          grads.sh[i](c, b), config_.lr_color, config_.beta1, config_.beta2,
                          config_.adam_eps, bias1, bias2);
            }
        }
    }
}

StepRecord Trainer::step(GaussianCloud& cloud, const TrainView& view) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cloud.size() != moments_.opacity_m.size()) {
        throw std::invalid_argument("trainer state does not match the cloud size");
    }

    const RenderOutput out = render(cloud, view.cam, config_.render);

    LossParts parts;
    parts.l1 = l1_loss(out.color, view.image);
    parts.dssim = dssim_loss(out.color, view.image);
    parts.mask = mask_loss(out.alpha, view.mask);
    if (config_.weights.depth > 0.0 && view.depth.has_value()) {
        // depth is supervised on the reference foreground only
        parts.depth = depth_loss(out.depth, *view.depth, view.mask, config_.align_depth);
    }
    TotalLoss total = total_loss(parts, config_.weights);
    if (!std::isfinite(total.value)) {
        throw NumericalError("non-finite loss at iteration " + std::to_string(iteration_) +
                             " (l1 " + std::to_string(total.l1) + ", dssim " +
                             std::to_string(total.dssim) + ", mask " + std::to_string(total.mask) +
                             ", depth " + std::to_string(total.depth) + ")");
    }

    RenderGrad upstream;
    upstream.d_color = std::move(total.d_color);
    upstream.d_alpha = std::move(total.d_alpha);
    upstream.d_depth = total.d_depth;
    const ParamGradients grads = render_backward(cloud, view.cam, config_.render, upstream);

    apply_update(cloud, grads);
    ++iteration_;

    StepRecord rec;
    rec.iteration = iteration_;
    rec.total = total.value;
    rec.l1 = total.l1;
    rec.dssim = total.dssim;
    rec.mask = total.mask;
    rec.depth = total.depth;
    rec.gaussians = cloud.size();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

void Trainer::prune_cloud(GaussianCloud& cloud) {
    GaussianCloud kept;
    kept.sh_degree = cloud.sh_degree;
    Moments m;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.opacity(i) < config_.prune_opacity_floor) continue;
        kept.positions.push_back(cloud.positions[i]);
        kept.rotations.push_back(cloud.rotations[i]);
        kept.scales.push_back(cloud.scales[i]);
        kept.opacity_logits.push_back(cloud.opacity_logits[i]);
        kept.sh.push_back(cloud.sh[i]);
        m.positions_m.push_back(moments_.positions_m[i]);
        m.positions_v.push_back(moments_.positions_v[i]);
        m.rotations_m.push_back(moments_.rotations_m[i]);
        m.rotations_v.push_back(moments_.rotations_v[i]);
        m.scales_m.push_back(moments_.scales_m[i]);
        m.scales_v.push_back(moments_.scales_v[i]);
        m.opacity_m.push_back(moments_.opacity_m[i]);
        m.opacity_v.push_back(moments_.opacity_v[i]);
        m.sh_m.push_back(moments_.sh_m[i]);
        m.sh_v.push_back(moments_.sh_v[i]);
    }
    cloud = std::move(kept);
    moments_ = std::move(m);
}

void TrainLog::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open for writing: " + path);
    }
    out << "# iteration total l1 dssim mask depth gaussians wall_seconds\n";
    for (const StepRecord& r : entries) {
        out << r.iteration << ' ' << r.total << ' ' << r.l1 << ' ' << r.dssim << ' ' << r.mask
            << ' ' << r.depth << ' ' << r.gaussians << ' ' << r.wall_seconds << '\n';
    }
}

TrainLog train(const std::vector<TrainView>& views, GaussianCloud& cloud,
               const TrainConfig& config) {
    config.validate();
    if (views.empty()) {
        throw std::invalid_argument("train: need at least one view");
    }

    Trainer trainer(config, cloud.size());
    TrainLog log;

    Rng shuffle_rng(config.seed);
    std::vector<size_t> order(views.size());
    size_t cursor = order.size();  // forces a shuffle on the first step

    for (int it = 0; it < config.iterations; ++it) {
        if (cursor >= order.size()) {
            for (size_t k = 0; k < order.size(); ++k) order[k] = k;
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        const TrainView& view = views[order[cursor++]];
        const StepRecord rec = trainer.step(cloud, view);

        const bool last = it + 1 == config.iterations;
        if (config.log_interval > 0 && (rec.iteration % config.log_interval == 0 || last)) {
            log.entries.push_back(rec);
        }
        if (config.prune_interval > 0 && rec.iteration % config.prune_interval == 0 && !last) {
            trainer.prune_cloud(cloud);
        }
        if (config.checkpoint_interval > 0 && !config.checkpoint_dir.empty() &&
            (rec.iteration % config.checkpoint_interval == 0 || last)) {
            namespace fs = std::filesystem;
            fs::create_directories(config.checkpoint_dir);
            save_ply(cloud, (fs::path(config.checkpoint_dir) /
                             ("checkpoint_" + std::to_string(rec.iteration) + ".ply"))
                                .string());
        }
    }
    return log;
}

}  // namespace sgs
