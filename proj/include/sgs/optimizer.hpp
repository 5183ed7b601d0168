#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgs/gaussians.hpp"
#include "sgs/image.hpp"
#include "sgs/losses.hpp"
#include "sgs/rasterizer.hpp"

namespace sgs {

// One supervision view: reference image, silhouette, optional depth prior.
struct TrainView {
    Camera cam;
    Image image;  // H x W x 3
    Image mask;   // H x W, {0, 1}
    std::optional<Image> depth;  // monocular prior, arbitrary units
};

struct TrainConfig {
    int iterations = 10000;

    double lr_position = 1.6e-4;
    double lr_position_final = 0.01;  // exponential decay to lr * this over the run
    double lr_rotation = 1e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;

    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-15;

    int prune_interval = 500;
    double prune_opacity_floor = 0.005;

    LossWeights weights;
    bool align_depth = true;
    RenderSettings render;
    uint64_t seed = 0;

    int log_interval = 50;
    int checkpoint_interval = 0;  // 0 disables checkpoints
    std::string checkpoint_dir;

    void validate() const;
};

struct StepRecord {
    int iteration = 0;
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double mask = 0.0;
    double depth = 0.0;
    size_t gaussians = 0;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> entries;

    void write(const std::string& path) const;
};

// Removes Gaussians whose opacity falls below the floor, preserving order.
GaussianCloud prune(const GaussianCloud& cloud, double opacity_floor);

// Per-field adaptive-moment optimizer over the cloud parameters. Quaternions
// are renormalized after every update.
class Trainer {
public:
    Trainer(TrainConfig config, size_t cloud_size);

    // One render / loss / backward / update cycle on a single view.
    StepRecord step(GaussianCloud& cloud, const TrainView& view);

    // prune() plus the matching rows of the moment buffers.
    void prune_cloud(GaussianCloud& cloud);

    int iteration() const { return iteration_; }
    const TrainConfig& config() const { return config_; }

private:
    struct Moments {
        std::vector<Eigen::Vector3d> positions_m, positions_v;
        std::vector<Eigen::Vector4d> rotations_m, rotations_v;
        std::vector<Eigen::Vector3d> scales_m, scales_v;
        std::vector<double> opacity_m, opacity_v;
        std::vector<Eigen::Matrix3Xd> sh_m, sh_v;
    };

    void apply_update(GaussianCloud& cloud, const ParamGradients& grads);

    TrainConfig config_;
    Moments moments_;
    int iteration_ = 0;
    int sh_cols_ = 0;
};

// Shuffled-epoch training over the views with scheduled pruning, periodic log
// records and optional PLY checkpoints.
TrainLog train(const std::vector<TrainView>& views, GaussianCloud& cloud,
               const TrainConfig& config);

}  // namespace sgs
