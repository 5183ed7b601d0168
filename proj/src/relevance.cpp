#include "sgs/relevance.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "sgs/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "latent serialization assumes a little-endian host");

namespace sgs {

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 1 || t > steps()) {
        throw std::invalid_argument("noise step outside the schedule");
    }
    return alpha_bar[t - 1];
}

void NoiseSchedule::validate() const {
    if (alpha_bar.empty()) {
        throw std::invalid_argument("noise schedule is empty");
    }
    double prev = 1.0 + 1e-12;
    for (double a : alpha_bar) {
        if (!(a > 0.0) || a > 1.0) {
            throw std::invalid_argument("alpha_bar values must lie in (0, 1]");
        }
        if (!(a < prev)) {
            throw std::invalid_argument("alpha_bar must be strictly decreasing");
        }
        prev = a;
    }
}

NoiseSchedule NoiseSchedule::linear_beta(int steps, double beta_start, double beta_end) {
    if (steps < 1) {
        throw std::invalid_argument("schedule needs at least one step");
    }
    NoiseSchedule s;
    s.alpha_bar.reserve(steps);
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta = steps == 1 ? beta_start
                                       : beta_start + (beta_end - beta_start) * t / (steps - 1);
        prod *= 1.0 - beta;
        s.alpha_bar.push_back(prod);
    }
    s.validate();
    return s;
}

LatentGrid ToyDenoiser::predict_noise(const LatentGrid& z_t, int, const ImageCondition&,
                                      const TextCondition* text) const {
    LatentGrid out(z_t.channels(), z_t.height(), z_t.width(), baseline_);
    if (text != nullptr) {
        for (int c = 0; c < out.channels(); ++c) {
            for (int y = y0_; y < std::min(y0_ + height_, out.height()); ++y) {
                for (int x = x0_; x < std::min(x0_ + width_, out.width()); ++x) {
                    if (y >= 0 && x >= 0) out.at(c, y, x) += amplitude_;
                }
            }
        }
    }
    return out;
}

LatentGrid forward_noise(const LatentGrid& z0, int t, const LatentGrid& noise,
                         const NoiseSchedule& schedule) {
    schedule.validate();
    if (!z0.same_shape(noise)) {
        throw std::invalid_argument("forward_noise: latent and noise shapes differ");
    }
    const double a = schedule.alpha_bar_at(t);
    const double signal = std::sqrt(a);
    const double sigma = std::sqrt(1.0 - a);
    LatentGrid out(z0.channels(), z0.height(), z0.width());
    for (size_t i = 0; i < out.count(); ++i) {
        out.data()[i] = signal * z0.data()[i] + sigma * noise.data()[i];
    }
    return out;
}

Image relevance_map(const Denoiser& denoiser, const LatentGrid& z_t, int t,
                    const ImageCondition& image_cond, const TextCondition& text_cond) {
    const LatentGrid with_text = denoiser.predict_noise(z_t, t, image_cond, &text_cond);
    const LatentGrid without = denoiser.predict_noise(z_t, t, image_cond, nullptr);
    if (!with_text.same_shape(without) || !with_text.same_shape(z_t)) {
        throw std::invalid_argument("relevance_map: denoiser changed the latent shape");
    }

    Image map(z_t.height(), z_t.width(), 1);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < z_t.height(); ++y) {
        for (int x = 0; x < z_t.width(); ++x) {
            double acc = 0.0;
            for (int c = 0; c < z_t.channels(); ++c) {
                acc += std::abs(with_text.at(c, y, x) - without.at(c, y, x));
            }
            const double v = acc / z_t.channels();
            map.at(y, x) = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double range = hi - lo;
    for (size_t i = 0; i < map.count(); ++i) {
        map.data()[i] = range > 0.0 ? (map.data()[i] - lo) / range : 0.0;
    }
    return map;
}

Image threshold_mask(const Image& relevance, double tau, bool blur) {
    if (relevance.channels() != 1) {
        throw std::invalid_argument("threshold_mask: relevance map must be single channel");
    }
    Image source = relevance;
    if (blur) {
        // 3x3 binomial kernel, borders renormalized
        const double k[3] = {0.25, 0.5, 0.25};
        Image blurred(relevance.height(), relevance.width(), 1);
        for (int y = 0; y < relevance.height(); ++y) {
            for (int x = 0; x < relevance.width(); ++x) {
                double acc = 0.0, wsum = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= relevance.height() || xx < 0 ||
                            xx >= relevance.width()) {
                            continue;
                        }
                        const double w = k[dy + 1] * k[dx + 1];
                        acc += w * relevance.at(yy, xx);
                        wsum += w;
                    }
                }
                blurred.at(y, x) = acc / wsum;
            }
        }
        source = std::move(blurred);
    }

    Image mask(source.height(), source.width(), 1);
    for (size_t i = 0; i < mask.count(); ++i) {
        mask.data()[i] = source.data()[i] > tau ? 1.0 : 0.0;
    }
    return mask;
}

Image upsample_mask(const Image& mask, int target_height, int target_width) {
    if (mask.channels() != 1 || mask.height() < 1 || mask.width() < 1) {
        throw std::invalid_argument("upsample_mask: bad input mask");
    }
    Image out(target_height, target_width, 1);
    for (int y = 0; y < target_height; ++y) {
        const int sy = std::min(static_cast<int>(static_cast<int64_t>(y) * mask.height() /
                                                 target_height),
                                mask.height() - 1);
        for (int x = 0; x < target_width; ++x) {
            const int sx = std::min(static_cast<int>(static_cast<int64_t>(x) * mask.width() /
                                                     target_width),
                                    mask.width() - 1);
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

LatentGrid blend_latents(const LatentGrid& edited, const LatentGrid& original,
                         const Image& mask) {
    if (!edited.same_shape(original)) {
        throw std::invalid_argument("blend_latents: latent shapes differ");
    }
    if (mask.height() != edited.height() || mask.width() != edited.width() ||
        mask.channels() != 1) {
        throw std::invalid_argument("blend_latents: mask shape mismatch");
    }
    LatentGrid out = original;
    for (int c = 0; c < edited.channels(); ++c) {
        for (int y = 0; y < edited.height(); ++y) {
            for (int x = 0; x < edited.width(); ++x) {
                if (mask.at(y, x) > 0.5) out.at(c, y, x) = edited.at(c, y, x);
            }
        }
    }
    return out;
}

void save_latent(const LatentGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open for writing: " + path);
    }
    out.write("LTNT", 4);
    const uint32_t dims[3] = {static_cast<uint32_t>(grid.channels()),
                              static_cast<uint32_t>(grid.height()),
                              static_cast<uint32_t>(grid.width())};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (size_t i = 0; i < grid.count(); ++i) {
        const float f = static_cast<float>(grid.data()[i]);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) {
        throw DataError("write failed: " + path);
    }
}

LatentGrid load_latent(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "LTNT", 4) != 0) {
        throw DataError(path + ": not a latent file");
    }
    uint32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (in.gcount() != sizeof(dims)) {
        throw DataError(path + ": truncated latent header");
    }
    constexpr uint32_t kMaxDim = 1 << 16;
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || dims[0] > kMaxDim ||
        dims[1] > kMaxDim || dims[2] > kMaxDim) {
        throw DataError(path + ": unreasonable latent dimensions");
    }
    LatentGrid grid(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                    static_cast<int>(dims[2]));
    std::vector<float> raw(grid.count());
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != raw.size() * sizeof(float)) {
        throw DataError(path + ": truncated latent body");
    }
    for (size_t i = 0; i < raw.size(); ++i) {
        if (!std::isfinite(raw[i])) {
            throw DataError(path + ": non-finite latent value");
        }
        grid.data()[i] = raw[i];
    }
    return grid;
}

}  // namespace sgs
