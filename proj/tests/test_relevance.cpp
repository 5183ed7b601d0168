#include "sgs/relevance.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sgs/errors.hpp"
#include "sgs/rng.hpp"

using namespace sgs;
namespace fs = std::filesystem;

namespace {

LatentGrid random_grid(Rng& rng, int c, int h, int w) {
    LatentGrid g(c, h, w);
    for (size_t i = 0; i < g.count(); ++i) g.data()[i] = rng.normal();
    return g;
}

// Predicts a constant independent of everything; models a backend that
// ignores the instruction.
class IndifferentDenoiser : public Denoiser {
public:
    LatentGrid predict_noise(const LatentGrid& z_t, int, const ImageCondition&,
                             const TextCondition*) const override {
        return LatentGrid(z_t.channels(), z_t.height(), z_t.width(), 0.37);
    }
};

}  // namespace

TEST_CASE("noise schedule construction and validation") {
    const NoiseSchedule s = NoiseSchedule::linear_beta(1000);
    CHECK(s.steps() == 1000);
    CHECK(s.alpha_bar.front() > 0.99);
    CHECK(s.alpha_bar.back() > 0.0);
    CHECK(s.alpha_bar.back() < 0.01);
    CHECK(s.default_edit_step() == 600);

    NoiseSchedule bad;
    bad.alpha_bar = {0.9, 0.9};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.alpha_bar = {1.2, 0.5};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.alpha_bar = {};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("forward_noise endpoint behavior") {
    Rng rng(3);
    const LatentGrid z0 = random_grid(rng, 2, 6, 5);
    const LatentGrid eps = random_grid(rng, 2, 6, 5);

    SUBCASE("alpha_bar one returns the signal") {
        NoiseSchedule s;
        s.alpha_bar = {1.0};
        const LatentGrid out = forward_noise(z0, 1, eps, s);
        for (size_t i = 0; i < out.count(); ++i) {
            CHECK(out.data()[i] == z0.data()[i]);
        }
    }
    SUBCASE("alpha_bar near zero returns nearly the noise") {
        NoiseSchedule s;
        s.alpha_bar = {1e-16};
        const LatentGrid out = forward_noise(z0, 1, eps, s);
        for (size_t i = 0; i < out.count(); ++i) {
            CHECK(out.data()[i] == doctest::Approx(eps.data()[i]).epsilon(1e-6));
        }
    }
    SUBCASE("scalar arithmetic at alpha_bar = 0.25") {
        NoiseSchedule s;
        s.alpha_bar = {0.25};
        const LatentGrid two(3, 4, 4, 2.0), four(3, 4, 4, 4.0);
        const LatentGrid out = forward_noise(two, 1, four, s);
        const double expect = 0.5 * 2.0 + std::sqrt(0.75) * 4.0;
        for (size_t i = 0; i < out.count(); ++i) {
            CHECK(out.data()[i] == doctest::Approx(expect).epsilon(1e-15));
        }
    }
}

TEST_CASE("forward_noise is linear in signal and noise") {
    Rng rng(5);
    NoiseSchedule s;
    s.alpha_bar = {0.6};
    const LatentGrid a = random_grid(rng, 2, 5, 5), b = random_grid(rng, 2, 5, 5);
    const LatentGrid na = random_grid(rng, 2, 5, 5), nb = random_grid(rng, 2, 5, 5);

    LatentGrid sum_z(2, 5, 5), sum_n(2, 5, 5);
    for (size_t i = 0; i < sum_z.count(); ++i) {
        sum_z.data()[i] = a.data()[i] + b.data()[i];
        sum_n.data()[i] = na.data()[i] + nb.data()[i];
    }
    const LatentGrid lhs = forward_noise(sum_z, 1, sum_n, s);
    const LatentGrid ra = forward_noise(a, 1, na, s);
    const LatentGrid rb = forward_noise(b, 1, nb, s);
    for (size_t i = 0; i < lhs.count(); ++i) {
        CHECK(lhs.data()[i] == doctest::Approx(ra.data()[i] + rb.data()[i]).epsilon(1e-9));
    }
}

TEST_CASE("forward_noise validates shapes and steps") {
    NoiseSchedule s;
    s.alpha_bar = {0.5};
    const LatentGrid z(1, 4, 4), wrong(1, 4, 5);
    CHECK_THROWS_AS(forward_noise(z, 1, wrong, s), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(z, 2, z, s), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(z, 0, z, s), std::invalid_argument);
}

TEST_CASE("relevance map of a text-indifferent denoiser is all zero") {
    Rng rng(7);
    const LatentGrid z = random_grid(rng, 4, 8, 8);
    const IndifferentDenoiser denoiser;
    const Image map = relevance_map(denoiser, z, 1, ImageCondition{}, TextCondition{"recolor"});
    for (size_t i = 0; i < map.count(); ++i) {
        CHECK(map.data()[i] == 0.0);
    }
}

TEST_CASE("toy denoiser block produces an exact relevance block") {
    Rng rng(9);
    const LatentGrid z = random_grid(rng, 4, 16, 16);
    const ToyDenoiser denoiser(5, 3, 8, 8, 2.0, 0.1);

    const Image map = relevance_map(denoiser, z, 1, ImageCondition{}, TextCondition{"edit"});
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const bool inside = x >= 5 && x < 13 && y >= 3 && y < 11;
            CHECK(map.at(y, x) == (inside ? 1.0 : 0.0));
        }
    }

    const Image mask = threshold_mask(map, 0.35);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const bool inside = x >= 5 && x < 13 && y >= 3 && y < 11;
            CHECK(mask.at(y, x) == (inside ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("relevance map values stay in [0, 1] for arbitrary denoisers") {
    // a denoiser with unstructured large output differences
    class WildDenoiser : public Denoiser {
    public:
        LatentGrid predict_noise(const LatentGrid& z_t, int, const ImageCondition&,
                                 const TextCondition* text) const override {
            LatentGrid out = z_t;
            Rng rng(text ? 1 : 2);
            for (size_t i = 0; i < out.count(); ++i) out.data()[i] = 50.0 * rng.normal();
            return out;
        }
    };
    Rng rng(11);
    const LatentGrid z = random_grid(rng, 3, 10, 10);
    const Image map = relevance_map(WildDenoiser{}, z, 1, ImageCondition{}, TextCondition{"x"});
    for (size_t i = 0; i < map.count(); ++i) {
        CHECK(map.data()[i] >= 0.0);
        CHECK(map.data()[i] <= 1.0);
    }
}

TEST_CASE("relevance map cancels condition-independent offsets") {
    // adding the same constant to both branches must not change the map
    class OffsetToy : public Denoiser {
    public:
        explicit OffsetToy(double offset) : offset_(offset) {}
        LatentGrid predict_noise(const LatentGrid& z_t, int t, const ImageCondition& img,
                                 const TextCondition* text) const override {
            LatentGrid out = inner_.predict_noise(z_t, t, img, text);
            for (size_t i = 0; i < out.count(); ++i) out.data()[i] += offset_;
            return out;
        }

    private:
        ToyDenoiser inner_{2, 2, 4, 4, 1.5, 0.0};
        double offset_;
    };

    Rng rng(13);
    const LatentGrid z = random_grid(rng, 2, 12, 12);
    const Image base = relevance_map(OffsetToy{0.0}, z, 1, ImageCondition{}, TextCondition{"y"});
    const Image moved = relevance_map(OffsetToy{7.5}, z, 1, ImageCondition{}, TextCondition{"y"});
    for (size_t i = 0; i < base.count(); ++i) {
        CHECK(base.data()[i] == doctest::Approx(moved.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("threshold_mask corner cases and monotonicity") {
    Rng rng(17);
    Image map(9, 9, 1);
    for (size_t i = 0; i < map.count(); ++i) map.data()[i] = rng.uniform();

    const Image all_zero = threshold_mask(map, 1.0);
    for (size_t i = 0; i < all_zero.count(); ++i) CHECK(all_zero.data()[i] == 0.0);

    const Image support = threshold_mask(map, 0.0);
    for (size_t i = 0; i < support.count(); ++i) {
        CHECK(support.data()[i] == (map.data()[i] > 0.0 ? 1.0 : 0.0));
    }

    // raising the threshold can only shrink the mask
    const Image lo = threshold_mask(map, 0.3);
    const Image hi = threshold_mask(map, 0.6);
    for (size_t i = 0; i < lo.count(); ++i) {
        if (hi.data()[i] == 1.0) CHECK(lo.data()[i] == 1.0);
    }

    // blur keeps the block roughly in place but the flag must not crash on
    // borders
    CHECK_NOTHROW(threshold_mask(map, 0.35, true));
}

TEST_CASE("upsample_mask nearest neighbor behavior") {
    Image mask(1, 1, 1, 1.0);
    const Image same = upsample_mask(mask, 1, 1);
    CHECK(same.at(0, 0) == 1.0);

    const Image up = upsample_mask(mask, 2, 2);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) CHECK(up.at(y, x) == 1.0);
    }

    // block round trip: down-up after up-down preserves aligned blocks
    Image block(4, 4, 1, 0.0);
    for (int y = 0; y < 2; ++y) {
        for (int x = 2; x < 4; ++x) block.at(y, x) = 1.0;
    }
    const Image up2 = upsample_mask(block, 8, 8);
    const Image down = upsample_mask(up2, 4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) CHECK(down.at(y, x) == block.at(y, x));
    }
}

TEST_CASE("blend_latents selects per mask value") {
    Rng rng(19);
    const LatentGrid edit = random_grid(rng, 3, 6, 6);
    const LatentGrid orig = random_grid(rng, 3, 6, 6);

    SUBCASE("all-zero mask returns the original bitwise") {
        const LatentGrid out = blend_latents(edit, orig, Image(6, 6, 1, 0.0));
        CHECK(std::memcmp(out.data(), orig.data(), out.count() * sizeof(double)) == 0);
    }
    SUBCASE("all-one mask returns the edit") {
        const LatentGrid out = blend_latents(edit, orig, Image(6, 6, 1, 1.0));
        CHECK(std::memcmp(out.data(), edit.data(), out.count() * sizeof(double)) == 0);
    }
    SUBCASE("half mask splits the grid") {
        Image mask(6, 6, 1, 0.0);
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 3; ++x) mask.at(y, x) = 1.0;
        }
        const LatentGrid out = blend_latents(edit, orig, mask);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 6; ++y) {
                for (int x = 0; x < 6; ++x) {
                    CHECK(out.at(c, y, x) == (x < 3 ? edit.at(c, y, x) : orig.at(c, y, x)));
                }
            }
        }
    }
}

TEST_CASE("toy denoiser contract") {
    Rng rng(23);
    const LatentGrid z = random_grid(rng, 4, 8, 8);
    const ToyDenoiser toy(1, 1, 3, 3, 2.5, 0.4);

    const LatentGrid null_pred = toy.predict_noise(z, 5, ImageCondition{}, nullptr);
    CHECK(null_pred.same_shape(z));
    for (size_t i = 0; i < null_pred.count(); ++i) {
        CHECK(null_pred.data()[i] == 0.4);
    }

    TextCondition text{"make it blue"};
    const LatentGrid text_pred = toy.predict_noise(z, 5, ImageCondition{}, &text);
    CHECK(text_pred.same_shape(z));
    CHECK(text_pred.at(0, 1, 1) == doctest::Approx(2.9));
    CHECK(text_pred.at(0, 0, 0) == doctest::Approx(0.4));
}

TEST_CASE("latent files round trip and reject malformed input") {
    Rng rng(29);
    const LatentGrid grid = random_grid(rng, 4, 9, 7);
    const auto path = fs::temp_directory_path() / "sgs_latent.ltnt";
    save_latent(grid, path.string());
    const LatentGrid loaded = load_latent(path.string());
    REQUIRE(loaded.same_shape(grid));
    for (size_t i = 0; i < grid.count(); ++i) {
        CHECK(loaded.data()[i] == doctest::Approx(grid.data()[i]).epsilon(1e-6));
    }

    std::ofstream(path, std::ios::binary) << "JUNKJUNKJUNK";
    CHECK_THROWS_AS(load_latent(path.string()), DataError);
    fs::remove(path);
    CHECK_THROWS_AS(load_latent(path.string()), DataError);
}
