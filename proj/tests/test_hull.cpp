#include "sgs/hull.hpp"

#include <cmath>

#include "doctest.h"
#include "sgs/rng.hpp"

using namespace sgs;

#include "test_helpers.hpp"

namespace {

using sgs::testing::cube_silhouettes;

std::vector<Camera> axis_cameras(int size = 256, double distance = 20.0, double focal = 1600.0) {
    return sgs::testing::axis_cameras(size, distance, focal);
}

std::vector<Silhouette> constant_silhouettes(const std::vector<Camera>& cams, double value) {
    std::vector<Silhouette> views;
    for (const Camera& cam : cams) {
        views.push_back({Image(cam.height, cam.width, 1, value), cam});
    }
    return views;
}

}  // namespace

TEST_CASE("all-white silhouettes keep every point projecting into all frames") {
    auto cams = axis_cameras(64, 10.0, 200.0);
    const auto views = constant_silhouettes(cams, 1.0);
    Aabb bounds;
    bounds.min = Eigen::Vector3d::Constant(-0.2);
    bounds.max = Eigen::Vector3d::Constant(0.2);

    const CarveResult res = carve(views, bounds, 2000, 1);
    CHECK(res.points.size() == 2000);
    CHECK(!res.empty_warning);
}

TEST_CASE("one all-black silhouette empties the hull") {
    auto cams = axis_cameras(64, 10.0, 200.0);
    auto views = constant_silhouettes(cams, 1.0);
    views[3].mask.fill(0.0);
    Aabb bounds;
    bounds.min = Eigen::Vector3d::Constant(-0.2);
    bounds.max = Eigen::Vector3d::Constant(0.2);

    const CarveResult res = carve(views, bounds, 500, 1);
    CHECK(res.points.empty());
    CHECK(res.empty_warning);
}

TEST_CASE("carved cube volume matches the analytic fraction") {
    const auto cams = axis_cameras();
    const double h = 0.5;
    const auto views = cube_silhouettes(cams, h);
    Aabb bounds;
    bounds.min = Eigen::Vector3d::Constant(-1.0);
    bounds.max = Eigen::Vector3d::Constant(1.0);

    const size_t n = 200000;
    const CarveResult res = carve(views, bounds, n, 7);
    const double fraction = static_cast<double>(res.points.size()) / n;
    const double expect = std::pow(2.0 * h, 3) / bounds.volume();
    CHECK(std::abs(fraction - expect) <= 0.03 * expect);

    // analytic cube membership oracle with slack for silhouette pixelation
    size_t outside = 0;
    for (const auto& p : res.points) {
        if (p.cwiseAbs().maxCoeff() > h * 1.05) ++outside;
    }
    CHECK(outside == 0);
}

TEST_CASE("every carved point projects inside all silhouettes") {
    const auto cams = axis_cameras();
    const auto views = cube_silhouettes(cams, 0.5);
    Aabb bounds;
    bounds.min = Eigen::Vector3d::Constant(-1.0);
    bounds.max = Eigen::Vector3d::Constant(1.0);
    const CarveResult res = carve(views, bounds, 20000, 11);

    for (const auto& p : res.points) {
        for (const auto& s : views) {
            const auto proj = project_point(s.cam, p);
            REQUIRE(proj.has_value());
            const int px = static_cast<int>(std::lround(proj->u));
            const int py = static_cast<int>(std::lround(proj->v));
            REQUIRE(px >= 0);
            REQUIRE(px < s.cam.width);
            REQUIRE(py >= 0);
            REQUIRE(py < s.cam.height);
            CHECK(s.mask.at(py, px) == 1.0);
        }
    }
}

TEST_CASE("adding a view can only shrink the carved set") {
    const auto cams = axis_cameras();
    const auto views = cube_silhouettes(cams, 0.5);
    Aabb bounds;
    bounds.min = Eigen::Vector3d::Constant(-1.0);
    bounds.max = Eigen::Vector3d::Constant(1.0);

    std::vector<Silhouette> partial(views.begin(), views.begin() + 3);
    const CarveResult coarse = carve(partial, bounds, 5000, 3);
    const CarveResult fine = carve(views, bounds, 5000, 3);

    CHECK(fine.points.size() <= coarse.points.size());
    // same seed, same candidates: the finer result is a subset
    size_t j = 0;
    for (const auto& p : fine.points) {
        while (j < coarse.points.size() && coarse.points[j] != p) ++j;
        REQUIRE(j < coarse.points.size());
    }
}

TEST_CASE("carve is deterministic per seed") {
    const auto cams = axis_cameras(48, 10.0, 150.0);
    const auto views = cube_silhouettes(cams, 0.4);
    Aabb bounds;
    bounds.min = Eigen::Vector3d::Constant(-1.0);
    bounds.max = Eigen::Vector3d::Constant(1.0);

    const CarveResult a = carve(views, bounds, 3000, 99, 1);
    const CarveResult b = carve(views, bounds, 3000, 99, 4);
    REQUIRE(a.points.size() == b.points.size());
    for (size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i] == b.points[i]);
    }
    const CarveResult c = carve(views, bounds, 3000, 100);
    REQUIRE(!c.points.empty());
    CHECK(a.points[0] != c.points[0]);  // a different seed draws different candidates
}

TEST_CASE("carve validates its inputs") {
    Aabb bounds;
    CHECK_THROWS_AS(carve({}, bounds, 10, 0), std::invalid_argument);

    auto cams = axis_cameras(16, 5.0, 30.0);
    auto views = constant_silhouettes({cams[0]}, 1.0);
    CHECK_THROWS_AS(carve(views, bounds, 0, 0), std::invalid_argument);

    views[0].mask.at(3, 3) = 0.5;  // not binary
    CHECK_THROWS_AS(carve(views, bounds, 10, 0), std::invalid_argument);
}

TEST_CASE("assign_colors averages the visible views") {
    const auto cams = axis_cameras(32, 6.0, 60.0);

    SUBCASE("constant gray everywhere") {
        std::vector<Image> images(cams.size(), Image(32, 32, 3, 0.5));
        const auto res = assign_colors({{0.05, -0.03, 0.08}}, cams, images);
        REQUIRE(res.samples.size() == 1);
        CHECK((res.samples[0].color - Eigen::Vector3d::Constant(0.5)).norm() < 1e-12);
        CHECK(res.dropped == 0);
    }

    SUBCASE("red plus blue view averages to half red half blue") {
        std::vector<Camera> two = {cams[0], cams[1]};
        Image red(32, 32, 3, 0.0), blue(32, 32, 3, 0.0);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                red.at(y, x, 0) = 1.0;
                blue.at(y, x, 2) = 1.0;
            }
        }
        const auto res = assign_colors({Eigen::Vector3d::Zero()}, two, {red, blue});
        REQUIRE(res.samples.size() == 1);
        CHECK((res.samples[0].color - Eigen::Vector3d{0.5, 0.0, 0.5}).norm() < 1e-12);
    }
}

TEST_CASE("assign_colors bilinear half-pixel oracle") {
    // single axis-aligned camera; a point projecting exactly between a black
    // and a white texel must read 0.5
    Camera cam;
    cam.fx = cam.fy = 32.0;
    cam.cx = cam.cy = 15.5;
    cam.width = cam.height = 32;

    Image img(32, 32, 3, 0.0);
    for (int y = 0; y < 32; ++y) {
        for (int x = 16; x < 32; ++x) {
            img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = 1.0;
        }
    }
    // u = 15.5 lands halfway between texel 15 (black) and 16 (white)
    const auto res = assign_colors({{0.0, 0.0, 1.0}}, {cam}, {img});
    REQUIRE(res.samples.size() == 1);
    CHECK(res.samples[0].color[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("assign_colors drops points visible nowhere") {
    Camera cam;
    cam.fx = cam.fy = 32.0;
    cam.cx = cam.cy = 16.0;
    cam.width = cam.height = 32;
    Image img(32, 32, 3, 0.5);

    const auto res = assign_colors({{0.0, 0.0, -1.0}}, {cam}, {img});
    CHECK(res.samples.empty());
    CHECK(res.dropped == 1);
}

TEST_CASE("init_gaussians on a regular grid recovers the spacing") {
    const double spacing = 0.05;
    std::vector<HullSample> samples;
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            for (int k = 0; k < 6; ++k) {
                samples.push_back({Eigen::Vector3d(i, j, k) * spacing, {0.8, 0.4, 0.2}});
            }
        }
    }
    const GaussianCloud cloud = init_gaussians(samples, 0.1, 3);
    REQUIRE(cloud.size() == samples.size());
    // kNN on a grid: interior points see three axis neighbors at `spacing`
    for (size_t i = 0; i < cloud.size(); ++i) {
        CHECK(cloud.scales[i].log_sigma[0] ==
              doctest::Approx(std::log(spacing)).epsilon(1e-9));
        CHECK(cloud.opacity(i) == doctest::Approx(0.1).epsilon(1e-9));
        CHECK((cloud.rotations[i].wxyz - Eigen::Vector4d(1, 0, 0, 0)).norm() == 0.0);
    }

    // DC coefficients invert the 0.5 offset convention
    const Eigen::Vector3d back = eval_color(cloud.sh[0], Eigen::Vector3d::UnitZ(), 0);
    CHECK((back - Eigen::Vector3d{0.8, 0.4, 0.2}).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("init_gaussians needs knn + 1 samples") {
    std::vector<HullSample> samples(3, {Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()});
    CHECK_THROWS_AS(init_gaussians(samples, 0.1, 3), std::invalid_argument);
    CHECK_THROWS_AS(init_gaussians(samples, 1.5, 2), std::invalid_argument);
}

TEST_CASE("default bounds reach every camera") {
    const auto cams = axis_cameras(32, 12.0, 100.0);
    const Aabb box = default_carve_bounds(cams);
    for (const Camera& cam : cams) {
        CHECK(box.contains(cam.center()));
    }
}
