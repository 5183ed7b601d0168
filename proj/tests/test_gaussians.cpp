#include "sgs/gaussians.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sgs/errors.hpp"
#include "sgs/rng.hpp"

using namespace sgs;
namespace fs = std::filesystem;

namespace {

GaussianCloud random_cloud(Rng& rng, size_t n, int degree) {
    GaussianCloud cloud;
    cloud.resize(n, degree);
    for (size_t i = 0; i < n; ++i) {
        cloud.positions[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        for (int k = 0; k < 4; ++k) cloud.rotations[i].wxyz[k] = rng.normal();
        cloud.rotations[i].wxyz.normalize();
        cloud.scales[i].log_sigma = {rng.uniform(-3, 0), rng.uniform(-3, 0), rng.uniform(-3, 0)};
        cloud.opacity_logits[i] = rng.uniform(-3, 3);
        for (int c = 0; c < 3; ++c) {
            for (int b = 0; b < cloud.basis_count(); ++b) {
                cloud.sh[i](c, b) = rng.uniform(-1, 1);
            }
        }
    }
    return cloud;
}

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("eval_color DC term is direction independent") {
    Eigen::Matrix3Xd coeffs = Eigen::Matrix3Xd::Zero(3, 1);
    coeffs.col(0) = Eigen::Vector3d{0.4, -0.2, 0.9};
    const double y00 = 0.28209479177387814;

    const Eigen::Vector3d a = eval_color(coeffs, Eigen::Vector3d::UnitZ(), 0);
    const Eigen::Vector3d b = eval_color(coeffs, -Eigen::Vector3d::UnitX(), 0);
    CHECK((a - b).norm() == 0.0);
    for (int c = 0; c < 3; ++c) {
        const double expect = std::clamp(coeffs(c, 0) * y00 + 0.5, 0.0, 1.0);
        CHECK(a[c] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("eval_color z-linear band differs front to back by twice its contribution") {
    Eigen::Matrix3Xd coeffs = Eigen::Matrix3Xd::Zero(3, 4);
    coeffs(0, 2) = 0.3;  // z band of degree 1 in the basis ordering

    const Eigen::Vector3d front = eval_color(coeffs, Eigen::Vector3d::UnitZ(), 1);
    const Eigen::Vector3d back = eval_color(coeffs, -Eigen::Vector3d::UnitZ(), 1);
    const double band = 0.3 * 0.4886025119029199;  // SH basis table oracle
    CHECK(front[0] - back[0] == doctest::Approx(2.0 * band).epsilon(1e-12));
    CHECK(front[1] == doctest::Approx(back[1]));
}

TEST_CASE("eval_color all-zero coefficients give mid gray") {
    Eigen::Matrix3Xd coeffs = Eigen::Matrix3Xd::Zero(3, 9);
    const Eigen::Vector3d c = eval_color(coeffs, Eigen::Vector3d::UnitY(), 2);
    CHECK(c == Eigen::Vector3d::Constant(0.5));
}

TEST_CASE("eval_color rejects bad degree and non-unit directions") {
    Eigen::Matrix3Xd coeffs = Eigen::Matrix3Xd::Zero(3, 16);
    CHECK_THROWS_AS(eval_color(coeffs, Eigen::Vector3d::UnitZ(), 4), std::invalid_argument);
    CHECK_THROWS_AS(eval_color(coeffs, Eigen::Vector3d::UnitZ(), -1), std::invalid_argument);
    CHECK_THROWS_AS(eval_color(coeffs, Eigen::Vector3d{0.0, 0.0, 2.0}, 1),
                    std::invalid_argument);
}

TEST_CASE("eval_color stays finite and Lipschitz over a direction grid") {
    Rng rng(5);
    Eigen::Matrix3Xd coeffs(3, 16);
    for (int c = 0; c < 3; ++c) {
        for (int b = 0; b < 16; ++b) coeffs(c, b) = rng.uniform(-1, 1);
    }
    const int n = 24;
    Eigen::Vector3d prev = Eigen::Vector3d::Zero();
    bool has_prev = false;
    for (int i = 0; i <= n; ++i) {
        const double theta = M_PI * i / n;
        for (int j = 0; j < 2 * n; ++j) {
            const double phi = M_PI * j / n;
            const Eigen::Vector3d dir{std::sin(theta) * std::cos(phi),
                                      std::sin(theta) * std::sin(phi), std::cos(theta)};
            const Eigen::Vector3d c = eval_color(coeffs, dir, 3);
            CHECK(c.allFinite());
            if (has_prev && j > 0) {
                CHECK((c - prev).norm() < 40.0 * (M_PI / n));  // crude Lipschitz bound
            }
            prev = c;
            has_prev = true;
        }
    }
}

TEST_CASE("sh_basis_gradient matches finite differences") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::Vector3d dir{rng.normal(), rng.normal(), rng.normal()};
        dir.normalize();
        double base[16];
        Eigen::Vector3d grad[16];
        sh_basis(dir, 3, base);
        sh_basis_gradient(dir, 3, grad);
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Eigen::Vector3d dp = Eigen::Vector3d::Zero();
            dp[k] = h;
            double plus[16], minus[16];
            sh_basis(dir + dp, 3, plus);  // gradient of the polynomial form
            sh_basis(dir - dp, 3, minus);
            for (int b = 0; b < 16; ++b) {
                CHECK(grad[b][k] == doctest::Approx((plus[b] - minus[b]) / (2 * h)).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("ply round trip preserves every field") {
    Rng rng(41);
    for (int degree : {0, 2}) {
        const GaussianCloud cloud = random_cloud(rng, 37, degree);
        const auto path = temp_file("sgs_roundtrip.ply");
        save_ply(cloud, path.string());
        const GaussianCloud loaded = load_ply(path.string());

        REQUIRE(loaded.size() == cloud.size());
        REQUIRE(loaded.sh_degree == cloud.sh_degree);
        for (size_t i = 0; i < cloud.size(); ++i) {
            CHECK((loaded.positions[i] - cloud.positions[i]).cwiseAbs().maxCoeff() < 1e-6);
            CHECK((loaded.rotations[i].wxyz - cloud.rotations[i].wxyz).cwiseAbs().maxCoeff() <
                  1e-6);
            CHECK((loaded.scales[i].log_sigma - cloud.scales[i].log_sigma).cwiseAbs().maxCoeff() <
                  1e-6);
            CHECK(std::abs(loaded.opacity_logits[i] - cloud.opacity_logits[i]) < 1e-6);
            CHECK((loaded.sh[i] - cloud.sh[i]).cwiseAbs().maxCoeff() < 1e-6);
        }
        fs::remove(path);
    }
}

TEST_CASE("ply serialization is byte stable") {
    Rng rng(43);
    const GaussianCloud cloud = random_cloud(rng, 11, 1);
    const auto a = temp_file("sgs_bytes_a.ply");
    const auto b = temp_file("sgs_bytes_b.ply");
    save_ply(cloud, a.string());
    save_ply(cloud, b.string());

    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    const std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(da == db);
    CHECK(!da.empty());
    fs::remove(a);
    fs::remove(b);
}

TEST_CASE("empty cloud round trips") {
    GaussianCloud cloud;
    cloud.resize(0, 0);
    const auto path = temp_file("sgs_empty.ply");
    save_ply(cloud, path.string());
    const GaussianCloud loaded = load_ply(path.string());
    CHECK(loaded.size() == 0);
    fs::remove(path);
}

TEST_CASE("ply loader rejects malformed input") {
    const auto path = temp_file("sgs_bad.ply");

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_ply((fs::temp_directory_path() / "no_such.ply").string()),
                        DataError);
    }
    SUBCASE("wrong magic") {
        std::ofstream(path) << "noply\n";
        CHECK_THROWS_AS(load_ply(path.string()), DataError);
    }
    SUBCASE("missing opacity property") {
        std::ofstream out(path);
        out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\n";
        for (const char* p : {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0",
                              "scale_1", "scale_2", "f_dc_0", "f_dc_1", "f_dc_2"}) {
            out << "property float " << p << "\n";
        }
        out << "end_header\n";
        out.close();
        CHECK_THROWS_AS(load_ply(path.string()), DataError);
    }
    SUBCASE("truncated body") {
        GaussianCloud cloud;
        cloud.resize(4, 0);
        save_ply(cloud, path.string());
        fs::resize_file(path, fs::file_size(path) - 8);
        CHECK_THROWS_AS(load_ply(path.string()), DataError);
    }
    SUBCASE("non-finite values") {
        GaussianCloud cloud;
        cloud.resize(1, 0);
        save_ply(cloud, path.string());
        // patch the stored x with a NaN
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        std::string header;
        std::string line;
        while (std::getline(f, line)) {
            if (line == "end_header") break;
        }
        const auto body_pos = f.tellg();
        const float bad = std::numeric_limits<float>::quiet_NaN();
        f.seekp(body_pos);
        f.write(reinterpret_cast<const char*>(&bad), 4);
        f.close();
        CHECK_THROWS_AS(load_ply(path.string()), DataError);
    }
    fs::remove(path);
}
