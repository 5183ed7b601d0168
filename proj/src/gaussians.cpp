#include "sgs/gaussians.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sgs/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "PLY serialization assumes a little-endian host");

namespace sgs {

namespace {

constexpr double kSH0 = 0.28209479177387814;
constexpr double kSH1 = 0.4886025119029199;
constexpr double kSH2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kSH3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                            0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

Eigen::Vector3d checked_unit_dir(const Eigen::Vector3d& dir) {
    const double n = dir.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-3) {
        throw std::invalid_argument("view direction must be unit length");
    }
    return dir / n;
}

}  // namespace

int sh_basis_count(int degree) {
    if (degree < 0 || degree > 3) {
        throw std::invalid_argument("SH degree must be in {0..3}");
    }
    return (degree + 1) * (degree + 1);
}

void sh_basis(const Eigen::Vector3d& dir, int degree, double* out) {
    const int count = sh_basis_count(degree);
    out[0] = kSH0;
    if (count == 1) return;

    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[1] = -kSH1 * y;
    out[2] = kSH1 * z;
    out[3] = -kSH1 * x;
    if (count == 4) return;

    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kSH2[0] * x * y;
    out[5] = kSH2[1] * y * z;
    out[6] = kSH2[2] * (2.0 * zz - xx - yy);
    out[7] = kSH2[3] * x * z;
    out[8] = kSH2[4] * (xx - yy);
    if (count == 9) return;

    out[9] = kSH3[0] * y * (3.0 * xx - yy);
    out[10] = kSH3[1] * x * y * z;
    out[11] = kSH3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kSH3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kSH3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kSH3[5] * z * (xx - yy);
    out[15] = kSH3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_gradient(const Eigen::Vector3d& dir, int degree, Eigen::Vector3d* out) {
    const int count = sh_basis_count(degree);
    out[0].setZero();
    if (count == 1) return;

    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[1] = {0.0, -kSH1, 0.0};
    out[2] = {0.0, 0.0, kSH1};
    out[3] = {-kSH1, 0.0, 0.0};
    if (count == 4) return;

    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = {kSH2[0] * y, kSH2[0] * x, 0.0};
    out[5] = {0.0, kSH2[1] * z, kSH2[1] * y};
    out[6] = {-2.0 * kSH2[2] * x, -2.0 * kSH2[2] * y, 4.0 * kSH2[2] * z};
    out[7] = {kSH2[3] * z, 0.0, kSH2[3] * x};
    out[8] = {2.0 * kSH2[4] * x, -2.0 * kSH2[4] * y, 0.0};
    if (count == 9) return;

    out[9] = {kSH3[0] * 6.0 * x * y, kSH3[0] * (3.0 * xx - 3.0 * yy), 0.0};
    out[10] = {kSH3[1] * y * z, kSH3[1] * x * z, kSH3[1] * x * y};
    out[11] = {-2.0 * kSH3[2] * x * y, kSH3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kSH3[2] * y * z};
    out[12] = {-6.0 * kSH3[3] * x * z, -6.0 * kSH3[3] * y * z,
               kSH3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
    out[13] = {kSH3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kSH3[4] * x * y, 8.0 * kSH3[4] * x * z};
    out[14] = {2.0 * kSH3[5] * x * z, -2.0 * kSH3[5] * y * z, kSH3[5] * (xx - yy)};
    out[15] = {kSH3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kSH3[6] * x * y, 0.0};
}

Eigen::Vector3d eval_color(const Eigen::Matrix3Xd& coeffs, const Eigen::Vector3d& view_dir,
                           int degree) {
    const int count = sh_basis_count(degree);
    if (coeffs.cols() < count) {
        throw std::invalid_argument("SH coefficient matrix too small for degree");
    }
    const Eigen::Vector3d dir = degree > 0 ? checked_unit_dir(view_dir) : view_dir;

    double basis[16];
    sh_basis(dir, degree, basis);
    Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
    for (int b = 0; b < count; ++b) {
        color += coeffs.col(b) * basis[b];
    }
    return color.cwiseMax(0.0).cwiseMin(1.0);
}

void GaussianCloud::resize(size_t n, int degree) {
    const int count = sh_basis_count(degree);
    sh_degree = degree;
    positions.assign(n, Eigen::Vector3d::Zero());
    rotations.assign(n, Rotation::identity());
    scales.assign(n, Scale{});
    opacity_logits.assign(n, 0.0);
    sh.assign(n, Eigen::Matrix3Xd::Zero(3, count));
}

void GaussianCloud::validate() const {
    const size_t n = size();
    if (rotations.size() != n || scales.size() != n || opacity_logits.size() != n ||
        sh.size() != n) {
        throw std::invalid_argument("gaussian cloud field sizes disagree");
    }
    const int count = basis_count();
    for (size_t i = 0; i < n; ++i) {
        if (!positions[i].allFinite() || !rotations[i].wxyz.allFinite() ||
            !scales[i].log_sigma.allFinite() || !std::isfinite(opacity_logits[i]) ||
            !sh[i].allFinite()) {
            throw std::invalid_argument("gaussian " + std::to_string(i) +
                                        " has non-finite parameters");
        }
        if (sh[i].cols() != count) {
            throw std::invalid_argument("gaussian " + std::to_string(i) +
                                        " has wrong SH coefficient count");
        }
        if (std::abs(rotations[i].wxyz.norm() - 1.0) > 1e-3) {
            throw std::invalid_argument("gaussian " + std::to_string(i) +
                                        " quaternion is not normalized");
        }
    }
}

namespace {

std::vector<std::string> expected_properties(int basis_count) {
    std::vector<std::string> props = {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
                                      "scale_0", "scale_1", "scale_2", "opacity",
                                      "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < (basis_count - 1) * 3; ++i) {
        props.push_back("f_rest_" + std::to_string(i));
    }
    return props;
}

void put_f32(std::string& buf, double v) {
    const float f = static_cast<float>(v);
    char bytes[4];
    std::memcpy(bytes, &f, 4);
    buf.append(bytes, 4);
}

}  // namespace

void save_ply(const GaussianCloud& cloud, const std::string& path) {
    cloud.validate();
    const int basis = cloud.basis_count();
    const auto props = expected_properties(basis);

    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n"
           << "comment sparsegs gaussian cloud, sh_degree " << cloud.sh_degree << "\n"
           << "element vertex " << cloud.size() << "\n";
    for (const auto& p : props) {
        header << "property float " << p << "\n";
    }
    header << "end_header\n";

    std::string body;
    body.reserve(cloud.size() * props.size() * 4);
    for (size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 3; ++k) put_f32(body, cloud.positions[i][k]);
        for (int k = 0; k < 4; ++k) put_f32(body, cloud.rotations[i].wxyz[k]);
        for (int k = 0; k < 3; ++k) put_f32(body, cloud.scales[i].log_sigma[k]);
        put_f32(body, cloud.opacity_logits[i]);
        for (int c = 0; c < 3; ++c) put_f32(body, cloud.sh[i](c, 0));
        for (int c = 0; c < 3; ++c) {
            for (int b = 1; b < basis; ++b) put_f32(body, cloud.sh[i](c, b));
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open for writing: " + path);
    }
    out << header.str() << body;
    if (!out) {
        throw DataError("write failed: " + path);
    }
}

GaussianCloud load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open: " + path);
    }

    std::string line;
    if (!std::getline(in, line) || line != "ply") {
        throw DataError(path + ": not a PLY file");
    }
    size_t vertex_count = 0;
    std::vector<std::string> props;
    bool in_vertex_element = false;
    bool saw_format = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") {
                throw DataError(path + ": unsupported PLY format " + fmt);
            }
            saw_format = true;
        } else if (tok == "element") {
            std::string name;
            ls >> name >> vertex_count;
            in_vertex_element = (name == "vertex");
            if (!in_vertex_element) {
                throw DataError(path + ": unexpected element " + name);
            }
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (!in_vertex_element) {
                throw DataError(path + ": property outside vertex element");
            }
            if (type != "float") {
                throw DataError(path + ": property " + name + " must be float");
            }
            props.push_back(name);
        }
    }
    if (!saw_format || !in_vertex_element) {
        throw DataError(path + ": malformed PLY header");
    }

    // Infer SH degree from the f_rest property count.
    int degree = -1;
    for (int d = 0; d <= 3; ++d) {
        if (props == expected_properties(sh_basis_count(d))) {
            degree = d;
            break;
        }
    }
    if (degree < 0) {
        throw DataError(path + ": unexpected PLY property set");
    }
    const int basis = sh_basis_count(degree);
    const size_t floats_per_vertex = props.size();

    std::vector<float> raw(vertex_count * floats_per_vertex);
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != raw.size() * sizeof(float)) {
        throw DataError(path + ": truncated PLY body");
    }

    GaussianCloud cloud;
    cloud.resize(vertex_count, degree);
    const float* v = raw.data();
    for (size_t i = 0; i < vertex_count; ++i, v += floats_per_vertex) {
        cloud.positions[i] = {v[0], v[1], v[2]};
        cloud.rotations[i].wxyz = {v[3], v[4], v[5], v[6]};
        cloud.scales[i].log_sigma = {v[7], v[8], v[9]};
        cloud.opacity_logits[i] = v[10];
        for (int c = 0; c < 3; ++c) cloud.sh[i](c, 0) = v[11 + c];
        const float* rest = v + 14;
        for (int c = 0; c < 3; ++c) {
            for (int b = 1; b < basis; ++b) {
                cloud.sh[i](c, b) = rest[c * (basis - 1) + (b - 1)];
            }
        }
    }
    try {
        cloud.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(path + ": " + e.what());
    }
    return cloud;
}

}  // namespace sgs
