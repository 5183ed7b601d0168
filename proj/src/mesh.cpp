#include "sgs/mesh.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sgs/errors.hpp"
#include "sgs/marching_tables.hpp"
#include "sgs/parallel.hpp"

static_assert(std::endian::native == std::endian::little,
              "mesh serialization assumes a little-endian host");

namespace sgs {

void ScalarField::validate() const {
    if (resolution.minCoeff() < 2) {
        throw std::invalid_argument("scalar field resolution must be at least 2 per axis");
    }
    const size_t expect = static_cast<size_t>(resolution.x()) * resolution.y() * resolution.z();
    if (values.size() != expect) {
        throw std::invalid_argument("scalar field value count does not match resolution");
    }
    if ((bounds.extent().array() <= 0.0).any()) {
        throw std::invalid_argument("scalar field bounds are degenerate");
    }
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) {
            throw std::invalid_argument("scalar field values must be finite and non-negative");
        }
    }
}

void TriangleMesh::validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
        if (t.minCoeff() < 0 || t.maxCoeff() >= n) {
            throw std::invalid_argument("triangle index out of range");
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw std::invalid_argument("degenerate triangle");
        }
    }
}

ScalarField opacity_field(const GaussianCloud& cloud, const Aabb& bounds,
                          const Eigen::Vector3i& resolution, double min_opacity, int threads) {
    cloud.validate();
    ScalarField field;
    field.resolution = resolution;
    field.bounds = bounds;
    field.values.assign(
        static_cast<size_t>(resolution.x()) * resolution.y() * resolution.z(), 0.0);
    field.validate();

    struct Blob {
        Eigen::Vector3d mean;
        Eigen::Matrix3d inv_cov;
        double alpha;
        Eigen::Vector3i lo, hi;  // inclusive grid range of the 3-sigma box
    };
    const Eigen::Vector3d spacing = field.spacing();
    std::vector<Blob> blobs;
    blobs.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const double alpha = cloud.opacity(i);
        if (alpha < min_opacity) continue;
        Blob b;
        b.mean = cloud.positions[i];
        const Eigen::Matrix3d cov = compose_covariance(cloud.scales[i], cloud.rotations[i]);
        b.inv_cov = cov.inverse();
        b.alpha = alpha;
        bool overlaps = true;
        for (int k = 0; k < 3; ++k) {
            const double radius = 3.0 * std::sqrt(cov(k, k));
            const double lo = (b.mean[k] - radius - bounds.min[k]) / spacing[k];
            const double hi = (b.mean[k] + radius - bounds.min[k]) / spacing[k];
            b.lo[k] = std::max(0, static_cast<int>(std::ceil(lo)));
            b.hi[k] = std::min(resolution[k] - 1, static_cast<int>(std::floor(hi)));
            if (b.lo[k] > b.hi[k]) overlaps = false;
        }
        if (overlaps) blobs.push_back(std::move(b));
    }

    // parallel over z-slabs; every voxel accumulates its blobs in index order
    parallel_blocks(resolution.z(), threads, [&](int, int z0, int z1) {
        for (const Blob& b : blobs) {
            for (int k = std::max(b.lo.z(), z0); k <= std::min(b.hi.z(), z1 - 1); ++k) {
                for (int j = b.lo.y(); j <= b.hi.y(); ++j) {
                    for (int i = b.lo.x(); i <= b.hi.x(); ++i) {
                        const Eigen::Vector3d d = field.position(i, j, k) - b.mean;
                        const double maha = d.dot(b.inv_cov * d);
                        if (maha > 9.0) continue;  // 3-sigma truncation
                        field.at(i, j, k) += b.alpha * std::exp(-0.5 * maha);
                    }
                }
            }
        }
    });
    return field;
}

namespace {

// Nothing below iso is "inside"; bit set means the corner is at or below iso,
// matching the orientation baked into kTriTable.
uint8_t cell_case(const ScalarField& field, int i, int j, int k, double iso) {
    uint8_t index = 0;
    for (int c = 0; c < 8; ++c) {
        const auto& off = detail::kCellCorners[c];
        if (field.at(i + off[0], j + off[1], k + off[2]) <= iso) {
            index |= static_cast<uint8_t>(1u << c);
        }
    }
    return index;
}

// Canonical edge key: lower grid corner index * 3 + axis.
uint64_t edge_key(const ScalarField& field, int i, int j, int k, int edge) {
    const auto& c0 = detail::kCellCorners[detail::kEdgeCorners[edge][0]];
    const auto& c1 = detail::kCellCorners[detail::kEdgeCorners[edge][1]];
    int g0[3] = {i + c0[0], j + c0[1], k + c0[2]};
    int g1[3] = {i + c1[0], j + c1[1], k + c1[2]};
    int axis = 0;
    for (int a = 0; a < 3; ++a) {
        if (g0[a] != g1[a]) axis = a;
    }
    if (g1[axis] < g0[axis]) std::swap(g0, g1);
    const uint64_t linear =
        (static_cast<uint64_t>(g0[2]) * field.resolution.y() + g0[1]) * field.resolution.x() +
        g0[0];
    return linear * 3 + axis;
}

Eigen::Vector3d interpolate_edge(const ScalarField& field, uint64_t key, double iso) {
    const int axis = static_cast<int>(key % 3);
    uint64_t linear = key / 3;
    const int nx = field.resolution.x(), ny = field.resolution.y();
    const int i = static_cast<int>(linear % nx);
    const int j = static_cast<int>((linear / nx) % ny);
    const int k = static_cast<int>(linear / (static_cast<uint64_t>(nx) * ny));

    int i1 = i, j1 = j, k1 = k;
    (axis == 0 ? i1 : axis == 1 ? j1 : k1) += 1;
    const double f0 = field.at(i, j, k);
    const double f1 = field.at(i1, j1, k1);
    const Eigen::Vector3d p0 = field.position(i, j, k);
    const Eigen::Vector3d p1 = field.position(i1, j1, k1);
    double t = 0.5;
    if (std::abs(f1 - f0) > 1e-300) {
        t = std::clamp((iso - f0) / (f1 - f0), 0.0, 1.0);
    }
    return p0 + t * (p1 - p0);
}

}  // namespace

TriangleMesh marching_cubes(const ScalarField& field, double iso, int threads) {
    field.validate();
    const int cx = field.resolution.x() - 1;
    const int cy = field.resolution.y() - 1;
    const int cz = field.resolution.z() - 1;

    // classify cells and collect triangles as edge-key triples per z-slab
    std::vector<std::vector<std::array<uint64_t, 3>>> slabs(cz);
    parallel_blocks(cz, threads, [&](int, int z0, int z1) {
        for (int k = z0; k < z1; ++k) {
            auto& out = slabs[k];
            for (int j = 0; j < cy; ++j) {
                for (int i = 0; i < cx; ++i) {
                    const uint8_t index = cell_case(field, i, j, k, iso);
                    if (index == 0 || index == 255) continue;
                    const auto& row = detail::kTriTable[index];
                    for (int t = 0; row[t] != -1; t += 3) {
                        out.push_back({edge_key(field, i, j, k, row[t]),
                                       edge_key(field, i, j, k, row[t + 1]),
                                       edge_key(field, i, j, k, row[t + 2])});
                    }
                }
            }
        }
    });

    // deterministic vertex numbering: first-seen order over slabs
    TriangleMesh mesh;
    std::unordered_map<uint64_t, int> vertex_of;
    for (int k = 0; k < cz; ++k) {
        for (const auto& tri : slabs[k]) {
            Eigen::Vector3i ids;
            for (int v = 0; v < 3; ++v) {
                auto [it, inserted] = vertex_of.try_emplace(tri[v],
                                                            static_cast<int>(mesh.vertices.size()));
                if (inserted) {
                    mesh.vertices.push_back(interpolate_edge(field, tri[v], iso));
                }
                ids[v] = it->second;
            }
            if (ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2]) continue;
            // table order gives outward normals where density exceeds iso
            mesh.triangles.emplace_back(ids[0], ids[1], ids[2]);
        }
    }
    mesh.validate();
    return mesh;
}

TriangleMesh laplacian_smooth(const TriangleMesh& mesh, int iterations, double factor) {
    mesh.validate();
    if (iterations < 0) {
        throw std::invalid_argument("laplacian_smooth: negative iteration count");
    }
    std::vector<std::vector<int>> neighbors(mesh.vertices.size());
    auto link = [&](int a, int b) {
        auto& list = neighbors[a];
        if (std::find(list.begin(), list.end(), b) == list.end()) list.push_back(b);
    };
    for (const auto& t : mesh.triangles) {
        link(t[0], t[1]);
        link(t[1], t[0]);
        link(t[1], t[2]);
        link(t[2], t[1]);
        link(t[2], t[0]);
        link(t[0], t[2]);
    }

    TriangleMesh out = mesh;
    std::vector<Eigen::Vector3d> next(out.vertices.size());
    for (int it = 0; it < iterations; ++it) {
        for (size_t v = 0; v < out.vertices.size(); ++v) {
            if (neighbors[v].empty()) {
                next[v] = out.vertices[v];
                continue;
            }
            Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
            for (int n : neighbors[v]) centroid += out.vertices[n];
            centroid /= static_cast<double>(neighbors[v].size());
            next[v] = out.vertices[v] + factor * (centroid - out.vertices[v]);
        }
        out.vertices.swap(next);
    }
    return out;
}

namespace {

struct CollapseCandidate {
    double cost;
    int u, v;
    uint64_t stamp;  // sum of endpoint versions when scored
    Eigen::Vector3d target;

    bool operator>(const CollapseCandidate& o) const { return cost > o.cost; }
};

Eigen::Matrix4d plane_quadric(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                              const Eigen::Vector3d& c) {
    const Eigen::Vector3d n = (b - a).cross(c - a);
    const double area2 = n.norm();
    if (area2 < 1e-300) return Eigen::Matrix4d::Zero();
    const Eigen::Vector3d unit = n / area2;
    Eigen::Vector4d p;
    p << unit, -unit.dot(a);
    // area weighting keeps large faces from being flattened first
    return 0.5 * area2 * (p * p.transpose());
}

double quadric_cost(const Eigen::Matrix4d& q, const Eigen::Vector3d& x) {
    Eigen::Vector4d h;
    h << x, 1.0;
    return h.dot(q * h);
}

}  // namespace

TriangleMesh decimate(const TriangleMesh& mesh, size_t target_faces) {
    mesh.validate();
    if (mesh.triangles.size() <= target_faces) {
        return mesh;
    }

    const int nv = static_cast<int>(mesh.vertices.size());
    std::vector<Eigen::Vector3d> pos = mesh.vertices;
    std::vector<Eigen::Matrix4d> quadric(nv, Eigen::Matrix4d::Zero());
    std::vector<uint32_t> version(nv, 0);
    std::vector<bool> vertex_alive(nv, true);

    struct Face {
        std::array<int, 3> v;
        bool alive = true;
    };
    std::vector<Face> faces(mesh.triangles.size());
    std::vector<std::unordered_set<int>> faces_of(nv);
    for (size_t f = 0; f < mesh.triangles.size(); ++f) {
        faces[f].v = {mesh.triangles[f][0], mesh.triangles[f][1], mesh.triangles[f][2]};
        for (int k = 0; k < 3; ++k) faces_of[faces[f].v[k]].insert(static_cast<int>(f));
        const Eigen::Matrix4d q = plane_quadric(pos[faces[f].v[0]], pos[faces[f].v[1]],
                                                pos[faces[f].v[2]]);
        for (int k = 0; k < 3; ++k) quadric[faces[f].v[k]] += q;
    }

    auto optimal_point = [&](int u, int v, const Eigen::Matrix4d& q) {
        Eigen::Matrix3d a = q.topLeftCorner<3, 3>();
        const Eigen::Vector3d b = -q.topRightCorner<3, 1>();
        const Eigen::Vector3d solved = a.fullPivLu().solve(b);
        std::array<Eigen::Vector3d, 4> options = {solved, 0.5 * (pos[u] + pos[v]), pos[u], pos[v]};
        double best = std::numeric_limits<double>::infinity();
        Eigen::Vector3d pick = pos[u];
        for (const auto& x : options) {
            if (!x.allFinite()) continue;
            const double c = quadric_cost(q, x);
            if (c < best) {
                best = c;
                pick = x;
            }
        }
        return std::make_pair(pick, best);
    };

    std::priority_queue<CollapseCandidate, std::vector<CollapseCandidate>,
                        std::greater<CollapseCandidate>>
        heap;
    auto push_edge = [&](int u, int v) {
        if (u > v) std::swap(u, v);
        const Eigen::Matrix4d q = quadric[u] + quadric[v];
        const auto [target, cost] = optimal_point(u, v, q);
        heap.push({cost, u, v, static_cast<uint64_t>(version[u]) + version[v], target});
    };

    {
        std::unordered_set<uint64_t> seen;
        for (const Face& f : faces) {
            for (int k = 0; k < 3; ++k) {
                int a = f.v[k], b = f.v[(k + 1) % 3];
                if (a > b) std::swap(a, b);
                if (seen.insert((static_cast<uint64_t>(a) << 32) | static_cast<uint32_t>(b))
                        .second) {
                    push_edge(a, b);
                }
            }
        }
    }

    auto neighbor_vertices = [&](int u) {
        std::unordered_set<int> out;
        for (int f : faces_of[u]) {
            if (!faces[f].alive) continue;
            for (int k = 0; k < 3; ++k) {
                if (faces[f].v[k] != u) out.insert(faces[f].v[k]);
            }
        }
        return out;
    };

    size_t alive_faces = faces.size();
    while (alive_faces > target_faces && !heap.empty()) {
        const CollapseCandidate cand = heap.top();
        heap.pop();
        const int u = cand.u, v = cand.v;
        if (!vertex_alive[u] || !vertex_alive[v]) continue;
        if (cand.stamp != static_cast<uint64_t>(version[u]) + version[v]) continue;

        // faces on the collapsing edge and the link condition
        std::vector<int> shared;
        std::unordered_set<int> wing;  // third vertices of the shared faces
        for (int f : faces_of[u]) {
            if (!faces[f].alive) continue;
            const auto& fv = faces[f].v;
            if (std::find(fv.begin(), fv.end(), v) != fv.end()) {
                shared.push_back(f);
                for (int k = 0; k < 3; ++k) {
                    if (fv[k] != u && fv[k] != v) wing.insert(fv[k]);
                }
            }
        }
        if (shared.empty()) continue;

        const auto nu = neighbor_vertices(u);
        const auto nv_set = neighbor_vertices(v);
        bool link_ok = true;
        for (int w : nu) {
            if (w != v && nv_set.count(w) && !wing.count(w)) {
                link_ok = false;  // pinched neighborhood, collapse would fuse
                break;
            }
        }
        if (!link_ok) continue;

        // reject collapses that invert any surviving incident face
        bool flips = false;
        auto would_flip = [&](int f, int moved) {
            const auto& fv = faces[f].v;
            Eigen::Vector3d p[3], q[3];
            for (int k = 0; k < 3; ++k) {
                p[k] = pos[fv[k]];
                q[k] = fv[k] == moved ? cand.target : pos[fv[k]];
            }
            const Eigen::Vector3d before = (p[1] - p[0]).cross(p[2] - p[0]);
            const Eigen::Vector3d after = (q[1] - q[0]).cross(q[2] - q[0]);
            return before.dot(after) <= 0.0;
        };
        for (int side : {u, v}) {
            for (int f : faces_of[side]) {
                if (!faces[f].alive) continue;
                if (std::find(shared.begin(), shared.end(), f) != shared.end()) continue;
                if (would_flip(f, side)) {
                    flips = true;
                    break;
                }
            }
            if (flips) break;
        }
        if (flips) continue;

        // commit: v folds into u at the target position
        pos[u] = cand.target;
        quadric[u] += quadric[v];
        for (int f : shared) {
            faces[f].alive = false;
            --alive_faces;
            for (int k = 0; k < 3; ++k) faces_of[faces[f].v[k]].erase(f);
        }
        for (int f : std::vector<int>(faces_of[v].begin(), faces_of[v].end())) {
            if (!faces[f].alive) {
                faces_of[v].erase(f);
                continue;
            }
            for (int k = 0; k < 3; ++k) {
                if (faces[f].v[k] == v) faces[f].v[k] = u;
            }
            faces_of[u].insert(f);
        }
        faces_of[v].clear();
        vertex_alive[v] = false;
        ++version[u];
        ++version[v];

        for (int w : neighbor_vertices(u)) push_edge(u, w);
    }

    // compact the surviving mesh
    TriangleMesh out;
    std::vector<int> remap(nv, -1);
    for (const Face& f : faces) {
        if (!f.alive) continue;
        Eigen::Vector3i tri;
        for (int k = 0; k < 3; ++k) {
            int& id = remap[f.v[k]];
            if (id < 0) {
                id = static_cast<int>(out.vertices.size());
                out.vertices.push_back(pos[f.v[k]]);
            }
            tri[k] = id;
        }
        out.triangles.push_back(tri);
    }
    out.validate();
    return out;
}

void write_mesh(const TriangleMesh& mesh, const std::string& path, MeshFormat format) {
    mesh.validate();
    std::ofstream out(path, format == MeshFormat::ply ? std::ios::binary : std::ios::out);
    if (!out) {
        throw DataError("cannot open for writing: " + path);
    }

    if (format == MeshFormat::obj) {
        out << "# sparsegs mesh\n";
        char buf[128];
        for (const auto& v : mesh.vertices) {
            std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
            out << buf;
        }
        for (const auto& t : mesh.triangles) {
            out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
        }
    } else {
        out << "ply\nformat binary_little_endian 1.0\n"
            << "element vertex " << mesh.vertices.size() << "\n"
            << "property float x\nproperty float y\nproperty float z\n"
            << "element face " << mesh.triangles.size() << "\n"
            << "property list uchar int vertex_indices\nend_header\n";
        for (const auto& v : mesh.vertices) {
            const float f[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                                static_cast<float>(v.z())};
            out.write(reinterpret_cast<const char*>(f), sizeof(f));
        }
        for (const auto& t : mesh.triangles) {
            const uint8_t count = 3;
            const int32_t idx[3] = {t[0], t[1], t[2]};
            out.write(reinterpret_cast<const char*>(&count), 1);
            out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
        }
    }
    if (!out) {
        throw DataError("write failed: " + path);
    }
}

namespace {

TriangleMesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open: " + path);
    }
    TriangleMesh mesh;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Eigen::Vector3d v;
            ls >> v.x() >> v.y() >> v.z();
            if (ls.fail()) throw DataError(path + ": malformed vertex line");
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<long> ids;
            std::string tok;
            while (ls >> tok) {
                ids.push_back(std::strtol(tok.c_str(), nullptr, 10));
            }
            if (ids.size() != 3) throw DataError(path + ": only triangle faces supported");
            Eigen::Vector3i tri;
            for (int k = 0; k < 3; ++k) {
                long id = ids[k];
                if (id < 0) id = static_cast<long>(mesh.vertices.size()) + id + 1;
                tri[k] = static_cast<int>(id - 1);
            }
            mesh.triangles.push_back(tri);
        }
    }
    mesh.validate();
    return mesh;
}

TriangleMesh load_mesh_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open: " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != "ply") {
        throw DataError(path + ": not a PLY file");
    }
    size_t n_vertices = 0, n_faces = 0;
    std::string current;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") {
                throw DataError(path + ": unsupported PLY format");
            }
        } else if (tok == "element") {
            size_t count;
            ls >> current >> count;
            if (current == "vertex") {
                n_vertices = count;
            } else if (current == "face") {
                n_faces = count;
            } else {
                throw DataError(path + ": unexpected element " + current);
            }
        }
    }

    TriangleMesh mesh;
    mesh.vertices.resize(n_vertices);
    for (auto& v : mesh.vertices) {
        float f[3];
        in.read(reinterpret_cast<char*>(f), sizeof(f));
        v = {f[0], f[1], f[2]};
    }
    mesh.triangles.resize(n_faces);
    for (auto& t : mesh.triangles) {
        uint8_t count;
        in.read(reinterpret_cast<char*>(&count), 1);
        if (count != 3) throw DataError(path + ": only triangle faces supported");
        int32_t idx[3];
        in.read(reinterpret_cast<char*>(idx), sizeof(idx));
        t = {idx[0], idx[1], idx[2]};
    }
    if (!in) {
        throw DataError(path + ": truncated PLY body");
    }
    mesh.validate();
    return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "obj") return load_obj(path);
    if (ext == "ply") return load_mesh_ply(path);
    throw DataError(path + ": unknown mesh extension");
}

}  // namespace sgs
