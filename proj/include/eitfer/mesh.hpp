#pragma once
// Two-dimensional P1 triangle meshes with an ordered boundary loop, the
// 16-electrode layout placed on that loop, uniform refinement and the
// plain-text mesh file format.

#include "eitfer/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace eitfer {

using Point = Eigen::Vector2d;
using Triangle = std::array<int, 3>;
using Edge = std::array<int, 2>;

inline constexpr int kElectrodeCount = 16;

inline double signed_area(const Point &a, const Point &b, const Point &c) {
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

namespace detail {
inline std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
} // namespace detail

////////////////////////////////////////////////////////////////////////////////
// Mesh
//
// Immutable conforming triangulation of a simply connected domain. All
// invariants are checked in the constructor:
//  - every index is a valid node; every triangle is CCW with positive area
//  - interior edges are shared by exactly two oppositely oriented triangles,
//    boundary edges by one
//  - the boundary edges form one closed CCW cycle (boundary_loop), which
//    starts at the lowest-indexed boundary node
////////////////////////////////////////////////////////////////////////////////
class Mesh {
public:
    Mesh(std::vector<Point> nodes, std::vector<Triangle> triangles)
        : m_nodes(std::move(nodes)), m_triangles(std::move(triangles)) {
        validate_and_build();
    }

    const std::vector<Point> &nodes() const { return m_nodes; }
    const std::vector<Triangle> &triangles() const { return m_triangles; }
    const std::vector<int> &boundary_loop() const { return m_boundary_loop; }
    const std::vector<Edge> &edges() const { return m_edges; }

    int num_nodes() const { return static_cast<int>(m_nodes.size()); }
    int num_elements() const { return static_cast<int>(m_triangles.size()); }
    int num_edges() const { return static_cast<int>(m_edges.size()); }

    const Point &node(int i) const { return m_nodes[i]; }
    const Triangle &triangle(int k) const { return m_triangles[k]; }

    // Triangles adjacent to edge e; second entry is -1 on the boundary.
    const std::array<int, 2> &edge_triangles(int e) const { return m_edge_triangles[e]; }
    bool is_boundary_edge(int e) const { return m_edge_triangles[e][1] < 0; }

    std::optional<int> find_edge(int a, int b) const {
        auto it = m_edge_index.find(detail::edge_key(a, b));
        if (it == m_edge_index.end()) return std::nullopt;
        return it->second;
    }

    double area(int k) const {
        const auto &t = m_triangles[k];
        return signed_area(m_nodes[t[0]], m_nodes[t[1]], m_nodes[t[2]]);
    }

    Point centroid(int k) const {
        const auto &t = m_triangles[k];
        return (m_nodes[t[0]] + m_nodes[t[1]] + m_nodes[t[2]]) / 3.0;
    }

    // Constant gradients of the three P1 hat functions on element k, one per
    // column, in the triangle's local node order.
    Eigen::Matrix<double, 2, 3> shape_gradients(int k) const {
        const auto &t = m_triangles[k];
        const Point &a = m_nodes[t[0]], &b = m_nodes[t[1]], &c = m_nodes[t[2]];
        const double twice_area = 2.0 * signed_area(a, b, c);
        Eigen::Matrix<double, 2, 3> g;
        g.col(0) << (b.y() - c.y()), (c.x() - b.x());
        g.col(1) << (c.y() - a.y()), (a.x() - c.x());
        g.col(2) << (a.y() - b.y()), (b.x() - a.x());
        return g / twice_area;
    }

    double total_area() const {
        double s = 0;
        for (int k = 0; k < num_elements(); ++k) s += area(k);
        return s;
    }

    // Shoelace area of the boundary polygon.
    double boundary_polygon_area() const {
        double s = 0;
        const auto n = m_boundary_loop.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point &p = m_nodes[m_boundary_loop[i]];
            const Point &q = m_nodes[m_boundary_loop[(i + 1) % n]];
            s += p.x() * q.y() - q.x() * p.y();
        }
        return 0.5 * s;
    }

    double boundary_length() const {
        double s = 0;
        const auto n = m_boundary_loop.size();
        for (std::size_t i = 0; i < n; ++i)
            s += (m_nodes[m_boundary_loop[(i + 1) % n]] - m_nodes[m_boundary_loop[i]]).norm();
        return s;
    }

    // Diameter of the node cloud's bounding box diagonal; used as the length
    // scale for tolerances.
    double bounding_diagonal() const {
        Point lo = m_nodes.front(), hi = m_nodes.front();
        for (const auto &p : m_nodes) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        return (hi - lo).norm();
    }

    bool is_boundary_node(int i) const { return m_boundary_position[i] >= 0; }
    // Position of node i in boundary_loop, or -1 for interior nodes.
    int boundary_position(int i) const { return m_boundary_position[i]; }

private:
    void validate_and_build() {
        const int nn = num_nodes();
        if (nn < 3) throw TopologyError("mesh needs at least 3 nodes");
        if (m_triangles.empty()) throw TopologyError("mesh has no triangles");
        for (const auto &p : m_nodes)
            if (!std::isfinite(p.x()) || !std::isfinite(p.y()))
                throw ParseError("non-finite node coordinate");

        const double scale = bounding_diagonal();
        const double min_area = 1e-14 * scale * scale;
        for (int k = 0; k < num_elements(); ++k) {
            const auto &t = m_triangles[k];
            for (int v : t)
                if (v < 0 || v >= nn)
                    throw IndexError("triangle " + std::to_string(k) + " references node " +
                                     std::to_string(v) + " outside [0, " + std::to_string(nn) + ")");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw TopologyError("triangle " + std::to_string(k) + " repeats a node");
            const double a = area(k);
            if (!(a > min_area))
                throw TopologyError("triangle " + std::to_string(k) +
                                    (std::abs(a) <= min_area ? " has zero area" : " is clockwise"));
        }

        // Directed-edge bookkeeping: each undirected edge may be traversed at
        // most once in each direction.
        m_edge_index.reserve(3 * m_triangles.size());
        std::vector<std::array<int, 2>> direction_count; // [a<b traversals, b<a traversals]
        for (int k = 0; k < num_elements(); ++k) {
            const auto &t = m_triangles[k];
            for (int l = 0; l < 3; ++l) {
                const int a = t[l], b = t[(l + 1) % 3];
                auto [it, inserted] = m_edge_index.try_emplace(detail::edge_key(a, b), num_edges());
                if (inserted) {
                    m_edges.push_back({std::min(a, b), std::max(a, b)});
                    m_edge_triangles.push_back({k, -1});
                    direction_count.push_back({0, 0});
                } else {
                    auto &adj = m_edge_triangles[it->second];
                    if (adj[1] >= 0)
                        throw TopologyError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                            ") is shared by more than two triangles");
                    adj[1] = k;
                }
                auto &dc = direction_count[it->second];
                if (++dc[a < b ? 0 : 1] > 1)
                    throw TopologyError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                        ") has inconsistently oriented neighbours");
            }
        }

        // Boundary edges keep their triangle's orientation, so following
        // them head-to-tail walks the boundary counterclockwise.
        std::vector<int> next(nn, -1);
        int boundary_edges = 0;
        int start = nn;
        for (int e = 0; e < num_edges(); ++e) {
            if (!is_boundary_edge(e)) continue;
            ++boundary_edges;
            const auto &t = m_triangles[m_edge_triangles[e][0]];
            for (int l = 0; l < 3; ++l) {
                const int a = t[l], b = t[(l + 1) % 3];
                if (detail::edge_key(a, b) == detail::edge_key(m_edges[e][0], m_edges[e][1])) {
                    if (next[a] >= 0)
                        throw TopologyError("boundary is not a simple curve at node " + std::to_string(a));
                    next[a] = b;
                    start = std::min(start, a);
                }
            }
        }
        if (boundary_edges < 3) throw TopologyError("mesh has no closed boundary");
        m_boundary_position.assign(nn, -1);
        int cur = start;
        do {
            if (m_boundary_position[cur] >= 0)
                throw TopologyError("boundary revisits node " + std::to_string(cur));
            m_boundary_position[cur] = static_cast<int>(m_boundary_loop.size());
            m_boundary_loop.push_back(cur);
            cur = next[cur];
            if (cur < 0) throw TopologyError("boundary is not closed");
        } while (cur != start);
        if (static_cast<int>(m_boundary_loop.size()) != boundary_edges)
            throw TopologyError("boundary consists of more than one loop");
    }

    std::vector<Point> m_nodes;
    std::vector<Triangle> m_triangles;
    std::vector<Edge> m_edges;
    std::vector<std::array<int, 2>> m_edge_triangles;
    std::unordered_map<std::uint64_t, int> m_edge_index;
    std::vector<int> m_boundary_loop;
    std::vector<int> m_boundary_position;
};

////////////////////////////////////////////////////////////////////////////////
// ElectrodeLayout: 16 disjoint, contiguous, CCW-ordered runs of boundary
// nodes. Electrode indices are 0-based here (E_1 is electrode 0); the
// successor of the last electrode is electrode 0.
////////////////////////////////////////////////////////////////////////////////
class ElectrodeLayout {
public:
    ElectrodeLayout(const Mesh &mesh, std::vector<std::vector<int>> groups)
        : m_groups(std::move(groups)) {
        validate(mesh);
    }

    const std::vector<std::vector<int>> &groups() const { return m_groups; }
    const std::vector<int> &electrode(int i) const { return m_groups[i]; }
    int total_nodes() const {
        int n = 0;
        for (const auto &g : m_groups) n += static_cast<int>(g.size());
        return n;
    }

    // Per-node electrode index, -1 off the electrodes.
    std::vector<int> node_owner(int num_nodes) const {
        std::vector<int> owner(num_nodes, -1);
        for (int e = 0; e < kElectrodeCount; ++e)
            for (int v : m_groups[e]) owner[v] = e;
        return owner;
    }

    // Throws unless the layout is consistent with mesh.
    void validate(const Mesh &mesh) const {
        if (static_cast<int>(m_groups.size()) != kElectrodeCount)
            throw TopologyError("electrode layout needs exactly 16 groups, got " +
                                std::to_string(m_groups.size()));
        const int nb = static_cast<int>(mesh.boundary_loop().size());
        std::vector<int> owner(mesh.num_nodes(), -1);
        std::vector<int> first_position(kElectrodeCount);
        for (int e = 0; e < kElectrodeCount; ++e) {
            const auto &g = m_groups[e];
            if (g.size() < 2)
                throw TopologyError("electrode " + std::to_string(e + 1) + " has fewer than 2 nodes");
            for (std::size_t q = 0; q < g.size(); ++q) {
                const int v = g[q];
                if (v < 0 || v >= mesh.num_nodes())
                    throw IndexError("electrode node " + std::to_string(v) + " out of range");
                if (!mesh.is_boundary_node(v))
                    throw TopologyError("electrode node " + std::to_string(v) + " is not on the boundary");
                if (owner[v] >= 0)
                    throw TopologyError("electrodes " + std::to_string(owner[v] + 1) + " and " +
                                        std::to_string(e + 1) + " overlap");
                owner[v] = e;
                if (q > 0 && mesh.boundary_position(v) != (mesh.boundary_position(g[q - 1]) + 1) % nb)
                    throw TopologyError("electrode " + std::to_string(e + 1) +
                                        " is not a contiguous CCW run of boundary nodes");
            }
            first_position[e] = mesh.boundary_position(g.front());
        }
        // Walking CCW from electrode 1 must meet the electrodes in label order.
        std::vector<int> seen;
        for (int s = 0; s < nb; ++s) {
            const int v = mesh.boundary_loop()[(first_position[0] + s) % nb];
            if (owner[v] >= 0 && (seen.empty() || seen.back() != owner[v])) seen.push_back(owner[v]);
        }
        if (seen.size() != static_cast<std::size_t>(kElectrodeCount))
            throw TopologyError("electrodes are not contiguous runs");
        for (int e = 0; e < kElectrodeCount; ++e)
            if (seen[e] != e) throw TopologyError("electrodes are not in counterclockwise order");
    }

private:
    std::vector<std::vector<int>> m_groups;
};

// Place 16 equally spaced electrodes on the boundary loop given as node
// indices. Electrode 1 is centred on the boundary node with the largest x
// (ties: smallest y), so the result does not depend on where the loop
// starts. Each electrode takes the boundary nodes within coverage/32 of the
// perimeter of its centre.
inline std::vector<std::vector<int>> assign_electrode_groups(std::span<const Point> nodes,
                                                             std::span<const int> loop,
                                                             double coverage) {
    if (!(coverage > 0.0 && coverage < 1.0))
        throw InvalidArgument("electrode coverage must lie in (0, 1)");
    const int nb = static_cast<int>(loop.size());
    if (nb < 2 * kElectrodeCount)
        throw InvalidArgument("boundary has " + std::to_string(nb) +
                              " nodes; 16 electrodes need at least 32");

    int anchor = 0;
    for (int s = 1; s < nb; ++s) {
        const Point &p = nodes[loop[s]], &a = nodes[loop[anchor]];
        if (p.x() > a.x() || (p.x() == a.x() && p.y() < a.y())) anchor = s;
    }
    std::vector<double> arclength(nb + 1, 0.0);
    for (int s = 0; s < nb; ++s)
        arclength[s + 1] = arclength[s] + (nodes[loop[(anchor + s + 1) % nb]] - nodes[loop[(anchor + s) % nb]]).norm();
    const double perimeter = arclength[nb];
    const double pitch = perimeter / kElectrodeCount;
    const double half_width = 0.5 * coverage * pitch;
    const double tol = 1e-12 * perimeter;

    std::vector<std::vector<int>> groups(kElectrodeCount);
    for (int e = 0; e < kElectrodeCount; ++e) {
        const double centre = e * pitch;
        // Signed cyclic distance of each boundary node from the centre; the
        // arc is shorter than half the perimeter, so sorting by it yields
        // the CCW run.
        std::vector<std::pair<double, int>> inside;
        for (int s = 0; s < nb; ++s) {
            double d = arclength[s] - centre;
            if (d > 0.5 * perimeter) d -= perimeter;
            if (d < -0.5 * perimeter) d += perimeter;
            if (std::abs(d) <= half_width + tol) inside.emplace_back(d, loop[(anchor + s) % nb]);
        }
        std::sort(inside.begin(), inside.end());
        for (const auto &[d, v] : inside) groups[e].push_back(v);
        if (groups[e].size() < 2)
            throw InvalidArgument("boundary too coarse: electrode " + std::to_string(e + 1) +
                                  " would cover fewer than 2 nodes");
    }
    return groups;
}

inline ElectrodeLayout assign_electrodes(const Mesh &mesh, double coverage) {
    return ElectrodeLayout(mesh, assign_electrode_groups(mesh.nodes(), mesh.boundary_loop(), coverage));
}

// Elements owning at least one boundary edge, ascending.
inline std::vector<int> boundary_elements(const Mesh &mesh) {
    std::vector<int> out;
    for (int e = 0; e < mesh.num_edges(); ++e)
        if (mesh.is_boundary_edge(e)) out.push_back(mesh.edge_triangles(e)[0]);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

////////////////////////////////////////////////////////////////////////////////
// Uniform refinement
////////////////////////////////////////////////////////////////////////////////
struct RefinedMesh {
    Mesh mesh;
    std::vector<int> parent;        // fine element -> coarse element
    std::vector<int> edge_midpoint; // coarse edge -> fine node
    int coarse_nodes = 0;

    // Coarse electrode nodes keep their indices; the midpoints of edges
    // between consecutive electrode nodes join the electrode.
    ElectrodeLayout transfer(const Mesh &coarse, const ElectrodeLayout &layout) const {
        std::vector<std::vector<int>> groups;
        for (const auto &g : layout.groups()) {
            std::vector<int> fine;
            for (std::size_t q = 0; q < g.size(); ++q) {
                fine.push_back(g[q]);
                if (q + 1 < g.size()) {
                    auto e = coarse.find_edge(g[q], g[q + 1]);
                    if (!e) throw TopologyError("electrode nodes are not joined by an edge");
                    fine.push_back(edge_midpoint[*e]);
                }
            }
            groups.push_back(std::move(fine));
        }
        return ElectrodeLayout(mesh, std::move(groups));
    }

    // Area-weighted mean of fine element values over each coarse parent.
    Eigen::VectorXd average_to_coarse(const Eigen::VectorXd &fine, int coarse_elements) const {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(coarse_elements);
        Eigen::VectorXd weight = Eigen::VectorXd::Zero(coarse_elements);
        for (int k = 0; k < mesh.num_elements(); ++k) {
            sum[parent[k]] += mesh.area(k) * fine[k];
            weight[parent[k]] += mesh.area(k);
        }
        return sum.cwiseQuotient(weight);
    }
};

// Split every triangle into four through its edge midpoints. Coarse nodes
// keep their indices; the midpoint of coarse edge e becomes node
// num_nodes + e. Children of coarse triangle t are 4t .. 4t+3.
inline RefinedMesh refine(const Mesh &mesh) {
    const int nn = mesh.num_nodes();
    std::vector<Point> nodes = mesh.nodes();
    std::vector<int> midpoint(mesh.num_edges());
    for (int e = 0; e < mesh.num_edges(); ++e) {
        const auto &ed = mesh.edges()[e];
        midpoint[e] = nn + e;
        nodes.push_back(0.5 * (mesh.node(ed[0]) + mesh.node(ed[1])));
    }
    std::vector<Triangle> tris;
    std::vector<int> parent;
    tris.reserve(4 * mesh.num_elements());
    parent.reserve(4 * mesh.num_elements());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto &t = mesh.triangle(k);
        const int ab = midpoint[*mesh.find_edge(t[0], t[1])];
        const int bc = midpoint[*mesh.find_edge(t[1], t[2])];
        const int ca = midpoint[*mesh.find_edge(t[2], t[0])];
        tris.push_back({t[0], ab, ca});
        tris.push_back({ab, t[1], bc});
        tris.push_back({ca, bc, t[2]});
        tris.push_back({ab, bc, ca});
        parent.insert(parent.end(), 4, k);
    }
    return RefinedMesh{Mesh(std::move(nodes), std::move(tris)), std::move(parent), std::move(midpoint), nn};
}

////////////////////////////////////////////////////////////////////////////////
// Disk generator: concentric rings of nodes zipped into a triangulation, then
// edge flips until every interior edge is locally Delaunay.
////////////////////////////////////////////////////////////////////////////////
namespace detail {

// Positive when d lies strictly inside the circumcircle of CCW (a, b, c).
inline double incircle(const Point &a, const Point &b, const Point &c, const Point &d) {
    const double adx = a.x() - d.x(), ady = a.y() - d.y();
    const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
    const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
    const double ad = adx * adx + ady * ady, bd = bdx * bdx + bdy * bdy, cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

// Flip non-Delaunay interior edges until none remain. Each pass visits the
// edges in ascending (min, max) node order and flips at most one edge per
// triangle; near-cocircular quads (within a relative tolerance) count as
// Delaunay and keep their current diagonal.
inline void delaunay_flip(const std::vector<Point> &nodes, std::vector<Triangle> &tris) {
    for (int pass = 0; pass < 10000; ++pass) {
        std::vector<std::pair<std::uint64_t, std::array<int, 2>>> adj;
        {
            std::unordered_map<std::uint64_t, std::array<int, 2>> map;
            for (int k = 0; k < static_cast<int>(tris.size()); ++k)
                for (int l = 0; l < 3; ++l) {
                    auto [it, ins] = map.try_emplace(edge_key(tris[k][l], tris[k][(l + 1) % 3]),
                                                     std::array<int, 2>{k, -1});
                    if (!ins) it->second[1] = k;
                }
            adj.assign(map.begin(), map.end());
        }
        std::sort(adj.begin(), adj.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
        std::vector<char> touched(tris.size(), 0);
        int flips = 0;
        for (const auto &[key, tt] : adj) {
            if (tt[1] < 0 || touched[tt[0]] || touched[tt[1]]) continue;
            const int p = static_cast<int>(key >> 32), q = static_cast<int>(key & 0xffffffffu);
            auto opposite = [&](const Triangle &t) {
                for (int v : t)
                    if (v != p && v != q) return v;
                return -1;
            };
            // Orient so that t1 contains p->q.
            int t1 = tt[0], t2 = tt[1];
            int pp = p, qq = q;
            {
                const auto &t = tris[t1];
                bool forward = false;
                for (int l = 0; l < 3; ++l)
                    if (t[l] == p && t[(l + 1) % 3] == q) forward = true;
                if (!forward) std::swap(pp, qq);
            }
            const int r1 = opposite(tris[t1]), r2 = opposite(tris[t2]);
            const Point &P = nodes[pp], &Q = nodes[qq], &R1 = nodes[r1], &R2 = nodes[r2];
            const double len2 = (P - Q).squaredNorm();
            if (incircle(P, Q, R1, R2) <= 1e-10 * len2 * len2) continue;
            if (signed_area(P, R2, R1) <= 0 || signed_area(R2, Q, R1) <= 0) continue;
            tris[t1] = {pp, r2, r1};
            tris[t2] = {r2, qq, r1};
            touched[t1] = touched[t2] = 1;
            ++flips;
        }
        if (flips == 0) return;
    }
    throw ComputeError("Delaunay edge flipping did not converge");
}

} // namespace detail

// Disk of the given radius centred at the origin. Ring r (r = 0..n) sits at
// radius r * radius / n with n = ceil(radius / target_edge_length); its node
// count is about circumference / target_edge_length (at least 6), rounded up
// to a multiple of ring_multiple. The boundary ring is always a multiple of
// 16 and starts at angle 0; inner rings alternate a half-step angular offset.
inline Mesh generate_disk_mesh(double radius, double target_edge_length, int ring_multiple = 1) {
    if (!(radius > 0) || !(target_edge_length > 0))
        throw InvalidArgument("disk radius and target edge length must be positive");
    if (!(target_edge_length < radius))
        throw InvalidArgument("target edge length must be smaller than the radius");
    if (ring_multiple < 1) throw InvalidArgument("ring multiple must be positive");

    const int rings = static_cast<int>(std::ceil(radius / target_edge_length - 1e-9));
    auto round_up = [](int v, int m) { return ((v + m - 1) / m) * m; };
    std::vector<int> count(rings + 1), first(rings + 1), half_offset(rings + 1);
    std::vector<Point> nodes{Point(0, 0)};
    count[0] = 1;
    first[0] = 0;
    for (int r = 1; r <= rings; ++r) {
        const double rho = radius * r / rings;
        int n = std::max(6, static_cast<int>(std::ceil(2 * std::numbers::pi * rho / target_edge_length - 1e-9)));
        n = round_up(n, r == rings ? std::lcm(ring_multiple, kElectrodeCount) : ring_multiple);
        count[r] = n;
        first[r] = static_cast<int>(nodes.size());
        half_offset[r] = (rings - r) % 2;
        for (int k = 0; k < n; ++k) {
            const double theta = 2 * std::numbers::pi * (k + 0.5 * half_offset[r]) / n;
            nodes.emplace_back(rho * std::cos(theta), rho * std::sin(theta));
        }
    }

    std::vector<Triangle> tris;
    for (int k = 0; k < count[1]; ++k)
        tris.push_back({0, first[1] + k, first[1] + (k + 1) % count[1]});
    for (int r = 1; r < rings; ++r) {
        const int na = count[r], nb = count[r + 1];
        const int sa = half_offset[r], sb = half_offset[r + 1];
        auto A = [&](int i) { return first[r] + i % na; };
        auto B = [&](int j) { return first[r + 1] + j % nb; };
        // Angles as exact fractions of a turn: (2i + sa) / (2 na).
        auto a_before_b = [&](int i, int j) {
            return static_cast<long long>(2 * i + sa) * nb <= static_cast<long long>(2 * j + sb) * na;
        };
        int i = 0, j = 0;
        while (i < na || j < nb) {
            if (j == nb || (i < na && a_before_b(i + 1, j + 1))) {
                tris.push_back({A(i), B(j), A(i + 1)});
                ++i;
            } else {
                tris.push_back({A(i), B(j), B(j + 1)});
                ++j;
            }
        }
    }
    detail::delaunay_flip(nodes, tris);
    return Mesh(std::move(nodes), std::move(tris));
}

////////////////////////////////////////////////////////////////////////////////
// Text format
//   N <count>      then "<x> <y>" per node
//   T <count>      then "<i> <j> <k>" per triangle (0-based, CCW)
//   E <count>      then "<n1> <n2> ..." per electrode (optional)
// '#' starts a comment line. Floats carry 17 significant digits.
////////////////////////////////////////////////////////////////////////////////
inline std::string mesh_to_string(const Mesh &mesh, const ElectrodeLayout *layout = nullptr) {
    std::string out;
    out.reserve(64 * static_cast<std::size_t>(mesh.num_nodes() + mesh.num_elements()));
    out += "N " + std::to_string(mesh.num_nodes()) + "\n";
    for (const auto &p : mesh.nodes()) out += detail::fmt_double(p.x()) + " " + detail::fmt_double(p.y()) + "\n";
    out += "T " + std::to_string(mesh.num_elements()) + "\n";
    for (const auto &t : mesh.triangles())
        out += std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
    if (layout) {
        out += "E " + std::to_string(layout->groups().size()) + "\n";
        for (const auto &g : layout->groups()) {
            for (std::size_t q = 0; q < g.size(); ++q) out += (q ? " " : "") + std::to_string(g[q]);
            out += "\n";
        }
    }
    return out;
}

inline void save_mesh(const std::string &path, const Mesh &mesh, const ElectrodeLayout *layout = nullptr) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << mesh_to_string(mesh, layout);
    if (!f) throw IoError("failed writing " + path);
}

struct MeshFile {
    Mesh mesh;
    std::optional<ElectrodeLayout> electrodes;
};

inline MeshFile parse_mesh(std::istream &in, const std::string &name = "<mesh>") {
    std::vector<Point> nodes;
    std::vector<Triangle> tris;
    std::vector<std::vector<int>> groups;
    bool have_n = false, have_t = false, have_e = false;

    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string &what) {
        throw ParseError(name + ":" + std::to_string(lineno) + ": " + what);
    };
    auto next_record = [&](std::istringstream &ss) -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            const auto pos = line.find_first_not_of(" \t\r");
            if (pos == std::string::npos || line[pos] == '#') continue;
            ss.clear();
            ss.str(line);
            return true;
        }
        return false;
    };
    auto expect_end = [&](std::istringstream &ss) {
        std::string extra;
        if (ss >> extra) fail("unexpected trailing token '" + extra + "'");
    };

    std::istringstream ss;
    while (next_record(ss)) {
        std::string tag;
        long long count = -1;
        ss >> tag >> count;
        if (!ss || count < 0) fail("expected section header 'N|T|E <count>'");
        expect_end(ss);
        if (tag == "N") {
            if (have_n) fail("duplicate N section");
            have_n = true;
            for (long long c = 0; c < count; ++c) {
                if (!next_record(ss)) fail("file ends inside N section");
                double x, y;
                if (!(ss >> x >> y)) fail("malformed node line");
                expect_end(ss);
                nodes.emplace_back(x, y);
            }
        } else if (tag == "T") {
            if (have_t) fail("duplicate T section");
            have_t = true;
            for (long long c = 0; c < count; ++c) {
                if (!next_record(ss)) fail("file ends inside T section");
                long long a, b, d;
                if (!(ss >> a >> b >> d)) fail("malformed triangle line");
                expect_end(ss);
                for (long long v : {a, b, d})
                    if (v < 0 || v >= static_cast<long long>(nodes.size()))
                        throw IndexError(name + ":" + std::to_string(lineno) + ": node index " +
                                         std::to_string(v) + " out of range");
                tris.push_back({static_cast<int>(a), static_cast<int>(b), static_cast<int>(d)});
            }
        } else if (tag == "E") {
            if (have_e) fail("duplicate E section");
            have_e = true;
            for (long long c = 0; c < count; ++c) {
                if (!next_record(ss)) fail("file ends inside E section");
                std::vector<int> g;
                long long v;
                while (ss >> v) g.push_back(static_cast<int>(v));
                if (!ss.eof()) fail("malformed electrode line");
                groups.push_back(std::move(g));
            }
        } else {
            fail("unknown section '" + tag + "'");
        }
    }
    if (!have_n || !have_t) throw ParseError(name + ": missing N or T section");
    Mesh mesh(std::move(nodes), std::move(tris));
    std::optional<ElectrodeLayout> layout;
    if (have_e) layout.emplace(mesh, std::move(groups));
    return MeshFile{std::move(mesh), std::move(layout)};
}

inline MeshFile load_mesh(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open mesh file " + path);
    return parse_mesh(f, path);
}

} // namespace eitfer
