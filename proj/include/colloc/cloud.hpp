#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "colloc/errors.hpp"
#include "colloc/multi_index.hpp"

namespace colloc {

/// Immutable set of collocation points with per-point stencil radii.
struct PointCloud {
    int dim = 0;
    Matrix positions; // N x dim
    Vector radii;     // N

    int size() const { return static_cast<int>(positions.rows()); }

    void validate() const {
        if (dim < 1 || dim > 3) throw InvalidParams("cloud dimension must be 1, 2 or 3");
        if (positions.rows() < 1) throw InvalidParams("cloud must contain at least one point");
        if (positions.cols() != dim) throw InvalidParams("position width does not match dimension");
        if (radii.size() != positions.rows()) throw InvalidParams("radii size mismatch");
        if (!positions.allFinite()) throw InvalidParams("non-finite point position");
        if ((radii.array() <= 0.0).any()) throw InvalidParams("stencil radii must be positive");
    }
};

/// Stencil of one point: every member j satisfies |x_j - x_i| < h_i, the
/// center included, member order ascending by global index.
struct Neighborhood {
    int center = -1;
    std::vector<int> members;
    Matrix offsets; // N_i x dim, row k = x_{members[k]} - x_center
    double radius = 0.0;

    int count() const { return static_cast<int>(members.size()); }

    int member_position(int global_index) const {
        auto it = std::lower_bound(members.begin(), members.end(), global_index);
        if (it == members.end() || *it != global_index) return -1;
        return static_cast<int>(it - members.begin());
    }
};

/// Per-point spacing estimate dx_i = (V_n(h_i)/N_i)^(1/n) and derived ratios.
struct ResolutionReport {
    Vector dx;
    Vector ratio;         // h_i / dx_i
    Vector est_neighbors; // V_n(h_i/dx_i)
};

inline double ball_volume(int dim, double r) {
    switch (dim) {
        case 1: return 2.0 * r;
        case 2: return std::numbers::pi * r * r;
        case 3: return 4.0 / 3.0 * std::numbers::pi * r * r * r;
        default: throw InvalidParams("unsupported dimension");
    }
}

/// Radius choice helper: h_i = ratio * nominal spacing.
inline Vector radii_for_ratio(int n_points, double spacing, double ratio) {
    return Vector::Constant(n_points, ratio * spacing);
}

namespace detail {

inline Neighborhood finish_neighborhood(const PointCloud& cloud, int i, std::vector<int>&& members) {
    std::sort(members.begin(), members.end());
    Neighborhood nb;
    nb.center = i;
    nb.radius = cloud.radii[i];
    nb.members = std::move(members);
    nb.offsets.resize(nb.count(), cloud.dim);
    for (int k = 0; k < nb.count(); ++k)
        nb.offsets.row(k) = cloud.positions.row(nb.members[static_cast<std::size_t>(k)]) -
                            cloud.positions.row(i);
    return nb;
}

} // namespace detail

/// Fixed-radius neighbor search through a uniform cell grid with cell size
/// max_i h_i, so every candidate lies in the 3^n adjacent cells. Ties at
/// exactly h_i are excluded (strict inequality).
inline std::vector<Neighborhood> build_neighborhoods(const PointCloud& cloud) {
    cloud.validate();
    const int n = cloud.size();
    const int dim = cloud.dim;
    const double cell = cloud.radii.maxCoeff();

    Eigen::VectorXd lo = cloud.positions.colwise().minCoeff();
    std::array<int, 3> grid{1, 1, 1};
    for (int d = 0; d < dim; ++d) {
        const double extent = cloud.positions.col(d).maxCoeff() - lo[d];
        grid[static_cast<std::size_t>(d)] = std::max(1, static_cast<int>(extent / cell) + 1);
    }
    auto cell_of = [&](int i) {
        std::array<int, 3> c{0, 0, 0};
        for (int d = 0; d < dim; ++d) {
            int v = static_cast<int>((cloud.positions(i, d) - lo[d]) / cell);
            c[static_cast<std::size_t>(d)] =
                std::clamp(v, 0, grid[static_cast<std::size_t>(d)] - 1);
        }
        return c;
    };
    auto flat = [&](const std::array<int, 3>& c) {
        return (c[2] * grid[1] + c[1]) * grid[0] + c[0];
    };

    std::vector<std::vector<int>> bins(static_cast<std::size_t>(grid[0]) * grid[1] * grid[2]);
    for (int i = 0; i < n; ++i) bins[static_cast<std::size_t>(flat(cell_of(i)))].push_back(i);

    std::vector<Neighborhood> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double h = cloud.radii[i];
        const double h2 = h * h;
        const auto c = cell_of(i);
        std::vector<int> members;
        std::array<int, 3> d{0, 0, 0};
        const int z0 = (dim > 2) ? -1 : 0, z1 = (dim > 2) ? 1 : 0;
        const int y0 = (dim > 1) ? -1 : 0, y1 = (dim > 1) ? 1 : 0;
        for (d[2] = z0; d[2] <= z1; ++d[2])
            for (d[1] = y0; d[1] <= y1; ++d[1])
                for (d[0] = -1; d[0] <= 1; ++d[0]) {
                    std::array<int, 3> cc{c[0] + d[0], c[1] + d[1], c[2] + d[2]};
                    bool inside = true;
                    for (int k = 0; k < dim; ++k)
                        inside = inside && cc[static_cast<std::size_t>(k)] >= 0 &&
                                 cc[static_cast<std::size_t>(k)] < grid[static_cast<std::size_t>(k)];
                    if (!inside) continue;
                    for (int j : bins[static_cast<std::size_t>(flat(cc))]) {
                        const double r2 =
                            (cloud.positions.row(j) - cloud.positions.row(i)).squaredNorm();
                        if (r2 < h2) members.push_back(j);
                    }
                }
        out.push_back(detail::finish_neighborhood(cloud, i, std::move(members)));
    }
    return out;
}

inline ResolutionReport resolution_metrics(const PointCloud& cloud,
                                           const std::vector<Neighborhood>& nbhds) {
    ResolutionReport rep;
    const int n = cloud.size();
    rep.dx.resize(n);
    rep.ratio.resize(n);
    rep.est_neighbors.resize(n);
    for (int i = 0; i < n; ++i) {
        const int ni = nbhds[static_cast<std::size_t>(i)].count();
        if (ni == 0) {
            rep.dx[i] = rep.ratio[i] = rep.est_neighbors[i] =
                std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double h = cloud.radii[i];
        rep.dx[i] = std::pow(ball_volume(cloud.dim, h) / ni, 1.0 / cloud.dim);
        rep.ratio[i] = h / rep.dx[i];
        rep.est_neighbors[i] = ball_volume(cloud.dim, rep.ratio[i]);
    }
    return rep;
}

struct UnisolvencyResult {
    bool unisolvent = false;
    int rank = 0;
};

/// Numerical-rank test of the N_i x p monomial matrix at tolerance
/// p * eps * sigma_max.
inline UnisolvencyResult check_unisolvency(const Neighborhood& nbhd, int order,
                                           bool include_zeroth) {
    if (nbhd.count() == 0) throw InvalidParams("unisolvency check on an empty neighborhood");
    const int dim = static_cast<int>(nbhd.offsets.cols());
    MultiIndexSet set(dim, order, include_zeroth);
    Matrix X(nbhd.count(), set.p());
    for (int k = 0; k < nbhd.count(); ++k)
        X.row(k) = monomial_vector(nbhd.offsets.row(k).transpose(), set).transpose();

    Eigen::JacobiSVD<Matrix> svd(X);
    const auto& sv = svd.singularValues();
    const double tol = set.p() * std::numeric_limits<double>::epsilon() * sv[0];
    int rank = 0;
    for (int k = 0; k < sv.size(); ++k)
        if (sv[k] > tol) ++rank;
    return {rank == set.p(), rank};
}

/// Plain-text cloud reader: one point per line, whitespace-separated
/// coordinates, optional trailing h column, '#' starts a comment line.
inline PointCloud read_cloud(std::istream& in, int dim, double default_h = 0.0) {
    std::vector<double> coords;
    std::vector<double> hs;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::vector<double> vals;
        const char* ptr = line.c_str();
        char* end = nullptr;
        for (double v = std::strtod(ptr, &end); end != ptr; v = std::strtod(ptr, &end)) {
            vals.push_back(v);
            ptr = end;
        }
        if (static_cast<int>(vals.size()) == dim) {
            if (default_h <= 0.0)
                throw InvalidParams("cloud file has no h column and no default radius was given");
            hs.push_back(default_h);
        } else if (static_cast<int>(vals.size()) == dim + 1) {
            hs.push_back(vals.back());
            vals.pop_back();
        } else {
            throw InvalidParams("cloud file line has wrong number of columns: '" + line + "'");
        }
        coords.insert(coords.end(), vals.begin(), vals.end());
    }
    const int n = static_cast<int>(hs.size());
    PointCloud cloud;
    cloud.dim = dim;
    cloud.positions.resize(n, dim);
    cloud.radii.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < dim; ++d)
            cloud.positions(i, d) = coords[static_cast<std::size_t>(i * dim + d)];
        cloud.radii[i] = hs[static_cast<std::size_t>(i)];
    }
    cloud.validate();
    return cloud;
}

} // namespace colloc
