#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "colloc/assembly.hpp"
#include "colloc/methods.hpp"

namespace colloc {

/// Deterministic random stream: std::mt19937_64 (bit-exact across platforms
/// by specification) with an explicit 53-bit mapping to doubles, so output
/// never depends on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

struct GeneratedCloud {
    PointCloud cloud;
    std::vector<std::uint8_t> boundary; // lattice-face indicator where defined
};

/// Default resolution ratio h/spacing giving a comfortable margin over the
/// unisolvency count for the requested order.
inline double default_ratio(int dim, int order) {
    const MultiIndexSet set(dim, order, true);
    const double p = set.p();
    switch (dim) {
        case 1: return 0.62 * (p + 1.0) + 0.8;
        case 2: return std::sqrt(1.9 * p / std::numbers::pi) + 0.45;
        default: return std::cbrt(1.9 * p * 3.0 / (4.0 * std::numbers::pi)) + 0.45;
    }
}

inline GeneratedCloud regular_grid(int dim, double spacing, double ratio) {
    const int per_axis = static_cast<int>(std::lround(1.0 / spacing)) + 1;
    GeneratedCloud out;
    out.cloud.dim = dim;
    const int n = static_cast<int>(std::pow(per_axis, dim));
    out.cloud.positions.resize(n, dim);
    out.boundary.assign(static_cast<std::size_t>(n), 0);
    std::array<int, 3> idx{0, 0, 0};
    for (int i = 0; i < n; ++i) {
        bool face = false;
        for (int d = 0; d < dim; ++d) {
            out.cloud.positions(i, d) = idx[static_cast<std::size_t>(d)] * spacing;
            face = face || idx[static_cast<std::size_t>(d)] == 0 ||
                   idx[static_cast<std::size_t>(d)] == per_axis - 1;
        }
        out.boundary[static_cast<std::size_t>(i)] = face ? 1 : 0;
        for (int d = 0; d < dim; ++d) {
            if (++idx[static_cast<std::size_t>(d)] < per_axis) break;
            idx[static_cast<std::size_t>(d)] = 0;
        }
    }
    out.cloud.radii = radii_for_ratio(n, spacing, ratio);
    return out;
}

inline GeneratedCloud jittered_grid(int dim, double spacing, double jitter, double ratio, Rng& rng,
                                    bool jitter_boundary = true) {
    if (jitter < 0.0 || jitter >= 0.5) throw InvalidParams("jitter must lie in [0, 0.5)");
    GeneratedCloud out = regular_grid(dim, spacing, ratio);
    for (int i = 0; i < out.cloud.size(); ++i) {
        const bool face = out.boundary[static_cast<std::size_t>(i)];
        for (int d = 0; d < dim; ++d) {
            const double delta = rng.uniform(-jitter * spacing, jitter * spacing);
            if (!face || jitter_boundary) out.cloud.positions(i, d) += delta;
        }
    }
    return out;
}

/// Uniform points in the unit cube with minimum-distance rejection at
/// 0.3 * spacing; the count matches the equivalent grid.
inline GeneratedCloud random_cloud(int dim, double spacing, double ratio, Rng& rng) {
    const int per_axis = static_cast<int>(std::lround(1.0 / spacing)) + 1;
    const int target = static_cast<int>(std::pow(per_axis, dim));
    const double min_dist2 = 0.09 * spacing * spacing;
    GeneratedCloud out;
    out.cloud.dim = dim;
    std::vector<double> pts;
    int placed = 0, attempts = 0;
    while (placed < target && attempts < 200 * target) {
        ++attempts;
        std::array<double, 3> x{0, 0, 0};
        for (int d = 0; d < dim; ++d) x[static_cast<std::size_t>(d)] = rng.uniform();
        bool ok = true;
        for (int q = 0; q < placed && ok; ++q) {
            double dist2 = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double diff = pts[static_cast<std::size_t>(q * dim + d)] -
                                    x[static_cast<std::size_t>(d)];
                dist2 += diff * diff;
            }
            ok = dist2 >= min_dist2;
        }
        if (!ok) continue;
        for (int d = 0; d < dim; ++d) pts.push_back(x[static_cast<std::size_t>(d)]);
        ++placed;
    }
    out.cloud.positions.resize(placed, dim);
    for (int i = 0; i < placed; ++i)
        for (int d = 0; d < dim; ++d)
            out.cloud.positions(i, d) = pts[static_cast<std::size_t>(i * dim + d)];
    out.cloud.radii = radii_for_ratio(placed, spacing, ratio);
    out.boundary.assign(static_cast<std::size_t>(placed), 0);
    return out;
}

// --- analytic test fields ------------------------------------------------------

enum class TestField { sin_product, gaussian_bump, polynomial };

struct FieldSpec {
    TestField kind = TestField::sin_product;
    int poly_degree = 2;
    std::uint64_t seed = 7;
};

namespace detail {

inline double sin_k(int k, double t) {
    switch (k % 4) {
        case 0: return std::sin(t);
        case 1: return std::cos(t);
        case 2: return -std::sin(t);
        default: return -std::cos(t);
    }
}

inline Vector polynomial_coeffs(const FieldSpec& spec, int dim) {
    MultiIndexSet set(dim, spec.poly_degree, true);
    Rng rng(spec.seed);
    Vector c(set.p());
    for (int q = 0; q < set.p(); ++q) c[q] = rng.uniform(-1.0, 1.0);
    return c;
}

inline RadialWindow bump_profile() {
    RadialWindow w;
    w.kind = WindowKind::gaussian;
    w.sigma = 0.15 * std::numbers::sqrt2;
    return w;
}

} // namespace detail

inline double field_value(const FieldSpec& spec, const Eigen::Ref<const Vector>& x) {
    const int dim = static_cast<int>(x.size());
    switch (spec.kind) {
        case TestField::sin_product: {
            double v = 1.0;
            for (int d = 0; d < dim; ++d) v *= std::sin(std::numbers::pi * x[d]);
            return v;
        }
        case TestField::gaussian_bump: {
            Vector off = x.array() - 0.5;
            return detail::bump_profile().profile(off.norm());
        }
        case TestField::polynomial: {
            MultiIndexSet set(dim, spec.poly_degree, true);
            return monomial_vector(x, set).dot(detail::polynomial_coeffs(spec, dim));
        }
    }
    return 0.0;
}

/// Exact value of a linear operator applied to the analytic field.
inline double field_derivative(const FieldSpec& spec, const std::vector<OperatorTerm>& terms,
                               const Eigen::Ref<const Vector>& x) {
    const int dim = static_cast<int>(x.size());
    double acc = 0.0;
    for (const auto& [a, c] : terms) {
        double v = 0.0;
        switch (spec.kind) {
            case TestField::sin_product: {
                v = 1.0;
                for (int d = 0; d < dim; ++d)
                    v *= std::pow(std::numbers::pi, a[static_cast<std::size_t>(d)]) *
                         detail::sin_k(a[static_cast<std::size_t>(d)], std::numbers::pi * x[d]);
                break;
            }
            case TestField::gaussian_bump: {
                auto terms_r = detail::radial_derivative_terms(a, 1.0);
                Vector off = x.array() - 0.5;
                v = detail::eval_radial_terms(terms_r, detail::bump_profile(), off, 1.0);
                break;
            }
            case TestField::polynomial: {
                MultiIndexSet set(dim, spec.poly_degree, true);
                std::vector<OperatorTerm> single{{a, 1.0}};
                MappingVector one = mapping_vector(single, set);
                v = operator_applied_to_monomials(one, x, set)
                        .dot(detail::polynomial_coeffs(spec, dim));
                break;
            }
        }
        acc += c * v;
    }
    return acc;
}

// --- convergence study ------------------------------------------------------

struct StudyConfig {
    int dim = 2;
    std::string generator = "jittered"; // regular | jittered | random
    double jitter = 0.2;
    std::vector<double> sizes;
    double ratio = 0.0; // 0 selects the order-dependent default
    MethodConfig method = preset(MethodName::gfdm, 2);
    std::string op_spec = "d/dx";
    FieldSpec field;
    std::uint64_t seed = 42;

    void validate() const {
        if (sizes.empty()) throw InvalidParams("study needs at least one spacing");
        for (std::size_t q = 1; q < sizes.size(); ++q)
            if (sizes[q] >= sizes[q - 1])
                throw InvalidParams("spacings must be strictly decreasing");
        if (jitter < 0.0 || jitter >= 0.5) throw InvalidParams("jitter must lie in [0, 0.5)");
    }
};

struct ConvergenceRow {
    double h = 0.0;
    int n_points = 0;
    double linf = 0.0;
    double l2 = 0.0;
};

struct ConvergenceResult {
    std::vector<ConvergenceRow> rows;
    double slope = 0.0;
    bool saturated = false; // errors at solver noise level, slope meaningless
};

inline GeneratedCloud generate_cloud(const StudyConfig& cfg, double spacing, Rng& rng,
                                     bool keep_boundary = false) {
    const double ratio = cfg.ratio > 0.0 ? cfg.ratio : default_ratio(cfg.dim, cfg.method.order);
    if (cfg.generator == "regular") return regular_grid(cfg.dim, spacing, ratio);
    if (cfg.generator == "jittered")
        return jittered_grid(cfg.dim, spacing, cfg.jitter, ratio, rng, !keep_boundary);
    if (cfg.generator == "random") {
        if (keep_boundary) throw InvalidParams("random clouds carry no boundary points");
        return random_cloud(cfg.dim, spacing, ratio, rng);
    }
    throw InvalidParams("unknown cloud generator '" + cfg.generator + "'");
}

inline std::uint64_t level_seed(std::uint64_t seed, std::size_t level) {
    return seed + 0x9E3779B97F4A7C15ull * (level + 1);
}

inline double fit_slope(const std::vector<ConvergenceRow>& rows) {
    // least-squares slope of log(linf) against log(h)
    const int n = static_cast<int>(rows.size());
    if (n < 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& r : rows) {
        const double x = std::log(r.h);
        const double y = std::log(std::max(r.linf, 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Operator convergence over a refinement ladder. Errors are measured only at
/// points whose full stencil ball lies inside the unit cube.
inline ConvergenceResult run_convergence(const StudyConfig& cfg) {
    cfg.validate();
    ConvergenceResult result;
    const std::vector<OperatorTerm> terms = parse_operator_terms(cfg.op_spec, cfg.dim);
    for (std::size_t level = 0; level < cfg.sizes.size(); ++level) {
        const double spacing = cfg.sizes[level];
        Rng rng(level_seed(cfg.seed, level));
        GeneratedCloud gen = generate_cloud(cfg, spacing, rng);
        const PointCloud& cloud = gen.cloud;
        std::vector<Neighborhood> nbhds = build_neighborhoods(cloud);

        double linf = 0.0, l2 = 0.0;
        int counted = 0;
        for (int i = 0; i < cloud.size(); ++i) {
            bool interior = true;
            for (int d = 0; d < cloud.dim && interior; ++d)
                interior = cloud.positions(i, d) >= cloud.radii[i] &&
                           cloud.positions(i, d) <= 1.0 - cloud.radii[i];
            if (!interior) continue;
            StencilWeights w = stencil_for(cfg.method, cloud, nbhds, i, terms);
            const Neighborhood& nb = nbhds[static_cast<std::size_t>(i)];
            Vector values(nb.count());
            for (int k = 0; k < nb.count(); ++k)
                values[k] = field_value(
                    cfg.field, cloud.positions.row(nb.members[static_cast<std::size_t>(k)]).transpose());
            const double approx =
                w.apply(values, field_value(cfg.field, cloud.positions.row(i).transpose()));
            const double exact =
                field_derivative(cfg.field, terms, cloud.positions.row(i).transpose());
            const double err = std::abs(approx - exact);
            linf = std::max(linf, err);
            l2 += err * err;
            ++counted;
        }
        if (counted == 0) throw InvalidParams("no interior point carries a full stencil");
        ConvergenceRow row;
        row.h = spacing;
        row.n_points = cloud.size();
        row.linf = linf;
        row.l2 = std::sqrt(l2 / counted);
        result.rows.push_back(row);
    }
    result.saturated = true;
    for (const auto& r : result.rows) result.saturated = result.saturated && r.linf <= 1e-9;
    result.slope = fit_slope(result.rows);
    return result;
}

/// Demo Poisson study on [0,1]^dim with Dirichlet boundaries.
/// test = "quadratic" (exact for second-order methods) or "sinproduct".
inline ConvergenceResult run_poisson(const StudyConfig& cfg, const std::string& test) {
    cfg.validate();
    ConvergenceResult result;
    for (std::size_t level = 0; level < cfg.sizes.size(); ++level) {
        Rng rng(level_seed(cfg.seed, level));
        GeneratedCloud gen = generate_cloud(cfg, cfg.sizes[level], rng, /*keep_boundary=*/true);
        const PointCloud& cloud = gen.cloud;
        std::vector<Neighborhood> nbhds = build_neighborhoods(cloud);

        auto exact = [&](int i) {
            double v = 0.0;
            if (test == "quadratic") {
                v = cloud.positions.row(i).squaredNorm();
            } else if (test == "sinproduct") {
                v = 1.0;
                for (int d = 0; d < cloud.dim; ++d)
                    v *= std::sin(std::numbers::pi * cloud.positions(i, d));
            } else {
                throw InvalidParams("unknown poisson test '" + test + "'");
            }
            return v;
        };
        Vector f(cloud.size());
        for (int i = 0; i < cloud.size(); ++i)
            f[i] = test == "quadratic"
                       ? 2.0 * cloud.dim
                       : -cloud.dim * std::numbers::pi * std::numbers::pi * exact(i);

        BoundarySpec bc;
        for (int i = 0; i < cloud.size(); ++i)
            if (gen.boundary[static_cast<std::size_t>(i)]) bc.boundary_ids.push_back(i);
        bc.dirichlet.resize(static_cast<int>(bc.boundary_ids.size()));
        for (std::size_t q = 0; q < bc.boundary_ids.size(); ++q)
            bc.dirichlet[static_cast<int>(q)] = exact(bc.boundary_ids[q]);

        Vector u = solve_poisson(cloud, nbhds, bc, f, cfg.method);
        double linf = 0.0, l2 = 0.0;
        for (int i = 0; i < cloud.size(); ++i) {
            const double err = std::abs(u[i] - exact(i));
            linf = std::max(linf, err);
            l2 += err * err;
        }
        ConvergenceRow row;
        row.h = cfg.sizes[level];
        row.n_points = cloud.size();
        row.linf = linf;
        row.l2 = std::sqrt(l2 / cloud.size());
        result.rows.push_back(row);
    }
    result.saturated = true;
    for (const auto& r : result.rows) result.saturated = result.saturated && r.linf <= 1e-8;
    result.slope = fit_slope(result.rows);
    return result;
}

// --- route equivalence -------------------------------------------------------

struct EquivalenceReport {
    double max_rel_discrepancy = 0.0;
    int points_checked = 0;
    bool pass = false;
};

/// Entrywise comparison of two methods' stencils, folded to plain value-space
/// rows so forms with different conventions stay comparable.
inline EquivalenceReport run_equivalence(const StudyConfig& cfg, const MethodConfig& a,
                                         const MethodConfig& b) {
    cfg.validate();
    const std::vector<OperatorTerm> terms = parse_operator_terms(cfg.op_spec, cfg.dim);
    EquivalenceReport report;
    for (std::size_t level = 0; level < cfg.sizes.size(); ++level) {
        Rng rng(level_seed(cfg.seed, level));
        GeneratedCloud gen = generate_cloud(cfg, cfg.sizes[level], rng);
        const PointCloud& cloud = gen.cloud;
        std::vector<Neighborhood> nbhds = build_neighborhoods(cloud);
        for (int i = 0; i < cloud.size(); ++i) {
            bool interior = true;
            for (int d = 0; d < cloud.dim && interior; ++d)
                interior = cloud.positions(i, d) >= cloud.radii[i] &&
                           cloud.positions(i, d) <= 1.0 - cloud.radii[i];
            if (!interior) continue;
            auto row_a = fold_to_row(stencil_for(a, cloud, nbhds, i, terms));
            auto row_b = fold_to_row(stencil_for(b, cloud, nbhds, i, terms));
            double scale = 0.0;
            for (const auto& [j, v] : row_a) scale = std::max(scale, std::abs(v));
            for (const auto& [j, v] : row_b) scale = std::max(scale, std::abs(v));
            std::map<int, double> merged;
            for (const auto& [j, v] : row_a) merged[j] += v;
            for (const auto& [j, v] : row_b) merged[j] -= v;
            double disc = 0.0;
            for (const auto& [j, v] : merged) disc = std::max(disc, std::abs(v));
            report.max_rel_discrepancy =
                std::max(report.max_rel_discrepancy, disc / std::max(scale, 1e-300));
            ++report.points_checked;
        }
    }
    report.pass = report.max_rel_discrepancy <= 1e-10;
    return report;
}

// --- CSV emission --------------------------------------------------------------

inline std::string csv_header() { return "h,n_points,method,op,linf,l2,slope"; }

inline std::string to_csv(const ConvergenceResult& result, const std::string& method,
                          const std::string& op) {
    std::string out = csv_header() + "\n";
    char buf[256];
    for (std::size_t q = 0; q < result.rows.size(); ++q) {
        const ConvergenceRow& r = result.rows[q];
        const bool last = q + 1 == result.rows.size();
        if (last && result.saturated)
            std::snprintf(buf, sizeof buf, "%.17g,%d,%s,%s,%.17g,%.17g,saturated\n", r.h,
                          r.n_points, method.c_str(), op.c_str(), r.linf, r.l2);
        else if (last)
            std::snprintf(buf, sizeof buf, "%.17g,%d,%s,%s,%.17g,%.17g,%.17g\n", r.h, r.n_points,
                          method.c_str(), op.c_str(), r.linf, r.l2, result.slope);
        else
            std::snprintf(buf, sizeof buf, "%.17g,%d,%s,%s,%.17g,%.17g,\n", r.h, r.n_points,
                          method.c_str(), op.c_str(), r.linf, r.l2);
        out += buf;
    }
    return out;
}

} // namespace colloc
