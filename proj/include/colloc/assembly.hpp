#pragma once

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <cstdint>
#include <ostream>
#include <vector>

#include "colloc/methods.hpp"

namespace colloc {

/// Folds a stencil into a plain row over point values: the implied diagonal
/// of difference-type forms is merged so the row acts on raw samples.
inline std::vector<std::pair<int, double>> fold_to_row(const StencilWeights& w) {
    std::vector<std::pair<int, double>> row;
    row.reserve(w.neighbors.size() + 1);
    double diag_extra = 0.0;
    for (std::size_t k = 0; k < w.neighbors.size(); ++k) {
        const double coef = w.weights[static_cast<int>(k)];
        if (!w.take_neighbor.empty() && !w.take_neighbor[k]) continue; // u_i - u_i term
        switch (w.form) {
            case WeightForm::on_values: break;
            case WeightForm::on_differences: diag_extra -= coef; break;
            case WeightForm::dcpse_signed: diag_extra += w.dcpse_sign * coef; break;
        }
        if (coef != 0.0) row.push_back({w.neighbors[k], coef});
    }
    if (diag_extra != 0.0) {
        bool merged = false;
        for (auto& [j, v] : row)
            if (j == w.center) {
                v += diag_extra;
                merged = true;
            }
        if (!merged) row.push_back({w.center, diag_extra});
    }
    std::sort(row.begin(), row.end());
    return row;
}

/// Sparse operator over the whole cloud plus per-point affine offsets.
struct GlobalOperator {
    int n = 0;
    std::vector<std::vector<std::pair<int, double>>> rows;
    Vector affine;
    double max_cond = 0.0;
    double max_moment_residual = 0.0;

    Eigen::SparseMatrix<double> to_sparse() const {
        std::vector<Eigen::Triplet<double>> trips;
        for (int i = 0; i < n; ++i)
            for (const auto& [j, v] : rows[static_cast<std::size_t>(i)])
                trips.push_back({i, j, v});
        Eigen::SparseMatrix<double> a(n, n);
        a.setFromTriplets(trips.begin(), trips.end());
        return a;
    }

    Vector apply(const Eigen::Ref<const Vector>& u) const {
        Vector out = affine;
        for (int i = 0; i < n; ++i)
            for (const auto& [j, v] : rows[static_cast<std::size_t>(i)]) out[i] += v * u[j];
        return out;
    }

    /// Coordinate-format text export: `row col value`, 0-based.
    void export_coordinate(std::ostream& os) const {
        for (int i = 0; i < n; ++i)
            for (const auto& [j, v] : rows[static_cast<std::size_t>(i)]) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "%d %d %.17g\n", i, j, v);
                os << buf;
            }
    }
};

/// Row-wise assembly of one operator over the cloud. Points in `skip` keep an
/// empty row (their treatment is up to the caller, e.g. boundary rows).
inline GlobalOperator assemble(const PointCloud& cloud, const std::vector<Neighborhood>& nbhds,
                               const MethodConfig& method, const std::vector<OperatorTerm>& terms,
                               const std::vector<std::uint8_t>& skip = {},
                               const ProblemFields* fields = nullptr) {
    GlobalOperator op;
    op.n = cloud.size();
    op.rows.resize(static_cast<std::size_t>(op.n));
    op.affine = Vector::Zero(op.n);
    for (int i = 0; i < op.n; ++i) {
        if (!skip.empty() && skip[static_cast<std::size_t>(i)]) continue;
        StencilWeights w;
        try {
            w = stencil_for(method, cloud, nbhds, i, terms, fields);
        } catch (SingularMoment& e) {
            throw SingularMoment(std::string(e.what()) + " at point " + std::to_string(i), i);
        }
        op.rows[static_cast<std::size_t>(i)] = fold_to_row(w);
        op.affine[i] = w.affine;
        op.max_cond = std::max(op.max_cond, w.cond_estimate);
        op.max_moment_residual = std::max(op.max_moment_residual, w.moment_residual_inf);
    }
    return op;
}

struct BoundarySpec {
    std::vector<int> boundary_ids;
    Vector dirichlet; // per listed id
};

/// Strong-form Poisson solve: Laplacian rows at interior points, identity
/// rows with the Dirichlet data at boundary points. BiCGSTAB with diagonal
/// scaling, dense fallback for small systems.
inline Vector solve_poisson(const PointCloud& cloud, const std::vector<Neighborhood>& nbhds,
                            const BoundarySpec& boundary, const Eigen::Ref<const Vector>& f,
                            const MethodConfig& method) {
    const int n = cloud.size();
    std::vector<std::uint8_t> is_boundary(static_cast<std::size_t>(n), 0);
    for (int id : boundary.boundary_ids) is_boundary[static_cast<std::size_t>(id)] = 1;

    ProblemFields fields;
    fields.f = f;
    fields.g = Vector::Zero(n);
    fields.boundary = is_boundary;
    for (std::size_t q = 0; q < boundary.boundary_ids.size(); ++q)
        fields.g[boundary.boundary_ids[q]] = boundary.dirichlet[static_cast<int>(q)];

    std::vector<OperatorTerm> lap = parse_operator_terms("laplacian", cloud.dim);
    GlobalOperator op = assemble(cloud, nbhds, method, lap, is_boundary, &fields);

    Vector rhs = f - op.affine;
    for (int i = 0; i < n; ++i)
        if (is_boundary[static_cast<std::size_t>(i)]) {
            op.rows[static_cast<std::size_t>(i)] = {{i, 1.0}};
            rhs[i] = fields.g[i];
        }

    Eigen::SparseMatrix<double> a = op.to_sparse();
    const double target = 1e-10 * std::max(rhs.lpNorm<Eigen::Infinity>(), 1e-300);

    Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::DiagonalPreconditioner<double>> krylov;
    krylov.setMaxIterations(10 * n);
    krylov.setTolerance(1e-14);
    krylov.compute(a);
    Vector u = krylov.solve(rhs);
    if ((a * u - rhs).lpNorm<Eigen::Infinity>() <= target) return u;

    if (n <= 2000) {
        Matrix dense(a);
        u = Eigen::PartialPivLU<Matrix>(dense).solve(rhs);
        if ((a * u - rhs).lpNorm<Eigen::Infinity>() <= target) return u;
    }
    throw LinearSolveFailure("poisson: linear solver missed the residual target");
}

} // namespace colloc
