#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "colloc/basis.hpp"
#include "colloc/cloud.hpp"
#include "colloc/errors.hpp"
#include "colloc/multi_index.hpp"

namespace colloc {

/// How the per-neighbor weights act on sampled values.
enum class WeightForm {
    on_values,     // sum w_j u_j
    on_differences, // sum w_j (u_j - u_i)
    dcpse_signed   // sum w_j (u_j + sign u_i), sign from operator parity
};

inline std::string to_string(WeightForm f) {
    switch (f) {
        case WeightForm::on_values: return "on_values";
        case WeightForm::on_differences: return "on_differences";
        case WeightForm::dcpse_signed: return "dcpse_signed";
    }
    return "?";
}

/// Column-pivoted QR that solves, detects numerical rank at
/// p * eps * |R_00|, and provides a condition estimate from the R diagonal.
class PivotedSolve {
public:
    explicit PivotedSolve(const Matrix& m) : qr_(m) {
        const int p = static_cast<int>(m.rows());
        const Matrix& r = qr_.matrixR();
        rmax_ = std::abs(r(0, 0));
        const double tol = p * std::numeric_limits<double>::epsilon() * rmax_;
        rank_ = 0;
        double rmin = rmax_;
        for (int k = 0; k < std::min(r.rows(), r.cols()); ++k) {
            const double d = std::abs(r(k, k));
            if (d > tol) {
                ++rank_;
                rmin = std::min(rmin, d);
            }
        }
        cond_ = (rank_ == std::min(r.rows(), r.cols()) && rmin > 0.0)
                    ? rmax_ / rmin
                    : std::numeric_limits<double>::infinity();
        full_ = rank_ == std::min(r.rows(), r.cols());
    }

    bool full_rank() const { return full_; }
    int rank() const { return rank_; }
    double cond() const { return cond_; }

    void require_full_rank(const std::string& context, int point = -1) const {
        if (!full_)
            throw SingularMoment(context + ": moment matrix is numerically rank-deficient (rank " +
                                     std::to_string(rank_) + ")",
                                 point);
    }

    Vector solve(const Eigen::Ref<const Vector>& b) const { return qr_.solve(b); }
    Matrix solve(const Eigen::Ref<const Matrix>& b) const { return qr_.solve(b); }

private:
    Eigen::ColPivHouseholderQR<Matrix> qr_;
    int rank_ = 0;
    bool full_ = false;
    double rmax_ = 0.0;
    double cond_ = 0.0;
};

struct MomentMatrix {
    Matrix entries;
    bool preconditioned = false;
    double cond_estimate = 0.0;
};

/// Per-neighbor stencil weights for one operator at one center.
struct StencilWeights {
    int center = -1;
    std::vector<int> neighbors;
    Vector weights;
    WeightForm form = WeightForm::on_values;
    int dcpse_sign = 0; // +1 for odd operator parity, -1 for even
    std::string route;
    double cond_estimate = 0.0;
    double moment_residual_inf = 0.0;
    double affine = 0.0;                     // constant contribution (CMLS)
    std::vector<std::uint8_t> take_neighbor; // KMM: 1 selects u_j, 0 selects u_i

    /// Applies the stencil to per-member values; u_center must be the value at
    /// the center point (also present among the members).
    double apply(const Eigen::Ref<const Vector>& values, double u_center) const {
        double acc = affine;
        for (int k = 0; k < weights.size(); ++k) {
            double u = values[k];
            if (!take_neighbor.empty() && !take_neighbor[static_cast<std::size_t>(k)])
                u = u_center;
            switch (form) {
                case WeightForm::on_values: acc += weights[k] * u; break;
                case WeightForm::on_differences: acc += weights[k] * (u - u_center); break;
                case WeightForm::dcpse_signed:
                    acc += weights[k] * (u + dcpse_sign * u_center);
                    break;
            }
        }
        return acc;
    }
};

/// All derivatives up to order m at one center: coefficients is p x N_i and
/// maps member values (or differences, per the set) to the derivative vector.
struct DerivativeSolve {
    int center = -1;
    std::vector<int> neighbors;
    Matrix coefficients;
    const MultiIndexSet* set = nullptr;
    bool on_differences = false;
    double cond_estimate = 0.0;

    StencilWeights extract(const MappingVector& map) const {
        StencilWeights w;
        w.center = center;
        w.neighbors = neighbors;
        w.weights = coefficients.transpose() * map.coeffs;
        w.form = on_differences ? WeightForm::on_differences : WeightForm::on_values;
        w.route = "l2e";
        w.cond_estimate = cond_estimate;
        return w;
    }
};

namespace detail {

/// Stacked monomial rows (one per member), optionally h-preconditioned.
inline Matrix monomial_rows(const Neighborhood& nbhd, const MultiIndexSet& set, bool precondition,
                            double offset_scale = 1.0) {
    Matrix x(nbhd.count(), set.p());
    for (int k = 0; k < nbhd.count(); ++k)
        x.row(k) =
            monomial_vector(offset_scale * nbhd.offsets.row(k).transpose(), set).transpose();
    if (precondition) {
        const Vector s = Preconditioner::from(nbhd.radius, set).scales;
        x = x * s.asDiagonal();
    }
    return x;
}

inline Matrix abf_rows(const Neighborhood& nbhd, const AbfFamily& family,
                       const MultiIndexSet& set) {
    Matrix w(nbhd.count(), family.length(set));
    for (int k = 0; k < nbhd.count(); ++k)
        w.row(k) = eval_abf(family, set, nbhd.offsets.row(k).transpose(), nbhd.radius,
                            nbhd.members[static_cast<std::size_t>(k)] == nbhd.center)
                       .transpose();
    return w;
}

inline Vector window_values(const Neighborhood& nbhd, const RadialWindow& window) {
    Vector phi(nbhd.count());
    for (int k = 0; k < nbhd.count(); ++k)
        phi[k] = window.value(nbhd.offsets.row(k).norm(), nbhd.radius);
    return phi;
}

/// Symmetric moment matrix sum phi X X^T assembled from the lower half only.
inline Matrix symmetric_moment(const Matrix& x, const Vector& phi) {
    const int p = static_cast<int>(x.cols());
    Matrix m = Matrix::Zero(p, p);
    for (int k = 0; k < x.rows(); ++k)
        m.selfadjointView<Eigen::Lower>().rankUpdate(x.row(k).transpose(), phi[k]);
    m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
    return m;
}

} // namespace detail

inline MomentMatrix moment_matrix(const Neighborhood& nbhd, const AbfFamily& family,
                                  const MultiIndexSet& set, bool precondition,
                                  const Vector& volumes = Vector()) {
    if (family.kind == AbfKind::extended_taylor)
        throw InvalidParams("extended ABFs require the constraint-aware solver");
    const double scale = family.kind == AbfKind::midpoint_monomials ? 0.5 : 1.0;
    Matrix x = detail::monomial_rows(nbhd, set, precondition, scale);
    Matrix w = detail::abf_rows(nbhd, family, set);
    if (volumes.size() > 0) w = volumes.asDiagonal() * w;
    MomentMatrix m;
    m.entries = x.transpose() * w;
    m.preconditioned = precondition;
    m.cond_estimate = PivotedSolve(m.entries).cond();
    return m;
}

/// Residual of the moment conditions sum_j X_ji w_ji - C in the frame the
/// weights were solved in.
inline Vector moment_residuals(const StencilWeights& weights, const Neighborhood& nbhd,
                               const MultiIndexSet& set, const MappingVector& map,
                               bool precondition = false, double offset_scale = 1.0) {
    Matrix x = detail::monomial_rows(nbhd, set, precondition, offset_scale);
    Vector c = map.coeffs;
    if (precondition) c = Preconditioner::from(nbhd.radius, set).apply(c);
    return x.transpose() * weights.weights - c;
}

/// Approximation-of-moments weights: w_ji = W_ji . (M^-1 C).
inline StencilWeights aom_weights(const Neighborhood& nbhd, const AbfFamily& family,
                                  const MultiIndexSet& set, const MappingVector& map,
                                  bool precondition, const Vector& volumes = Vector()) {
    const double scale = family.kind == AbfKind::midpoint_monomials ? 0.5 : 1.0;
    Matrix x = detail::monomial_rows(nbhd, set, precondition, scale);
    Matrix w = detail::abf_rows(nbhd, family, set);
    if (volumes.size() > 0) w = volumes.asDiagonal() * w;

    Vector c = map.coeffs;
    if (precondition) c = Preconditioner::from(nbhd.radius, set).apply(c);

    PivotedSolve solve(x.transpose() * w);
    solve.require_full_rank("aom", nbhd.center);
    Vector psi = solve.solve(c);

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = w * psi;
    out.form = set.include_zeroth() ? WeightForm::on_values : WeightForm::on_differences;
    out.route = "aom";
    out.cond_estimate = solve.cond();
    out.moment_residual_inf = (x.transpose() * out.weights - c).lpNorm<Eigen::Infinity>();
    return out;
}

/// l2 error minimization: all derivatives up to order m from one symmetric solve.
inline DerivativeSolve l2e_solve(const Neighborhood& nbhd, const RadialWindow& window,
                                 const MultiIndexSet& set) {
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);
    Matrix m = detail::symmetric_moment(x, phi);
    PivotedSolve solve(m);
    solve.require_full_rank("l2e", nbhd.center);

    DerivativeSolve out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.coefficients = solve.solve(Matrix(x.transpose() * phi.asDiagonal()));
    out.set = &set;
    out.on_differences = !set.include_zeroth();
    out.cond_estimate = solve.cond();
    return out;
}

/// l2 minimization of weights under the moment-condition constraint:
/// w_ji = phi_ji X_ji . (M^-1 C).
inline StencilWeights l2p_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                  const MultiIndexSet& set, const MappingVector& map) {
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);
    Matrix m = detail::symmetric_moment(x, phi);
    PivotedSolve solve(m);
    solve.require_full_rank("l2p", nbhd.center);
    Vector psi = solve.solve(map.coeffs);

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = phi.asDiagonal() * (x * psi);
    out.form = set.include_zeroth() ? WeightForm::on_values : WeightForm::on_differences;
    out.route = "l2p";
    out.cond_estimate = solve.cond();
    out.moment_residual_inf = (x.transpose() * out.weights - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

/// Generalized l2 minimization over arbitrary ABFs, solved through the
/// Lagrange closed form (Gram matrix of the ABFs plus two moment solves).
/// Acts on differences; the zeroth moment is excluded by construction.
inline StencilWeights gl2p_weights(const Neighborhood& nbhd, const AbfFamily& family,
                                   const MultiIndexSet& set, const MappingVector& map) {
    if (set.include_zeroth())
        throw InvalidParams("generalized l2 weight minimization excludes the zeroth moment");
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Matrix w = detail::abf_rows(nbhd, family, set);

    Matrix m = x.transpose() * w;
    Matrix gram = w.transpose() * w;
    PivotedSolve msolve(m);
    msolve.require_full_rank("gl2p", nbhd.center);
    PivotedSolve gsolve(gram);
    gsolve.require_full_rank("gl2p gram", nbhd.center);
    PivotedSolve mtsolve(Matrix(m.transpose()));
    mtsolve.require_full_rank("gl2p transpose", nbhd.center);

    Vector lambda = -mtsolve.solve(Vector(gram * msolve.solve(map.coeffs)));
    Vector psi = -gsolve.solve(Vector(m.transpose() * lambda));

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = w * psi;
    out.form = WeightForm::on_differences;
    out.route = "gl2p";
    out.cond_estimate = msolve.cond();
    out.moment_residual_inf = (x.transpose() * out.weights - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

/// Direct (full) derivative of the order-zero reconstruction map: the weight
/// for a first derivative is the center-derivative of w^0_ji, including the
/// dependence through M^-1. Restricted to |alpha| = 1.
inline StencilWeights direct_derivative_weights(const Neighborhood& nbhd,
                                                const RadialWindow& window,
                                                const MultiIndexSet& set,
                                                const MappingVector& map) {
    if (!set.include_zeroth())
        throw InvalidParams("direct derivatives build on the with-zeroth reconstruction");
    if (map.uniform_order() != 1)
        throw UnsupportedOrder("direct derivatives are restricted to first-order operators");
    int axis = -1;
    for (int q = 0; q < map.coeffs.size(); ++q)
        if (map.coeffs[q] != 0.0) {
            const MultiIndex& a = map.set->at(q);
            for (int d = 0; d < 3; ++d)
                if (a[static_cast<std::size_t>(d)] == 1) axis = d;
            if (map.coeffs[q] != 1.0)
                throw UnsupportedOrder("direct derivatives support single pure first derivatives");
        }

    const double h = nbhd.radius;
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);
    Matrix w = phi.asDiagonal() * x;

    // Offset-derivatives of X, phi and W along the axis.
    Matrix dx(nbhd.count(), set.p());
    Vector dphi(nbhd.count());
    for (int k = 0; k < nbhd.count(); ++k) {
        const Vector off = nbhd.offsets.row(k).transpose();
        dx.row(k) = monomial_vector_derivative(off, set, axis).transpose();
        const double r = off.norm();
        dphi[k] = r == 0.0 ? 0.0
                           : window.profile_deriv(1, r / h) * off[axis] / (r * h);
    }
    Matrix dw = phi.asDiagonal() * dx + dphi.asDiagonal() * x;
    Matrix dm = dx.transpose() * w + x.transpose() * dw;

    Vector c0 = Vector::Zero(set.p());
    c0[set.position(make_index(0))] = 1.0;

    PivotedSolve solve(Matrix(x.transpose() * w));
    solve.require_full_rank("direct", nbhd.center);
    Vector psi0 = solve.solve(c0);
    Vector correction = solve.solve(Vector(dm * psi0));

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    // d/dx_center = -d/d(offset); the M^-1 chain term flips back to positive.
    out.weights = -(dw * psi0) + w * correction;
    out.form = WeightForm::on_values;
    out.route = "direct";
    out.cond_estimate = solve.cond();
    out.moment_residual_inf = (x.transpose() * out.weights - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

/// Reconstruction weights w^0_ji of the same route, exposed for oracles that
/// probe the direct derivative by center perturbation.
inline StencilWeights direct_reconstruction_weights(const Neighborhood& nbhd,
                                                    const RadialWindow& window,
                                                    const MultiIndexSet& set) {
    if (!set.include_zeroth())
        throw InvalidParams("reconstruction requires the zeroth entry");
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);
    Matrix w = phi.asDiagonal() * x;
    Vector c0 = Vector::Zero(set.p());
    c0[set.position(make_index(0))] = 1.0;
    PivotedSolve solve(Matrix(x.transpose() * w));
    solve.require_full_rank("direct reconstruction", nbhd.center);
    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = w * solve.solve(c0);
    out.form = WeightForm::on_values;
    out.route = "direct";
    out.cond_estimate = solve.cond();
    return out;
}

} // namespace colloc
