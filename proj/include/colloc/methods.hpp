#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "colloc/engines.hpp"

namespace colloc {

enum class MethodName {
    dcpse,
    gfdm,
    gmls,
    mls_fpm,
    lsmfm_rkcm,
    grkcm,
    labfm,
    hocsph,
    grkp,
    pdm,
    fdpm,
    mfdm,
    mmls,
    cmls,
    fpsm,
    lskum,
    kmm,
    ldd,
    // raw derivation routes, addressable alongside the named presets
    aom,
    l2e,
    l2p,
    gl2p
};

enum class EngineRoute { aom, l2e, l2p, gl2p, direct, special };

enum class ZerothUse { yes, no, either };

enum class LddVariant { naive, sum, ls_full, ls_basic };

/// One validated method instance: a derivation route, an ABF family, the
/// zeroth-moment flag and any method-specific parameters.
struct MethodConfig {
    MethodName name = MethodName::gfdm;
    EngineRoute route = EngineRoute::l2p;
    AbfFamily family;
    bool include_zeroth = true;
    bool precondition = false;
    int order = 2;

    double mu = 1e-7;          // MMLS regularization weight
    double eps_omega = 0.0;    // CMLS interior penalty
    double eps_boundary = 0.0; // CMLS boundary penalty
    double eps_fpsm = 0.0;     // FPsM center-weight parameter
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero(); // KMM upwinding
    int direction_axis = 0;    // LSKUM half-space axis
    int direction_sign = +1;   // LSKUM half-space sign
    int mfdm_low = 2;          // MFDM low order L
    int mfdm_iters = 3;        // MFDM correction sweeps
    int grkp_l = 1;            // GRKP bracket start order
    LddVariant ldd_variant = LddVariant::sum;
    Vector volumes;            // optional per-point volumes (HOCSPH)
};

/// Table row backing the preset validator.
struct PresetRow {
    MethodName name;
    EngineRoute route;
    AbfKind family;
    ZerothUse zeroth;
    bool precondition;
};

inline const std::vector<PresetRow>& preset_ledger() {
    static const std::vector<PresetRow> rows = {
        {MethodName::dcpse, EngineRoute::aom, AbfKind::scaled_taylor_monomials, ZerothUse::either, true},
        {MethodName::gfdm, EngineRoute::l2p, AbfKind::taylor_monomials, ZerothUse::either, false},
        {MethodName::gmls, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::yes, false},
        {MethodName::mls_fpm, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::no, false},
        {MethodName::lsmfm_rkcm, EngineRoute::direct, AbfKind::taylor_monomials, ZerothUse::yes, false},
        {MethodName::grkcm, EngineRoute::aom, AbfKind::taylor_monomials, ZerothUse::yes, false},
        {MethodName::labfm, EngineRoute::aom, AbfKind::orthogonal_polynomials, ZerothUse::no, true},
        {MethodName::hocsph, EngineRoute::aom, AbfKind::rbf_derivatives, ZerothUse::no, false},
        {MethodName::grkp, EngineRoute::aom, AbfKind::taylor_monomials, ZerothUse::either, false},
        {MethodName::pdm, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::no, false},
        {MethodName::fdpm, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::no, false},
        {MethodName::mfdm, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::yes, false},
        {MethodName::mmls, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::yes, false},
        {MethodName::cmls, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::yes, false},
        {MethodName::fpsm, EngineRoute::l2p, AbfKind::extended_taylor, ZerothUse::yes, false},
        {MethodName::lskum, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::no, false},
        {MethodName::kmm, EngineRoute::l2e, AbfKind::midpoint_monomials, ZerothUse::no, false},
        {MethodName::ldd, EngineRoute::special, AbfKind::taylor_monomials, ZerothUse::no, false},
        {MethodName::aom, EngineRoute::aom, AbfKind::taylor_monomials, ZerothUse::either, false},
        {MethodName::l2e, EngineRoute::l2e, AbfKind::taylor_monomials, ZerothUse::either, false},
        {MethodName::l2p, EngineRoute::l2p, AbfKind::taylor_monomials, ZerothUse::either, false},
        {MethodName::gl2p, EngineRoute::gl2p, AbfKind::taylor_monomials, ZerothUse::no, false},
    };
    return rows;
}

inline const PresetRow& ledger_row(MethodName name) {
    for (const auto& row : preset_ledger())
        if (row.name == name) return row;
    throw UnknownMethod("method missing from the preset ledger");
}

inline std::string to_string(MethodName name) {
    switch (name) {
        case MethodName::dcpse: return "dcpse";
        case MethodName::gfdm: return "gfdm";
        case MethodName::gmls: return "gmls";
        case MethodName::mls_fpm: return "mls_fpm";
        case MethodName::lsmfm_rkcm: return "lsmfm_rkcm";
        case MethodName::grkcm: return "grkcm";
        case MethodName::labfm: return "labfm";
        case MethodName::hocsph: return "hocsph";
        case MethodName::grkp: return "grkp";
        case MethodName::pdm: return "pdm";
        case MethodName::fdpm: return "fdpm";
        case MethodName::mfdm: return "mfdm";
        case MethodName::mmls: return "mmls";
        case MethodName::cmls: return "cmls";
        case MethodName::fpsm: return "fpsm";
        case MethodName::lskum: return "lskum";
        case MethodName::kmm: return "kmm";
        case MethodName::ldd: return "ldd";
        case MethodName::aom: return "aom";
        case MethodName::l2e: return "l2e";
        case MethodName::l2p: return "l2p";
        case MethodName::gl2p: return "gl2p";
    }
    return "?";
}

inline MethodName method_from_string(const std::string& s) {
    for (const auto& row : preset_ledger())
        if (to_string(row.name) == s) return row.name;
    throw UnknownMethod("unknown method '" + s + "'");
}

inline void validate_preset(const MethodConfig& cfg);

/// Builds a validated preset. The window argument overrides the default
/// window for families that allow it.
inline MethodConfig preset(MethodName name, int order,
                           std::optional<RadialWindow> window = std::nullopt) {
    const PresetRow& row = ledger_row(name);
    MethodConfig cfg;
    cfg.name = name;
    cfg.route = row.route;
    cfg.order = order;
    cfg.family.kind = row.family;
    cfg.precondition = row.precondition;
    cfg.include_zeroth = row.zeroth != ZerothUse::no;

    switch (name) {
        case MethodName::dcpse:
            cfg.family.window.kind = WindowKind::gaussian;
            break;
        case MethodName::labfm:
            cfg.family.window.kind = WindowKind::wendland_c2;
            cfg.family.poly = PolyBasis::legendre;
            break;
        case MethodName::hocsph:
            cfg.family.window.kind = WindowKind::gaussian;
            break;
        case MethodName::grkp:
            cfg.grkp_l = 1;
            cfg.include_zeroth = false;
            break;
        case MethodName::mfdm:
            cfg.mfdm_low = std::max(1, order / 2);
            break;
        default: break;
    }
    if (window) cfg.family.window = *window;
    validate_preset(cfg);
    return cfg;
}

inline void validate_preset(const MethodConfig& cfg) {
    const PresetRow& row = ledger_row(cfg.name);
    if (cfg.route != row.route) throw InvalidParams("preset route drifted from the ledger");
    if (cfg.family.kind != row.family) throw InvalidParams("preset basis drifted from the ledger");
    if (row.zeroth == ZerothUse::yes && !cfg.include_zeroth)
        throw InvalidParams("preset requires the zeroth moment");
    if (row.zeroth == ZerothUse::no && cfg.include_zeroth)
        throw InvalidParams("preset excludes the zeroth moment");
    if (cfg.precondition != row.precondition)
        throw InvalidParams("preset preconditioning flag drifted from the ledger");
    if (cfg.order < 1) throw InvalidParams("order must be positive");
    if (cfg.name == MethodName::mfdm &&
        (cfg.mfdm_low < 1 || cfg.mfdm_low >= cfg.order || cfg.mfdm_iters < 0))
        throw InvalidParams("mfdm requires 1 <= L < m and a nonnegative sweep count");
    if (cfg.name == MethodName::mmls && cfg.mu < 0.0)
        throw InvalidParams("mmls regularization weights must be nonnegative");
    if (cfg.name == MethodName::fpsm && cfg.eps_fpsm < 0.0)
        throw InvalidParams("fpsm center parameter must be nonnegative");
    if (cfg.name == MethodName::grkp && cfg.grkp_l != 0 && cfg.grkp_l != 1)
        throw InvalidParams("grkp bracket start order must be 0 or 1");
    if (cfg.name == MethodName::lskum && cfg.direction_sign != 1 && cfg.direction_sign != -1)
        throw InvalidParams("lskum direction sign must be +1 or -1");
}

// --- DC-PSE -------------------------------------------------------------

/// Signed DC-PSE weights. The operator acts on u_j + u_i for odd |alpha| and
/// on u_j - u_i for even |alpha|. For the odd (+) form the constant
/// contribution does not cancel, so the zeroth-moment row is kept with
/// target 0; for the even (-) form it cancels identically and the row is
/// dropped.
inline StencilWeights dcpse_weights(const Neighborhood& nbhd, const AbfFamily& family, int dim,
                                    int order, const std::vector<OperatorTerm>& terms,
                                    bool precondition = true) {
    int parity = -1;
    for (const auto& [a, c] : terms) {
        if (c == 0.0) continue;
        const int k = index_order(a) % 2;
        if (parity == -1)
            parity = k;
        else if (parity != k)
            throw InvalidParams("dcpse requires uniform operator parity");
    }
    if (parity == -1) throw InvalidParams("empty operator");
    const bool odd = parity == 1;

    MultiIndexSet set(dim, order, odd);
    MappingVector map = mapping_vector(terms, set);
    StencilWeights w = aom_weights(nbhd, family, set, map, precondition);
    w.form = WeightForm::dcpse_signed;
    w.dcpse_sign = odd ? +1 : -1;
    w.route = "dcpse";
    return w;
}

// --- MMLS ----------------------------------------------------------------

namespace detail {

inline Vector mmls_diagonal(const MultiIndexSet& set, const Vector& mu) {
    int s = 0;
    for (int q = 0; q < set.p(); ++q)
        if (index_order(set.at(q)) == set.order()) ++s;
    if (mu.size() != s)
        throw InvalidParams("mmls regularization vector must match the leading-order slot count");
    if ((mu.array() < 0.0).any()) throw InvalidParams("mmls regularization weights must be >= 0");
    Vector d = Vector::Zero(set.p());
    int k = 0;
    for (int q = 0; q < set.p(); ++q)
        if (index_order(set.at(q)) == set.order()) d[q] = mu[k++];
    return d;
}

} // namespace detail

/// Modified MLS: the symmetric moment matrix is augmented by diag(0, mu) on
/// the leading-order slots, which keeps the solve well-posed on neighborhoods
/// that are rank-deficient only at the top order.
inline StencilWeights mmls_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                   const MultiIndexSet& set, const MappingVector& map,
                                   const Vector& mu) {
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);
    Matrix m = detail::symmetric_moment(x, phi);
    m += detail::mmls_diagonal(set, mu).asDiagonal();

    PivotedSolve solve(m);
    solve.require_full_rank("mmls", nbhd.center);
    Vector psi = solve.solve(map.coeffs);

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = phi.asDiagonal() * (x * psi);
    out.form = set.include_zeroth() ? WeightForm::on_values : WeightForm::on_differences;
    out.route = "mmls";
    out.cond_estimate = solve.cond();
    out.moment_residual_inf = (x.transpose() * out.weights - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

inline StencilWeights mmls_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                   const MultiIndexSet& set, const MappingVector& map, double mu) {
    int s = 0;
    for (int q = 0; q < set.p(); ++q)
        if (index_order(set.at(q)) == set.order()) ++s;
    return mmls_weights(nbhd, window, set, map, Vector(Vector::Constant(s, mu)));
}

/// Reconstruction coefficients Psi(u) of the regularized local fit, exposed
/// so the penalty-dominance behavior can be inspected.
inline Vector mmls_coefficients(const Neighborhood& nbhd, const RadialWindow& window,
                                const MultiIndexSet& set, double mu,
                                const Eigen::Ref<const Vector>& member_values) {
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);
    Matrix m = detail::symmetric_moment(x, phi);
    int s = 0;
    for (int q = 0; q < set.p(); ++q)
        if (index_order(set.at(q)) == set.order()) ++s;
    m += detail::mmls_diagonal(set, Vector(Vector::Constant(s, mu))).asDiagonal();
    PivotedSolve solve(m);
    solve.require_full_rank("mmls", nbhd.center);
    return solve.solve(Vector(x.transpose() * (phi.asDiagonal() * member_values)));
}

// --- CMLS ------------------------------------------------------------------

/// Problem data for the compact MLS penalties: interior and boundary
/// operators applied to the basis, sampled right-hand sides, and the
/// boundary indicator over the members.
struct CmlsProblem {
    MappingVector op_interior;
    MappingVector op_boundary;
    Vector f; // per member
    Vector g; // per member
    std::vector<std::uint8_t> boundary_mask;
    double eps_interior = 0.0;
    double eps_boundary = 0.0;
    bool hard_constraint = false; // center sits on the boundary
    double g_center = 0.0;
};

/// Compact MLS weights plus the affine contribution of the penalty data.
inline StencilWeights cmls_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                   const MultiIndexSet& set, const MappingVector& map,
                                   const CmlsProblem& prob) {
    if (prob.eps_interior < 0.0 || prob.eps_boundary < 0.0)
        throw InvalidParams("cmls penalties must be nonnegative");
    const int n = nbhd.count();
    const int p = set.p();
    Matrix x = detail::monomial_rows(nbhd, set, false);
    Vector phi = detail::window_values(nbhd, window);

    Matrix m = detail::symmetric_moment(x, phi);
    Vector fixed = Vector::Zero(p);
    for (int k = 0; k < n; ++k) {
        const Vector off = nbhd.offsets.row(k).transpose();
        if (prob.eps_interior > 0.0) {
            Vector lo = operator_applied_to_monomials(prob.op_interior, off, set);
            m.selfadjointView<Eigen::Lower>().rankUpdate(lo, prob.eps_interior * phi[k]);
            fixed += prob.eps_interior * phi[k] * prob.f[k] * lo;
        }
        const bool on_boundary =
            !prob.boundary_mask.empty() && prob.boundary_mask[static_cast<std::size_t>(k)];
        if (prob.eps_boundary > 0.0 && on_boundary) {
            Vector lb = operator_applied_to_monomials(prob.op_boundary, off, set);
            m.selfadjointView<Eigen::Lower>().rankUpdate(lb, prob.eps_boundary * phi[k]);
            fixed += prob.eps_boundary * phi[k] * prob.g[k] * lb;
        }
    }
    m.triangularView<Eigen::StrictlyUpper>() = m.transpose();

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.form = WeightForm::on_values;
    out.route = "cmls";

    if (!prob.hard_constraint) {
        PivotedSolve solve(m);
        solve.require_full_rank("cmls", nbhd.center);
        Vector y = solve.solve(map.coeffs); // symmetric system
        out.weights = phi.asDiagonal() * (x * y);
        out.affine = fixed.dot(y);
        out.cond_estimate = solve.cond();
        out.moment_residual_inf = (m * y - map.coeffs).lpNorm<Eigen::Infinity>();
        return out;
    }

    // Bordered system with the hard boundary row L_b P evaluated at the center.
    Matrix mb = Matrix::Zero(p + 1, p + 1);
    mb.topLeftCorner(p, p) = m;
    mb.block(0, p, p, 1) = prob.op_boundary.coeffs;
    mb.block(p, 0, 1, p) = prob.op_boundary.coeffs.transpose();
    Vector ce = Vector::Zero(p + 1);
    ce.head(p) = map.coeffs;

    PivotedSolve solve(mb);
    if (!solve.full_rank())
        throw SingularBordered("cmls: bordered constraint system is singular");
    Vector y = solve.solve(ce);
    out.weights = phi.asDiagonal() * (x * y.head(p));
    out.affine = fixed.dot(y.head(p)) + prob.g_center * y[p];
    out.cond_estimate = solve.cond();
    out.moment_residual_inf =
        (m * y.head(p) + prob.op_boundary.coeffs * y[p] - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

// --- FPsM ------------------------------------------------------------------

/// Center-weight-constrained weights through the extended system
/// X+ = [X, delta_ji], C+ = [C, -eps/h^2]; the solved center weight equals
/// -eps/h^2 to solver accuracy.
inline StencilWeights fpsm_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                   const MultiIndexSet& set, const MappingVector& map,
                                   double eps) {
    if (eps < 0.0) throw InvalidParams("fpsm center parameter must be nonnegative");
    const int cpos = nbhd.member_position(nbhd.center);
    if (cpos < 0) throw InvalidParams("fpsm requires the center among the members");
    const int n = nbhd.count();
    const int p = set.p();

    Matrix xe(n, p + 1);
    xe.leftCols(p) = detail::monomial_rows(nbhd, set, false);
    xe.col(p).setZero();
    xe(cpos, p) = 1.0;
    Vector phi = detail::window_values(nbhd, window);

    Matrix m = detail::symmetric_moment(xe, phi);
    Vector ce(p + 1);
    ce.head(p) = map.coeffs;
    ce[p] = -eps / (nbhd.radius * nbhd.radius);

    PivotedSolve solve(m);
    solve.require_full_rank("fpsm", nbhd.center);
    Vector psi = solve.solve(ce);

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = phi.asDiagonal() * (xe * psi);
    out.form = WeightForm::on_values;
    out.route = "fpsm";
    out.cond_estimate = solve.cond();
    out.moment_residual_inf =
        (xe.leftCols(p).transpose() * out.weights - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

// --- LSKUM -------------------------------------------------------------------

/// One-sided weights: only neighbors with sign * offset[axis] >= 0 (excluding
/// the center) enter the solve; excluded members report weight zero.
inline StencilWeights lskum_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                    const MultiIndexSet& set, const MappingVector& map, int axis,
                                    int sign) {
    if (set.include_zeroth()) throw InvalidParams("lskum solves without the zeroth moment");
    Neighborhood half;
    half.center = nbhd.center;
    half.radius = nbhd.radius;
    std::vector<int> keep;
    for (int k = 0; k < nbhd.count(); ++k) {
        if (nbhd.members[static_cast<std::size_t>(k)] == nbhd.center) continue;
        if (sign * nbhd.offsets(k, axis) >= 0.0) keep.push_back(k);
    }
    half.members.reserve(keep.size());
    half.offsets.resize(static_cast<int>(keep.size()), nbhd.offsets.cols());
    for (std::size_t q = 0; q < keep.size(); ++q) {
        half.members.push_back(nbhd.members[static_cast<std::size_t>(keep[q])]);
        half.offsets.row(static_cast<int>(q)) = nbhd.offsets.row(keep[q]);
    }
    if (half.count() == 0)
        throw SingularMoment("lskum: one-sided neighborhood is empty", nbhd.center);

    DerivativeSolve solve = l2e_solve(half, window, set);
    StencilWeights sub = solve.extract(map);

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = Vector::Zero(nbhd.count());
    for (std::size_t q = 0; q < keep.size(); ++q)
        out.weights[keep[q]] = sub.weights[static_cast<int>(q)];
    out.form = WeightForm::on_differences;
    out.route = "lskum";
    out.cond_estimate = solve.cond_estimate;
    out.moment_residual_inf =
        moment_residuals(out, nbhd, set, map).lpNorm<Eigen::Infinity>();
    return out;
}

// --- KMM ----------------------------------------------------------------------

/// Midpoint staggered weights: the Taylor rows live at half offsets and the
/// stencil acts on (u_{ji/2} - u_i), where each midpoint value is u_i or u_j
/// per the sign of v . e_ji (ties select u_i).
inline StencilWeights kmm_weights(const Neighborhood& nbhd, const RadialWindow& window,
                                  const MultiIndexSet& set, const MappingVector& map,
                                  const Eigen::Ref<const Eigen::Vector3d>& velocity) {
    if (set.include_zeroth()) throw InvalidParams("kmm solves without the zeroth moment");
    Matrix xh = detail::monomial_rows(nbhd, set, false, 0.5);
    Vector phi = detail::window_values(nbhd, window);
    Matrix m = detail::symmetric_moment(xh, phi);
    PivotedSolve solve(m);
    solve.require_full_rank("kmm", nbhd.center);
    Vector psi = solve.solve(map.coeffs);

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.weights = phi.asDiagonal() * (xh * psi);
    out.form = WeightForm::on_differences;
    out.route = "kmm";
    out.cond_estimate = solve.cond();
    out.take_neighbor.assign(static_cast<std::size_t>(nbhd.count()), 0);
    const int dim = static_cast<int>(nbhd.offsets.cols());
    for (int k = 0; k < nbhd.count(); ++k) {
        const double r = nbhd.offsets.row(k).norm();
        if (r == 0.0) continue; // center selects u_i
        double ve = 0.0;
        for (int d = 0; d < dim; ++d) ve += velocity[d] * nbhd.offsets(k, d) / r;
        if (ve < 0.0) out.take_neighbor[static_cast<std::size_t>(k)] = 1;
    }
    out.moment_residual_inf =
        (xh.transpose() * out.weights - map.coeffs).lpNorm<Eigen::Infinity>();
    return out;
}

// --- MFDM ------------------------------------------------------------------

/// Whole-cloud Richardson-extrapolated derivative evaluator. A low-order
/// (order L) solve is corrected by estimates of the order-(L, m] derivatives,
/// themselves composed from low-order derivatives of low-order derivative
/// fields. Sweeps are double-buffered so sweep k+1 reads only sweep-k values.
class MfdmOperator {
public:
    MfdmOperator(const PointCloud& cloud, const std::vector<Neighborhood>& nbhds,
                 const RadialWindow& window, int low_order, int target_order, int iterations)
        : set_low_(cloud.dim, low_order, true),
          set_full_(cloud.dim, target_order, true),
          iterations_(iterations) {
        if (low_order >= target_order) throw InvalidParams("mfdm requires L < m");
        for (int q = 0; q < set_full_.p(); ++q)
            if (index_order(set_full_.at(q)) > low_order) high_.push_back(set_full_.at(q));
        for (const MultiIndex& g : high_) splits_.push_back(find_split(g, low_order));

        const int n = cloud.size();
        solves_.reserve(static_cast<std::size_t>(n));
        xhigh_.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const Neighborhood& nb = nbhds[static_cast<std::size_t>(i)];
            solves_.push_back(l2e_solve(nb, window, set_low_));
            Matrix xh(nb.count(), static_cast<int>(high_.size()));
            for (int k = 0; k < nb.count(); ++k) {
                const Vector off = nb.offsets.row(k).transpose();
                for (std::size_t t = 0; t < high_.size(); ++t) {
                    const MultiIndex& a = high_[t];
                    double v = 1.0 / (exact_factorial(a[0]) * exact_factorial(a[1]) *
                                      exact_factorial(a[2]));
                    for (int d = 0; d < cloud.dim; ++d)
                        for (int e = 0; e < a[static_cast<std::size_t>(d)]; ++e) v *= off[d];
                    xh(k, static_cast<int>(t)) = v;
                }
            }
            xhigh_.push_back(std::move(xh));
        }
    }

    const MultiIndexSet& low_set() const { return set_low_; }
    bool non_contractive() const { return non_contractive_; }
    int iterations() const { return iterations_; }

    /// Corrected low-order derivative vectors at every point.
    std::vector<Vector> derivatives(const Eigen::Ref<const Vector>& field) const {
        const int n = static_cast<int>(solves_.size());
        std::vector<Vector> plain(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const DerivativeSolve& s = solves_[static_cast<std::size_t>(i)];
            Vector u(s.neighbors.size());
            for (std::size_t k = 0; k < s.neighbors.size(); ++k)
                u[static_cast<int>(k)] = field[s.neighbors[k]];
            plain[static_cast<std::size_t>(i)] = s.coefficients * u;
        }

        std::vector<Vector> current = plain;
        std::vector<Vector> prev_delta(static_cast<std::size_t>(n),
                                       Vector::Zero(set_low_.p()));
        double prev_step = -1.0;
        non_contractive_ = false;

        for (int sweep = 0; sweep < iterations_; ++sweep) {
            // High-order estimates from the neighbors' current low-order values.
            std::vector<Vector> high(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const DerivativeSolve& s = solves_[static_cast<std::size_t>(i)];
                Vector hi(static_cast<int>(high_.size()));
                for (std::size_t t = 0; t < high_.size(); ++t) {
                    const auto [outer, inner] = splits_[t];
                    double acc = 0.0;
                    for (std::size_t k = 0; k < s.neighbors.size(); ++k)
                        acc += s.coefficients(outer, static_cast<int>(k)) *
                               current[static_cast<std::size_t>(s.neighbors[k])][inner];
                    hi[static_cast<int>(t)] = acc;
                }
                high[static_cast<std::size_t>(i)] = std::move(hi);
            }
            // Corrections and the next buffer.
            std::vector<Vector> next(static_cast<std::size_t>(n));
            double step = 0.0;
            for (int i = 0; i < n; ++i) {
                const DerivativeSolve& s = solves_[static_cast<std::size_t>(i)];
                Vector v(static_cast<int>(s.neighbors.size()));
                for (int k = 0; k < v.size(); ++k)
                    v[k] = xhigh_[static_cast<std::size_t>(i)].row(k).dot(
                        high[static_cast<std::size_t>(i)]);
                Vector delta = s.coefficients * v;
                step = std::max(step,
                                (delta - prev_delta[static_cast<std::size_t>(i)])
                                    .lpNorm<Eigen::Infinity>());
                prev_delta[static_cast<std::size_t>(i)] = delta;
                next[static_cast<std::size_t>(i)] = plain[static_cast<std::size_t>(i)] - delta;
            }
            if (prev_step >= 0.0 && step > prev_step) non_contractive_ = true;
            prev_step = step;
            current = std::move(next);
        }
        return current;
    }

    /// Applies a |alpha| <= L operator after the correction sweeps.
    Vector apply(const Eigen::Ref<const Vector>& field, const MappingVector& map) const {
        if (map.max_order() > set_low_.order())
            throw UnsupportedOrder("mfdm evaluator carries derivatives up to order L only");
        Vector c = Vector::Zero(set_low_.p());
        for (int q = 0; q < map.coeffs.size(); ++q)
            if (map.coeffs[q] != 0.0) c[set_low_.position(map.set->at(q))] += map.coeffs[q];
        std::vector<Vector> d = derivatives(field);
        Vector out(static_cast<int>(d.size()));
        for (std::size_t i = 0; i < d.size(); ++i)
            out[static_cast<int>(i)] = c.dot(d[i]);
        return out;
    }

private:
    /// Splits gamma = a' + a'' with 1 <= |a'|, |a''| <= L, a' the
    /// graded-lex-smallest admissible choice.
    std::pair<int, int> find_split(const MultiIndex& gamma, int low) const {
        for (int q = 0; q < set_low_.p(); ++q) {
            const MultiIndex& a = set_low_.at(q);
            if (index_order(a) < 1) continue;
            MultiIndex rest{gamma[0] - a[0], gamma[1] - a[1], gamma[2] - a[2]};
            if (rest[0] < 0 || rest[1] < 0 || rest[2] < 0) continue;
            const int ro = index_order(rest);
            if (ro < 1 || ro > low) continue;
            return {q, set_low_.position(rest)};
        }
        throw InvalidParams("mfdm: no admissible split; increase L");
    }

    MultiIndexSet set_low_;
    MultiIndexSet set_full_;
    int iterations_;
    std::vector<MultiIndex> high_;
    std::vector<std::pair<int, int>> splits_;
    std::vector<DerivativeSolve> solves_;
    std::vector<Matrix> xhigh_;
    mutable bool non_contractive_ = false;
};

// --- LDD ----------------------------------------------------------------------

/// Linear moment matrix, offset vector and helpers shared by the LDD
/// gradient and Laplacian variants. The center is always filtered out.
struct LddWorkspace {
    Matrix m1;     // sum phi x x^T, n x n
    Vector offset; // O_i = sum phi x
    Vector phi;    // per member, zero at the center slot
    Matrix x;      // member offsets, N_i x n

    static LddWorkspace build(const Neighborhood& nbhd, const RadialWindow& window) {
        LddWorkspace ws;
        const int n = static_cast<int>(nbhd.offsets.cols());
        ws.x = nbhd.offsets;
        ws.phi = detail::window_values(nbhd, window);
        for (int k = 0; k < nbhd.count(); ++k)
            if (nbhd.members[static_cast<std::size_t>(k)] == nbhd.center) ws.phi[k] = 0.0;
        ws.m1 = Matrix::Zero(n, n);
        ws.offset = Vector::Zero(n);
        for (int k = 0; k < nbhd.count(); ++k) {
            ws.m1.selfadjointView<Eigen::Lower>().rankUpdate(ws.x.row(k).transpose(), ws.phi[k]);
            ws.offset += ws.phi[k] * ws.x.row(k).transpose();
        }
        ws.m1.triangularView<Eigen::StrictlyUpper>() = ws.m1.transpose();
        return ws;
    }
};

/// First-order gradient weights, one stencil per spatial component.
inline std::vector<StencilWeights> ldd_gradient(const Neighborhood& nbhd,
                                                const RadialWindow& window) {
    LddWorkspace ws = LddWorkspace::build(nbhd, window);
    const int n = static_cast<int>(nbhd.offsets.cols());
    PivotedSolve solve(ws.m1);
    solve.require_full_rank("ldd gradient", nbhd.center);
    std::vector<StencilWeights> out;
    for (int axis = 0; axis < n; ++axis) {
        Vector e = Vector::Zero(n);
        e[axis] = 1.0;
        Vector y = solve.solve(e);
        StencilWeights w;
        w.center = nbhd.center;
        w.neighbors = nbhd.members;
        w.weights = ws.phi.asDiagonal() * (ws.x * y);
        w.form = WeightForm::on_differences;
        w.route = "ldd";
        w.cond_estimate = solve.cond();
        w.moment_residual_inf =
            (ws.x.transpose() * w.weights - e).lpNorm<Eigen::Infinity>();
        out.push_back(std::move(w));
    }
    return out;
}

/// Laplacian weights in the naive, sum, full-inversion or basic-inversion
/// variant. The gradient dependency of the naive and inversion variants is
/// folded into the returned difference stencil.
inline StencilWeights ldd_laplacian(const Neighborhood& nbhd, const RadialWindow& window,
                                    LddVariant variant,
                                    const std::vector<StencilWeights>* grad = nullptr) {
    LddWorkspace ws = LddWorkspace::build(nbhd, window);
    const int n = static_cast<int>(nbhd.offsets.cols());
    const int cnt = nbhd.count();

    std::vector<StencilWeights> grad_local;
    auto gradient = [&]() -> const std::vector<StencilWeights>& {
        if (grad) return *grad;
        if (grad_local.empty()) grad_local = ldd_gradient(nbhd, window);
        return grad_local;
    };

    StencilWeights out;
    out.center = nbhd.center;
    out.neighbors = nbhd.members;
    out.form = WeightForm::on_differences;
    out.route = "ldd";

    Vector r2(cnt);
    for (int k = 0; k < cnt; ++k) r2[k] = ws.x.row(k).squaredNorm();

    if (variant == LddVariant::sum) {
        PivotedSolve solve(ws.m1);
        solve.require_full_rank("ldd sum", nbhd.center);
        Vector mo = solve.solve(ws.offset);
        Vector t(cnt);
        double denom = 0.0;
        for (int k = 0; k < cnt; ++k) {
            t[k] = 1.0 - ws.x.row(k).dot(mo);
            denom += ws.phi[k] * r2[k] * t[k];
        }
        const double scale = ws.phi.sum() * nbhd.radius * nbhd.radius;
        if (std::abs(denom) <= 1e-14 * std::max(scale, 1e-300))
            throw ZeroDenominator("ldd sum variant: vanishing denominator");
        out.weights = Vector(cnt);
        for (int k = 0; k < cnt; ++k)
            out.weights[k] = 2.0 * n * ws.phi[k] * t[k] / denom;
        out.cond_estimate = solve.cond();
        return out;
    }

    if (variant == LddVariant::naive) {
        // The pairwise estimate is an average, so absolutely normalized
        // weights psi = phi / sum(phi) are used.
        const double psum = ws.phi.sum();
        if (psum <= 0.0) throw ZeroDenominator("ldd naive variant: empty window support");
        Vector base(cnt);
        for (int k = 0; k < cnt; ++k)
            base[k] = ws.phi[k] > 0.0 ? 2.0 * n * (ws.phi[k] / psum) / r2[k] : 0.0;
        Vector a = Vector::Zero(n);
        for (int k = 0; k < cnt; ++k) a += base[k] * ws.x.row(k).transpose();
        out.weights = base;
        const auto& g = gradient();
        for (int axis = 0; axis < n; ++axis) out.weights -= a[axis] * g[static_cast<std::size_t>(axis)].weights;
        out.cond_estimate = g[0].cond_estimate;
        return out;
    }

    // Inversion variants share the Q vectors.
    PivotedSolve m1solve(ws.m1);
    m1solve.require_full_rank("ldd inversion", nbhd.center);
    Matrix x2(cnt, n);
    for (int k = 0; k < cnt; ++k)
        for (int d = 0; d < n; ++d) x2(k, d) = ws.x(k, d) * ws.x(k, d);
    Matrix t = Matrix::Zero(n, n); // sum phi x (x^2)^T
    for (int k = 0; k < cnt; ++k)
        t += ws.phi[k] * (ws.x.row(k).transpose() * x2.row(k));
    Matrix q(cnt, n);
    for (int k = 0; k < cnt; ++k)
        q.row(k) = x2.row(k) - (t.transpose() * m1solve.solve(Vector(ws.x.row(k).transpose()))).transpose();

    Matrix mhat = Matrix::Zero(n, n);
    if (variant == LddVariant::ls_full) {
        for (int k = 0; k < cnt; ++k)
            mhat.selfadjointView<Eigen::Lower>().rankUpdate(q.row(k).transpose(), ws.phi[k]);
    } else {
        for (int k = 0; k < cnt; ++k)
            mhat.selfadjointView<Eigen::Lower>().rankUpdate(x2.row(k).transpose(), ws.phi[k]);
    }
    mhat.triangularView<Eigen::StrictlyUpper>() = mhat.transpose();
    PivotedSolve msolve(mhat);
    msolve.require_full_rank("ldd inversion", nbhd.center);
    Vector z = msolve.solve(Vector(Vector::Ones(n)));

    Vector base(cnt);
    for (int k = 0; k < cnt; ++k) base[k] = 2.0 * ws.phi[k] * q.row(k).dot(z);
    Vector a = Vector::Zero(n);
    for (int k = 0; k < cnt; ++k) a += base[k] * ws.x.row(k).transpose();
    out.weights = base;
    const auto& g = gradient();
    for (int axis = 0; axis < n; ++axis) out.weights -= a[axis] * g[static_cast<std::size_t>(axis)].weights;
    out.cond_estimate = std::max(m1solve.cond(), msolve.cond());
    return out;
}

// --- dispatch ----------------------------------------------------------------

/// Sampled per-point problem data consumed by data-dependent presets (CMLS).
struct ProblemFields {
    Vector f;                           // PDE right-hand side at every point
    Vector g;                           // boundary values at every point
    std::vector<std::uint8_t> boundary; // boundary indicator at every point
};

namespace detail {

inline bool is_laplacian(const std::vector<OperatorTerm>& terms, int dim) {
    if (static_cast<int>(terms.size()) != dim) return false;
    std::vector<bool> seen(static_cast<std::size_t>(dim), false);
    for (const auto& [a, c] : terms) {
        if (c != 1.0 || index_order(a) != 2) return false;
        for (int d = 0; d < dim; ++d)
            if (a[static_cast<std::size_t>(d)] == 2) seen[static_cast<std::size_t>(d)] = true;
    }
    for (bool s : seen)
        if (!s) return false;
    return true;
}

inline int pure_first_axis(const std::vector<OperatorTerm>& terms) {
    if (terms.size() != 1 || terms[0].second != 1.0) return -1;
    const MultiIndex& a = terms[0].first;
    if (index_order(a) != 1) return -1;
    for (int d = 0; d < 3; ++d)
        if (a[static_cast<std::size_t>(d)] == 1) return d;
    return -1;
}

} // namespace detail

/// Computes the stencil of one method at one point. `fields` supplies the
/// sampled problem data that CMLS folds into its penalties.
inline StencilWeights stencil_for(const MethodConfig& cfg, const PointCloud& cloud,
                                  const std::vector<Neighborhood>& nbhds, int i,
                                  const std::vector<OperatorTerm>& terms,
                                  const ProblemFields* fields = nullptr) {
    validate_preset(cfg);
    const Neighborhood& nbhd = nbhds[static_cast<std::size_t>(i)];

    if (cfg.name == MethodName::dcpse)
        return dcpse_weights(nbhd, cfg.family, cloud.dim, cfg.order, terms, cfg.precondition);

    if (cfg.name == MethodName::ldd) {
        if (detail::is_laplacian(terms, cloud.dim))
            return ldd_laplacian(nbhd, cfg.family.window, cfg.ldd_variant);
        const int axis = detail::pure_first_axis(terms);
        if (axis < 0 || axis >= cloud.dim)
            throw UnsupportedOrder("ldd provides gradients and Laplacians only");
        return ldd_gradient(nbhd, cfg.family.window)[static_cast<std::size_t>(axis)];
    }

    const bool zeroth = cfg.name == MethodName::grkp ? cfg.grkp_l == 0 : cfg.include_zeroth;
    MultiIndexSet set(cloud.dim, cfg.order, zeroth);
    MappingVector map = mapping_vector(terms, set);
    StencilWeights w;

    switch (cfg.route) {
        case EngineRoute::aom: {
            Vector volumes;
            if (cfg.volumes.size() > 0) {
                volumes.resize(nbhd.count());
                for (int k = 0; k < nbhd.count(); ++k)
                    volumes[k] = cfg.volumes[nbhd.members[static_cast<std::size_t>(k)]];
            }
            w = aom_weights(nbhd, cfg.family, set, map, cfg.precondition, volumes);
            break;
        }
        case EngineRoute::l2e: {
            if (cfg.name == MethodName::mmls) {
                w = mmls_weights(nbhd, cfg.family.window, set, map, cfg.mu);
            } else if (cfg.name == MethodName::cmls) {
                CmlsProblem prob;
                prob.op_interior = map;
                std::vector<OperatorTerm> dirichlet{{make_index(0), 1.0}};
                prob.op_boundary = mapping_vector(dirichlet, set);
                prob.eps_interior = cfg.eps_omega;
                prob.eps_boundary = cfg.eps_boundary;
                prob.f = Vector::Zero(nbhd.count());
                prob.g = Vector::Zero(nbhd.count());
                if (fields) {
                    prob.boundary_mask.resize(static_cast<std::size_t>(nbhd.count()), 0);
                    for (int k = 0; k < nbhd.count(); ++k) {
                        const int j = nbhd.members[static_cast<std::size_t>(k)];
                        prob.f[k] = fields->f.size() > 0 ? fields->f[j] : 0.0;
                        prob.g[k] = fields->g.size() > 0 ? fields->g[j] : 0.0;
                        prob.boundary_mask[static_cast<std::size_t>(k)] =
                            fields->boundary.empty() ? 0 : fields->boundary[static_cast<std::size_t>(j)];
                    }
                    if (!fields->boundary.empty() && fields->boundary[static_cast<std::size_t>(i)]) {
                        prob.hard_constraint = true;
                        prob.g_center = fields->g.size() > 0 ? fields->g[i] : 0.0;
                    }
                }
                w = cmls_weights(nbhd, cfg.family.window, set, map, prob);
            } else if (cfg.name == MethodName::lskum) {
                w = lskum_weights(nbhd, cfg.family.window, set, map, cfg.direction_axis,
                                  cfg.direction_sign);
            } else if (cfg.name == MethodName::kmm) {
                w = kmm_weights(nbhd, cfg.family.window, set, map, cfg.velocity);
            } else {
                w = l2e_solve(nbhd, cfg.family.window, set).extract(map);
                w.moment_residual_inf =
                    moment_residuals(w, nbhd, set, map).lpNorm<Eigen::Infinity>();
            }
            break;
        }
        case EngineRoute::l2p: {
            if (cfg.name == MethodName::fpsm)
                w = fpsm_weights(nbhd, cfg.family.window, set, map, cfg.eps_fpsm);
            else
                w = l2p_weights(nbhd, cfg.family.window, set, map);
            break;
        }
        case EngineRoute::gl2p: {
            AbfFamily family = cfg.family;
            w = gl2p_weights(nbhd, family, set, map);
            break;
        }
        case EngineRoute::direct: {
            w = direct_derivative_weights(nbhd, cfg.family.window, set, map);
            break;
        }
        case EngineRoute::special:
            throw UnknownMethod("unhandled special route");
    }
    w.route = to_string(cfg.name);
    return w;
}

} // namespace colloc
