#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "colloc/errors.hpp"
#include "colloc/multi_index.hpp"

namespace colloc {

enum class WindowKind { constant, gaussian, wendland_c2, cubic_spline };

/// Compactly supported radial window evaluated on the normalized distance
/// q = r/h; identically zero for q >= 1. Profiles:
///   gaussian     exp(-q^2/sigma^2), truncated at q = 1
///   wendland_c2  (1-q)^4 (4q+1)
///   cubic_spline standard B-spline rescaled to support 1
///   constant     1 on the support
struct RadialWindow {
    WindowKind kind = WindowKind::wendland_c2;
    double sigma = 0.3;

    double operator()(double q) const { return q < 1.0 ? profile(q) : 0.0; }

    double value(double r, double h) const { return (*this)(r / h); }

    double profile(double q) const {
        switch (kind) {
            case WindowKind::constant: return 1.0;
            case WindowKind::gaussian: return std::exp(-q * q / (sigma * sigma));
            case WindowKind::wendland_c2: {
                const double s = 1.0 - q;
                return s * s * s * s * (4.0 * q + 1.0);
            }
            case WindowKind::cubic_spline: {
                if (q <= 0.5) return 2.0 / 3.0 + 4.0 * q * q * (q - 1.0);
                const double s = 1.0 - q;
                return 4.0 / 3.0 * s * s * s;
            }
        }
        return 0.0;
    }

    /// d^k/dq^k of the profile on the open support (k = 0 returns the profile).
    double profile_deriv(int k, double q) const {
        if (k == 0) return profile(q);
        switch (kind) {
            case WindowKind::constant: return 0.0;
            case WindowKind::gaussian: {
                // d^k e^{-a q^2} = P_k(q) e^{-a q^2} with P_{k+1} = P_k' - 2 a q P_k
                const double a = 1.0 / (sigma * sigma);
                std::vector<double> poly{1.0};
                for (int it = 0; it < k; ++it) {
                    std::vector<double> next(poly.size() + 1, 0.0);
                    for (std::size_t c = 1; c < poly.size(); ++c)
                        next[c - 1] += static_cast<double>(c) * poly[c];
                    for (std::size_t c = 0; c < poly.size(); ++c) next[c + 1] -= 2.0 * a * poly[c];
                    poly = std::move(next);
                }
                double val = 0.0;
                for (std::size_t c = poly.size(); c-- > 0;) val = val * q + poly[c];
                return val * std::exp(-a * q * q);
            }
            case WindowKind::wendland_c2:
                return poly_deriv({1.0, 0.0, -10.0, 20.0, -15.0, 4.0}, k, q);
            case WindowKind::cubic_spline:
                if (q <= 0.5) return poly_deriv({2.0 / 3.0, 0.0, -4.0, 4.0}, k, q);
                return poly_deriv({4.0 / 3.0, -4.0, 4.0, -4.0 / 3.0}, k, q);
        }
        return 0.0;
    }

private:
    static double poly_deriv(std::vector<double> c, int k, double q) {
        for (int it = 0; it < k; ++it) {
            for (std::size_t i = 1; i < c.size(); ++i) c[i - 1] = static_cast<double>(i) * c[i];
            if (c.empty()) return 0.0;
            c.pop_back();
            if (c.empty()) return 0.0;
        }
        double val = 0.0;
        for (std::size_t i = c.size(); i-- > 0;) val = val * q + c[i];
        return val;
    }
};

inline double eval_window(const RadialWindow& window, double r, double h) {
    return window.value(r, h);
}

enum class AbfKind {
    taylor_monomials,        // W = X phi
    scaled_taylor_monomials, // W = (H X) phi
    orthogonal_polynomials,  // W = P phi, tensor Hermite or Legendre in x/h
    rbf_derivatives,         // W = derivatives of the window up to order m
    midpoint_monomials,      // W = X(offset/2) phi
    extended_taylor          // W = [X, delta_ji] phi (center-constraint systems)
};

enum class PolyBasis { hermite, legendre };

/// Descriptor of the anisotropic basis functions used to build weight ansatze.
struct AbfFamily {
    AbfKind kind = AbfKind::taylor_monomials;
    RadialWindow window;
    PolyBasis poly = PolyBasis::legendre;

    int length(const MultiIndexSet& set) const {
        return kind == AbfKind::extended_taylor ? set.p() + 1 : set.p();
    }
};

namespace detail {

inline double orth_poly(PolyBasis basis, int k, double t) {
    double pm1 = 1.0;
    if (k == 0) return 1.0;
    double pc = t;
    for (int i = 1; i < k; ++i) {
        double pn;
        if (basis == PolyBasis::hermite)
            pn = t * pc - static_cast<double>(i) * pm1; // probabilists' recursion
        else
            pn = ((2.0 * i + 1.0) * t * pc - static_cast<double>(i) * pm1) / (i + 1.0);
        pm1 = pc;
        pc = pn;
    }
    return pc;
}

/// One addend of a multi-index derivative of a radial function:
/// coef * x^mono * g^(k)(q) / h^k * r^(-rpow).
struct RadialTerm {
    double coef;
    MultiIndex mono;
    int k;
    int rpow;
};

inline std::vector<RadialTerm> differentiate_terms(const std::vector<RadialTerm>& in, int axis,
                                                   double h) {
    std::vector<RadialTerm> out;
    out.reserve(in.size() * 3);
    for (const RadialTerm& t : in) {
        if (t.mono[static_cast<std::size_t>(axis)] > 0) {
            RadialTerm a = t;
            a.coef *= t.mono[static_cast<std::size_t>(axis)];
            a.mono[static_cast<std::size_t>(axis)] -= 1;
            out.push_back(a);
        }
        {
            RadialTerm b = t;
            b.coef /= h;
            b.mono[static_cast<std::size_t>(axis)] += 1;
            b.k += 1;
            b.rpow += 1;
            out.push_back(b);
        }
        if (t.rpow != 0) {
            RadialTerm c = t;
            c.coef *= -t.rpow;
            c.mono[static_cast<std::size_t>(axis)] += 1;
            c.rpow += 2;
            out.push_back(c);
        }
    }
    return out;
}

inline std::vector<RadialTerm> radial_derivative_terms(const MultiIndex& alpha, double h) {
    std::vector<RadialTerm> terms{{1.0, make_index(0), 0, 0}};
    for (int axis = 0; axis < 3; ++axis)
        for (int rep = 0; rep < alpha[static_cast<std::size_t>(axis)]; ++rep)
            terms = differentiate_terms(terms, axis, h);
    return terms;
}

inline double eval_radial_terms(const std::vector<RadialTerm>& terms, const RadialWindow& window,
                                const Eigen::Ref<const Vector>& offset, double h) {
    const double r = offset.norm();
    if (r == 0.0) {
        // Only the monomial-free, r-power-free addends survive at the center;
        // no-zeroth operators never consume this value anyway.
        double val = 0.0;
        for (const RadialTerm& t : terms)
            if (t.mono == make_index(0) && t.rpow == 0)
                val += t.coef * window.profile_deriv(t.k, 0.0) / std::pow(h, t.k);
        return val;
    }
    const double q = r / h;
    double val = 0.0;
    for (const RadialTerm& t : terms) {
        double m = t.coef;
        for (int d = 0; d < offset.size(); ++d)
            for (int e = 0; e < t.mono[static_cast<std::size_t>(d)]; ++e) m *= offset[d];
        val += m * window.profile_deriv(t.k, q) / std::pow(h, t.k) / std::pow(r, t.rpow);
    }
    return val;
}

} // namespace detail

/// Evaluates one ABF vector for a member at the given offset from the center.
/// is_center flags the member j == i (needed by the extended family).
inline Vector eval_abf(const AbfFamily& family, const MultiIndexSet& set,
                       const Eigen::Ref<const Vector>& offset, double h, bool is_center) {
    const double r = offset.norm();
    const double phi = family.window.value(r, h);
    switch (family.kind) {
        case AbfKind::taylor_monomials: return monomial_vector(offset, set) * phi;
        case AbfKind::scaled_taylor_monomials: {
            Vector x = monomial_vector(offset, set);
            return Preconditioner::from(h, set).apply(x) * phi;
        }
        case AbfKind::orthogonal_polynomials: {
            Vector out(set.p());
            for (int q = 0; q < set.p(); ++q) {
                const MultiIndex& a = set.at(q);
                double v = 1.0;
                for (int d = 0; d < set.dim(); ++d)
                    v *= detail::orth_poly(family.poly, a[static_cast<std::size_t>(d)],
                                           offset[d] / h);
                out[q] = v;
            }
            return out * phi;
        }
        case AbfKind::rbf_derivatives: {
            Vector out(set.p());
            for (int q = 0; q < set.p(); ++q) {
                auto terms = detail::radial_derivative_terms(set.at(q), h);
                out[q] = detail::eval_radial_terms(terms, family.window, offset, h);
            }
            return out;
        }
        case AbfKind::midpoint_monomials: return monomial_vector(0.5 * offset, set) * phi;
        case AbfKind::extended_taylor: {
            Vector out(set.p() + 1);
            out.head(set.p()) = monomial_vector(offset, set) * phi;
            out[set.p()] = is_center ? family.window.value(0.0, h) : 0.0;
            return out;
        }
    }
    throw InvalidParams("unknown ABF kind");
}

inline std::string to_string(WindowKind k) {
    switch (k) {
        case WindowKind::constant: return "constant";
        case WindowKind::gaussian: return "gaussian";
        case WindowKind::wendland_c2: return "wendland_c2";
        case WindowKind::cubic_spline: return "cubic_spline";
    }
    return "?";
}

inline WindowKind window_from_string(const std::string& s) {
    if (s == "constant") return WindowKind::constant;
    if (s == "gaussian") return WindowKind::gaussian;
    if (s == "wendland_c2") return WindowKind::wendland_c2;
    if (s == "cubic_spline") return WindowKind::cubic_spline;
    throw InvalidParams("unknown window kind '" + s + "'");
}

inline std::string to_string(AbfKind k) {
    switch (k) {
        case AbfKind::taylor_monomials: return "taylor_monomials";
        case AbfKind::scaled_taylor_monomials: return "scaled_taylor_monomials";
        case AbfKind::orthogonal_polynomials: return "orthogonal_polynomials";
        case AbfKind::rbf_derivatives: return "rbf_derivatives";
        case AbfKind::midpoint_monomials: return "midpoint_monomials";
        case AbfKind::extended_taylor: return "extended_taylor";
    }
    return "?";
}

inline AbfKind abf_from_string(const std::string& s) {
    if (s == "taylor_monomials") return AbfKind::taylor_monomials;
    if (s == "scaled_taylor_monomials") return AbfKind::scaled_taylor_monomials;
    if (s == "orthogonal_polynomials") return AbfKind::orthogonal_polynomials;
    if (s == "rbf_derivatives") return AbfKind::rbf_derivatives;
    if (s == "midpoint_monomials") return AbfKind::midpoint_monomials;
    if (s == "extended_taylor") return AbfKind::extended_taylor;
    throw InvalidParams("unknown basis kind '" + s + "'");
}

} // namespace colloc
