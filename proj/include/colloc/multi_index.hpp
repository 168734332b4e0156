#pragma once

#include <Eigen/Dense>

#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "colloc/errors.hpp"

namespace colloc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Multi-index in up to three dimensions; unused trailing entries are zero.
using MultiIndex = std::array<int, 3>;

inline int index_order(const MultiIndex& a) { return a[0] + a[1] + a[2]; }

inline MultiIndex make_index(int a0, int a1 = 0, int a2 = 0) { return MultiIndex{a0, a1, a2}; }

/// Exact integer factorials up to 12, converted to double once.
inline double exact_factorial(int k) {
    static const double table[] = {1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0,
                                   40320.0, 362880.0, 3628800.0, 39916800.0, 479001600.0};
    if (k < 0 || k > 12) throw UnsupportedOrder("factorial table covers orders 0..12");
    return table[k];
}

/// Ordered set of multi-indices |a| in [k0, m] in graded lexicographic order,
/// x before y before z; reproduces the 2D listing 1, x, y, x^2/2, xy, y^2/2, ...
class MultiIndexSet {
public:
    MultiIndexSet(int dim, int order, bool include_zeroth)
        : dim_(dim), order_(order), include_zeroth_(include_zeroth) {
        if (dim < 1 || dim > 3) throw InvalidParams("dimension must be 1, 2 or 3");
        if (order < 1) throw InvalidParams("approximation order must be >= 1");
        const int k0 = include_zeroth ? 0 : 1;
        for (int k = k0; k <= order; ++k) emit_degree(k);
        inv_factorial_.resize(indices_.size());
        for (std::size_t q = 0; q < indices_.size(); ++q) {
            const MultiIndex& a = indices_[q];
            inv_factorial_[q] =
                1.0 / (exact_factorial(a[0]) * exact_factorial(a[1]) * exact_factorial(a[2]));
        }
    }

    int dim() const { return dim_; }
    int order() const { return order_; }
    bool include_zeroth() const { return include_zeroth_; }
    int p() const { return static_cast<int>(indices_.size()); }
    const std::vector<MultiIndex>& indices() const { return indices_; }
    const MultiIndex& at(int q) const { return indices_[static_cast<std::size_t>(q)]; }
    double inv_factorial(int q) const { return inv_factorial_[static_cast<std::size_t>(q)]; }

    /// Position of a multi-index in the set, or -1 when absent.
    int position(const MultiIndex& a) const {
        for (std::size_t q = 0; q < indices_.size(); ++q)
            if (indices_[q] == a) return static_cast<int>(q);
        return -1;
    }

private:
    void emit_degree(int k) {
        if (dim_ == 1) {
            indices_.push_back(make_index(k));
            return;
        }
        for (int a0 = k; a0 >= 0; --a0) {
            if (dim_ == 2) {
                indices_.push_back(make_index(a0, k - a0));
            } else {
                for (int a1 = k - a0; a1 >= 0; --a1)
                    indices_.push_back(make_index(a0, a1, k - a0 - a1));
            }
        }
    }

    int dim_;
    int order_;
    bool include_zeroth_;
    std::vector<MultiIndex> indices_;
    std::vector<double> inv_factorial_;
};

/// Scaled Taylor monomials: entry for a is offset^a / a!.
inline Vector monomial_vector(const Eigen::Ref<const Vector>& offset, const MultiIndexSet& set) {
    Vector out(set.p());
    for (int q = 0; q < set.p(); ++q) {
        const MultiIndex& a = set.at(q);
        double v = set.inv_factorial(q);
        for (int d = 0; d < set.dim(); ++d)
            for (int e = 0; e < a[d]; ++e) v *= offset[d];
        out[q] = v;
    }
    return out;
}

/// Linear differential operator as a combination vector over the derivative slots.
struct MappingVector {
    Vector coeffs;
    const MultiIndexSet* set = nullptr;

    /// Total degree when all contributing terms share it, otherwise -1.
    int uniform_order() const {
        int ord = -1;
        for (int q = 0; q < coeffs.size(); ++q) {
            if (coeffs[q] == 0.0) continue;
            const int k = index_order(set->at(q));
            if (ord == -1)
                ord = k;
            else if (ord != k)
                return -1;
        }
        return ord;
    }

    /// Largest total degree among contributing terms (0 when empty).
    int max_order() const {
        int ord = 0;
        for (int q = 0; q < coeffs.size(); ++q)
            if (coeffs[q] != 0.0) ord = std::max(ord, index_order(set->at(q)));
        return ord;
    }
};

using OperatorTerm = std::pair<MultiIndex, double>;

inline MappingVector mapping_vector(const std::vector<OperatorTerm>& terms,
                                    const MultiIndexSet& set) {
    MappingVector map;
    map.set = &set;
    map.coeffs = Vector::Zero(set.p());
    for (const auto& [a, c] : terms) {
        const int k = index_order(a);
        if (k > set.order())
            throw UnsupportedOrder("operator order exceeds the approximation order");
        if (k == 0 && !set.include_zeroth())
            throw UnsupportedOrder("zeroth-order term requested on a set without the zeroth entry");
        const int q = set.position(a);
        if (q < 0) throw InvalidParams("multi-index does not belong to the working set");
        map.coeffs[q] += c;
    }
    return map;
}

/// Diagonal h-power scaling that rescales monomials and mapping vectors alike.
struct Preconditioner {
    Vector scales; // entry for a is h^{-|a|}

    static Preconditioner from(double h, const MultiIndexSet& set) {
        Preconditioner pre;
        pre.scales.resize(set.p());
        for (int q = 0; q < set.p(); ++q)
            pre.scales[q] = std::pow(h, -index_order(set.at(q)));
        return pre;
    }

    Vector apply(const Eigen::Ref<const Vector>& v) const { return scales.cwiseProduct(v); }
};

/// Entrywise derivative of the scaled-monomial vector along axis d.
/// Shifts every index down by e_d; indices leaving the set contribute zero.
inline Vector monomial_vector_derivative(const Eigen::Ref<const Vector>& offset,
                                         const MultiIndexSet& set, int axis) {
    Vector out = Vector::Zero(set.p());
    for (int q = 0; q < set.p(); ++q) {
        MultiIndex a = set.at(q);
        if (a[axis] == 0) continue;
        a[axis] -= 1;
        double v = 1.0;
        for (int d = 0; d < set.dim(); ++d) {
            v /= exact_factorial(a[d]);
            for (int e = 0; e < a[d]; ++e) v *= offset[d];
        }
        out[q] = v;
    }
    return out;
}

/// Applies a constant-coefficient operator to the monomial vector at a given offset:
/// entry for a is (L x^a/a!)(offset). Used by penalty rows acting on the basis.
inline Vector operator_applied_to_monomials(const MappingVector& map,
                                            const Eigen::Ref<const Vector>& offset,
                                            const MultiIndexSet& set) {
    Vector out = Vector::Zero(set.p());
    for (int t = 0; t < map.coeffs.size(); ++t) {
        if (map.coeffs[t] == 0.0) continue;
        const MultiIndex& b = map.set->at(t);
        for (int q = 0; q < set.p(); ++q) {
            const MultiIndex& a = set.at(q);
            MultiIndex r{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
            if (r[0] < 0 || r[1] < 0 || r[2] < 0) continue;
            double v = 1.0;
            for (int d = 0; d < set.dim(); ++d) {
                v /= exact_factorial(r[d]);
                for (int e = 0; e < r[d]; ++e) v *= offset[d];
            }
            out[q] += map.coeffs[t] * v;
        }
    }
    return out;
}

// --- operator spec grammar ---------------------------------------------------
// Accepted forms: "laplacian", "d/dx", "d2/dxdy", "d3/dx2dy",
// and explicit sums "alpha=(2,0)*1.0 + alpha=(0,2)*1.0".

namespace detail {

inline void skip_ws(const std::string& s, std::size_t& i) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
}

inline std::vector<OperatorTerm> parse_explicit_terms(const std::string& s, int dim) {
    std::vector<OperatorTerm> terms;
    std::size_t i = 0;
    while (true) {
        skip_ws(s, i);
        if (s.compare(i, 7, "alpha=(") != 0)
            throw InvalidParams("operator spec: expected 'alpha=(' in '" + s + "'");
        i += 7;
        MultiIndex a{0, 0, 0};
        for (int d = 0;; ++d) {
            skip_ws(s, i);
            std::size_t used = 0;
            int v = std::stoi(s.substr(i), &used);
            if (v < 0) throw InvalidParams("operator spec: negative exponent");
            if (d >= 3) throw InvalidParams("operator spec: more than three components");
            a[static_cast<std::size_t>(d)] = v;
            i += used;
            skip_ws(s, i);
            if (i < s.size() && s[i] == ',') {
                ++i;
                continue;
            }
            if (i < s.size() && s[i] == ')') {
                ++i;
                if (d + 1 > dim) throw InvalidParams("operator spec: component count exceeds dimension");
                break;
            }
            throw InvalidParams("operator spec: malformed alpha tuple");
        }
        double coef = 1.0;
        skip_ws(s, i);
        if (i < s.size() && s[i] == '*') {
            ++i;
            skip_ws(s, i);
            std::size_t used = 0;
            coef = std::stod(s.substr(i), &used);
            i += used;
        }
        terms.push_back({a, coef});
        skip_ws(s, i);
        if (i >= s.size()) break;
        if (s[i] != '+') throw InvalidParams("operator spec: expected '+' between terms");
        ++i;
    }
    return terms;
}

inline std::vector<OperatorTerm> parse_derivative_form(const std::string& s, int dim) {
    // d[k]/d<axis><exp?>...
    std::size_t i = 1;
    int declared = -1;
    if (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        std::size_t used = 0;
        declared = std::stoi(s.substr(i), &used);
        i += used;
    }
    if (i >= s.size() || s[i] != '/')
        throw InvalidParams("operator spec: expected '/' in '" + s + "'");
    ++i;
    MultiIndex a{0, 0, 0};
    while (i < s.size()) {
        if (s[i] != 'd') throw InvalidParams("operator spec: expected 'd<axis>' in '" + s + "'");
        ++i;
        if (i >= s.size()) throw InvalidParams("operator spec: dangling 'd'");
        int axis = -1;
        if (s[i] == 'x') axis = 0;
        if (s[i] == 'y') axis = 1;
        if (s[i] == 'z') axis = 2;
        if (axis < 0 || axis >= dim)
            throw InvalidParams("operator spec: axis out of range in '" + s + "'");
        ++i;
        int exp = 1;
        if (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            std::size_t used = 0;
            exp = std::stoi(s.substr(i), &used);
            i += used;
        }
        a[static_cast<std::size_t>(axis)] += exp;
    }
    if (declared >= 0 && declared != index_order(a))
        throw InvalidParams("operator spec: declared order disagrees with axis exponents");
    return {{a, 1.0}};
}

} // namespace detail

inline std::vector<OperatorTerm> parse_operator_terms(const std::string& spec, int dim) {
    std::string s;
    for (char c : spec)
        if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
    if (s.empty()) throw InvalidParams("empty operator spec");
    if (s == "laplacian") {
        std::vector<OperatorTerm> terms;
        for (int d = 0; d < dim; ++d) {
            MultiIndex a{0, 0, 0};
            a[static_cast<std::size_t>(d)] = 2;
            terms.push_back({a, 1.0});
        }
        return terms;
    }
    if (s.rfind("alpha=", 0) == 0) return detail::parse_explicit_terms(spec, dim);
    if (s[0] == 'd') return detail::parse_derivative_form(s, dim);
    throw InvalidParams("unrecognized operator spec '" + spec + "'");
}

inline MappingVector parse_operator(const std::string& spec, const MultiIndexSet& set) {
    return mapping_vector(parse_operator_terms(spec, set.dim()), set);
}

} // namespace colloc
