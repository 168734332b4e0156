// Builds a small ring of points around a center, derives the Laplacian
// stencil with three different routes and prints them side by side.

#include <cstdio>

#include "colloc/colloc.hpp"

int main() {
    using namespace colloc;

    const int ring = 10;
    PointCloud cloud;
    cloud.dim = 2;
    cloud.positions.resize(ring + 1, 2);
    cloud.positions.row(0).setZero();
    for (int k = 0; k < ring; ++k) {
        const double a = 2.0 * std::numbers::pi * k / ring;
        const double r = 0.08 + 0.04 * (k % 3);
        cloud.positions(k + 1, 0) = r * std::cos(a);
        cloud.positions(k + 1, 1) = r * std::sin(a);
    }
    cloud.radii = Vector::Constant(ring + 1, 0.2);

    auto nbhds = build_neighborhoods(cloud);
    auto terms = parse_operator_terms("laplacian", 2);

    for (MethodName name : {MethodName::gfdm, MethodName::dcpse, MethodName::gl2p}) {
        MethodConfig cfg = preset(name, 2);
        StencilWeights w = stencil_for(cfg, cloud, nbhds, 0, terms);
        std::printf("%-6s form=%-14s cond=%.2e residual=%.2e\n  weights:", w.route.c_str(),
                    to_string(w.form).c_str(), w.cond_estimate, w.moment_residual_inf);
        for (int k = 0; k < w.weights.size(); ++k) std::printf(" % .4f", w.weights[k]);
        std::printf("\n");
    }
    return 0;
}
