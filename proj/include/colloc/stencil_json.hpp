#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "colloc/study.hpp"

namespace colloc {

inline std::string error_tag(const Error& e) {
    if (dynamic_cast<const SingularMoment*>(&e)) return "singular_moment";
    if (dynamic_cast<const SingularBordered*>(&e)) return "singular_bordered";
    if (dynamic_cast<const ZeroDenominator*>(&e)) return "zero_denominator";
    if (dynamic_cast<const UnsupportedOrder*>(&e)) return "unsupported_order";
    if (dynamic_cast<const InvalidParams*>(&e)) return "invalid_params";
    if (dynamic_cast<const UnknownMethod*>(&e)) return "unknown_method";
    if (dynamic_cast<const LinearSolveFailure*>(&e)) return "linear_solve_failure";
    return "error";
}

inline nlohmann::json stencil_to_json(const StencilWeights& w) {
    nlohmann::json j;
    j["i"] = w.center;
    j["neighbors"] = w.neighbors;
    j["weights"] = std::vector<double>(w.weights.data(), w.weights.data() + w.weights.size());
    j["form"] = to_string(w.form);
    j["route"] = w.route;
    j["cond"] = w.cond_estimate;
    j["moment_residual_inf"] = w.moment_residual_inf;
    if (w.affine != 0.0) j["affine"] = w.affine;
    return j;
}

/// Side-by-side stencil dump at one point for a list of methods. Numerical
/// failures are recorded per method instead of aborting the dump.
inline nlohmann::json run_stencil(const StudyConfig& cfg, int point,
                                  const std::vector<MethodConfig>& methods) {
    Rng rng(level_seed(cfg.seed, 0));
    GeneratedCloud gen = generate_cloud(cfg, cfg.sizes.at(0), rng);
    std::vector<Neighborhood> nbhds = build_neighborhoods(gen.cloud);
    if (point < 0 || point >= gen.cloud.size()) throw InvalidParams("point index out of range");
    const std::vector<OperatorTerm> terms = parse_operator_terms(cfg.op_spec, cfg.dim);

    nlohmann::json out = nlohmann::json::array();
    for (const MethodConfig& m : methods) {
        nlohmann::json entry;
        entry["method"] = to_string(m.name);
        try {
            entry["stencil"] = stencil_to_json(stencil_for(m, gen.cloud, nbhds, point, terms));
        } catch (const Error& e) {
            entry["error"] = error_tag(e);
            entry["detail"] = e.what();
        }
        out.push_back(entry);
    }
    return out;
}

} // namespace colloc
