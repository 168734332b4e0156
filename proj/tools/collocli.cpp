// Command-line harness: convergence studies, route-equivalence audits,
// stencil dumps and the Poisson demo. Data goes to stdout (or --out),
// diagnostics to stderr. Exit codes: 0 success, 1 usage error, 2 numerical
// failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "colloc/colloc.hpp"
#include "colloc/stencil_json.hpp"

namespace {

struct MethodOpts {
    std::string name = "gfdm";
    int order = 2;
    std::string zeroth = "default"; // on | off | default
    std::string basis = "default";
    std::string window = "default";
    double sigma = 0.3;
    double mu = 1e-7;
    double eps_omega = 0.0;
    double eps_boundary = 0.0;
    double eps_fpsm = 0.0;
    std::vector<double> velocity;
    std::string direction = "x+";
    int mfdm_low = 0;
    int mfdm_iters = 3;
    std::string ldd_variant = "sum";
};

colloc::MethodConfig build_method(const MethodOpts& o) {
    using namespace colloc;
    std::optional<RadialWindow> window;
    if (o.window != "default") {
        RadialWindow w;
        w.kind = window_from_string(o.window);
        w.sigma = o.sigma;
        window = w;
    }
    MethodConfig cfg = preset(method_from_string(o.name), o.order, window);
    cfg.family.window.sigma = o.sigma;
    if (o.basis != "default") cfg.family.kind = abf_from_string(o.basis);
    if (o.zeroth != "default") cfg.include_zeroth = o.zeroth == "on";
    cfg.mu = o.mu;
    cfg.eps_omega = o.eps_omega;
    cfg.eps_boundary = o.eps_boundary;
    cfg.eps_fpsm = o.eps_fpsm;
    for (int d = 0; d < static_cast<int>(o.velocity.size()) && d < 3; ++d)
        cfg.velocity[d] = o.velocity[static_cast<std::size_t>(d)];
    if (!o.direction.empty()) {
        const char axis = o.direction[0];
        cfg.direction_axis = axis == 'x' ? 0 : axis == 'y' ? 1 : axis == 'z' ? 2 : -1;
        if (cfg.direction_axis < 0) throw InvalidParams("direction must look like x+, y-, ...");
        cfg.direction_sign = o.direction.size() > 1 && o.direction[1] == '-' ? -1 : +1;
    }
    if (o.mfdm_low > 0) cfg.mfdm_low = o.mfdm_low;
    cfg.mfdm_iters = o.mfdm_iters;
    if (o.ldd_variant == "naive") cfg.ldd_variant = LddVariant::naive;
    else if (o.ldd_variant == "sum") cfg.ldd_variant = LddVariant::sum;
    else if (o.ldd_variant == "ls_full") cfg.ldd_variant = LddVariant::ls_full;
    else if (o.ldd_variant == "ls_basic") cfg.ldd_variant = LddVariant::ls_basic;
    else throw InvalidParams("unknown ldd variant '" + o.ldd_variant + "'");
    validate_preset(cfg);
    return cfg;
}

void add_method_options(CLI::App* cmd, MethodOpts& m, const std::string& prefix = "") {
    const std::string p = prefix.empty() ? "--" : "--" + prefix + "-";
    cmd->add_option(p + "method", m.name, "method preset or raw route name");
    cmd->add_option(p + "order", m.order, "approximation order m");
    cmd->add_option(p + "zeroth", m.zeroth, "zeroth moment: on|off|default");
    cmd->add_option(p + "basis", m.basis, "ABF family override");
    cmd->add_option(p + "window", m.window, "radial window kind");
    cmd->add_option(p + "sigma", m.sigma, "gaussian window width");
    cmd->add_option(p + "mu", m.mu, "mmls regularization weight");
    cmd->add_option(p + "eps-omega", m.eps_omega, "cmls interior penalty");
    cmd->add_option(p + "eps-boundary", m.eps_boundary, "cmls boundary penalty");
    cmd->add_option(p + "eps-fpsm", m.eps_fpsm, "fpsm center parameter");
    cmd->add_option(p + "velocity", m.velocity, "upwind velocity components")->delimiter(',');
    cmd->add_option(p + "direction", m.direction, "lskum half-space, e.g. x+ or y-");
    cmd->add_option(p + "mfdm-L", m.mfdm_low, "mfdm low order");
    cmd->add_option(p + "mfdm-iters", m.mfdm_iters, "mfdm correction sweeps");
    cmd->add_option(p + "ldd-variant", m.ldd_variant, "ldd laplacian variant");
}

struct CloudOpts {
    int dim = 2;
    std::string generator = "jittered";
    double jitter = 0.2;
    std::vector<double> sizes{0.1, 0.05, 0.025};
    double ratio = 0.0;
    std::uint64_t seed = 42;
};

void add_cloud_options(CLI::App* cmd, CloudOpts& c) {
    cmd->add_option("--dim", c.dim, "spatial dimension");
    cmd->add_option("--generator", c.generator, "regular|jittered|random");
    cmd->add_option("--jitter", c.jitter, "jitter fraction of spacing");
    cmd->add_option("--sizes", c.sizes, "nominal spacings, decreasing")->delimiter(',');
    cmd->add_option("--ratio", c.ratio, "h/spacing ratio (0 = order default)");
    cmd->add_option("--seed", c.seed, "random seed");
}

colloc::StudyConfig build_study(const CloudOpts& c, const MethodOpts& m, const std::string& op,
                                const std::string& field, int poly_degree) {
    colloc::StudyConfig cfg;
    cfg.dim = c.dim;
    cfg.generator = c.generator;
    cfg.jitter = c.jitter;
    cfg.sizes = c.sizes;
    cfg.ratio = c.ratio;
    cfg.seed = c.seed;
    cfg.method = build_method(m);
    cfg.op_spec = op;
    if (field == "sin_product") cfg.field.kind = colloc::TestField::sin_product;
    else if (field == "gaussian_bump") cfg.field.kind = colloc::TestField::gaussian_bump;
    else if (field == "polynomial") cfg.field.kind = colloc::TestField::polynomial;
    else throw colloc::InvalidParams("unknown test function '" + field + "'");
    cfg.field.poly_degree = poly_degree;
    return cfg;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream os(out_path);
    if (!os) throw colloc::InvalidParams("cannot open output file '" + out_path + "'");
    os << text;
}

nlohmann::json rows_to_json(const colloc::ConvergenceResult& r, const std::string& method,
                            const std::string& op) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"h", row.h},
                        {"n_points", row.n_points},
                        {"method", method},
                        {"op", op},
                        {"linf", row.linf},
                        {"l2", row.l2}});
    return {{"rows", rows}, {"slope", r.slope}, {"saturated", r.saturated}};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"meshfree collocation toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; [section] per subcommand");

    std::string out_path;
    std::string format = "csv";
    app.add_option("--out", out_path, "write data to this file instead of stdout");
    app.add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));

    CloudOpts cloud;
    MethodOpts method;
    std::string op = "d/dx";
    std::string field = "sin_product";
    int poly_degree = 2;

    CLI::App* converge = app.add_subcommand("converge", "operator convergence study");
    add_cloud_options(converge, cloud);
    add_method_options(converge, method);
    converge->add_option("--op", op, "operator spec");
    converge->add_option("--test-function", field, "sin_product|gaussian_bump|polynomial");
    converge->add_option("--poly-degree", poly_degree, "polynomial test degree");

    MethodOpts method_b;
    CLI::App* equiv = app.add_subcommand("equiv", "route equivalence audit");
    add_cloud_options(equiv, cloud);
    add_method_options(equiv, method);
    add_method_options(equiv, method_b, "b");
    equiv->add_option("--op", op, "operator spec");

    int point_index = 0;
    std::vector<std::string> method_list{"gfdm", "dcpse", "gl2p"};
    CLI::App* stencil = app.add_subcommand("stencil", "per-method stencil dump at one point");
    add_cloud_options(stencil, cloud);
    add_method_options(stencil, method);
    stencil->add_option("--op", op, "operator spec");
    stencil->add_option("--point", point_index, "center point index");
    stencil->add_option("--methods", method_list, "methods to compare")->delimiter(',');

    std::string poisson_test = "quadratic";
    CLI::App* poisson = app.add_subcommand("poisson", "Dirichlet Poisson demo");
    add_cloud_options(poisson, cloud);
    add_method_options(poisson, method);
    poisson->add_option("--test", poisson_test, "quadratic|sinproduct");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (*converge) {
            colloc::StudyConfig cfg = build_study(cloud, method, op, field, poly_degree);
            colloc::ConvergenceResult r = colloc::run_convergence(cfg);
            if (format == "json")
                emit(rows_to_json(r, method.name, op).dump(2) + "\n", out_path);
            else
                emit(colloc::to_csv(r, method.name, op), out_path);
        } else if (*equiv) {
            colloc::StudyConfig cfg = build_study(cloud, method, op, field, poly_degree);
            colloc::MethodConfig a = build_method(method);
            colloc::MethodConfig b = build_method(method_b);
            colloc::EquivalenceReport rep = colloc::run_equivalence(cfg, a, b);
            std::ostringstream os;
            if (format == "json") {
                nlohmann::json j{{"pass", rep.pass},
                                 {"max_rel_discrepancy", rep.max_rel_discrepancy},
                                 {"points_checked", rep.points_checked}};
                os << j.dump(2) << "\n";
            } else {
                os << (rep.pass ? "PASS" : "FAIL") << " max_rel_discrepancy="
                   << rep.max_rel_discrepancy << " points=" << rep.points_checked << "\n";
            }
            emit(os.str(), out_path);
        } else if (*stencil) {
            colloc::StudyConfig cfg = build_study(cloud, method, op, field, poly_degree);
            std::vector<colloc::MethodConfig> methods;
            for (const std::string& name : method_list) {
                MethodOpts m = method;
                m.name = name;
                m.zeroth = "default";
                m.basis = "default";
                m.window = "default";
                methods.push_back(build_method(m));
            }
            emit(colloc::run_stencil(cfg, point_index, methods).dump(2) + "\n", out_path);
        } else if (*poisson) {
            colloc::StudyConfig cfg = build_study(cloud, method, op, field, poly_degree);
            colloc::ConvergenceResult r = colloc::run_poisson(cfg, poisson_test);
            if (format == "json")
                emit(rows_to_json(r, method.name, "poisson:" + poisson_test).dump(2) + "\n",
                     out_path);
            else
                emit(colloc::to_csv(r, method.name, "poisson:" + poisson_test), out_path);
        }
    } catch (const colloc::Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
