// Measures the convergence order of d/dx on jittered 2D clouds for a few
// presets and prints one CSV block per method.

#include <cstdio>

#include "colloc/colloc.hpp"

int main() {
    using namespace colloc;
    for (MethodName name : {MethodName::gfdm, MethodName::dcpse, MethodName::gmls}) {
        StudyConfig cfg;
        cfg.dim = 2;
        cfg.sizes = {0.1, 0.05, 0.025};
        cfg.method = preset(name, 2);
        cfg.op_spec = "d/dx";
        ConvergenceResult r = run_convergence(cfg);
        std::fputs(to_csv(r, to_string(name), cfg.op_spec).c_str(), stdout);
    }
    return 0;
}
