#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctml/tape.hpp"

namespace ctml {

// Central finite-difference comparison for every tape primitive, the
// projector adjoint identity, the differentiable projector layers, and an
// end-to-end tiny subnetwork. Always runs in double precision.
struct GradCheckCategory {
    std::string name;
    double worst_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = true;
    int samples = 0; // finite-difference samples that entered the comparison
};

struct GradCheckReport {
    std::vector<GradCheckCategory> categories;
    bool all_pass() const
    {
        for (const auto& c : categories)
            if (!c.pass) return false;
        return true;
    }
};

GradCheckReport run_gradcheck(bool include_fan);

// Helper shared with the test suites: builds a scalar loss from the graph
// output and compares tape gradients of every listed leaf against central
// differences (h = 1e-5). Returns the worst relative error, measured against
// the gradient magnitude scale of each leaf.
//
// A sample whose mismatch exceeds suspect_tol is re-evaluated at h/4. Relu
// kink contamination scales linearly with the step, so the two estimates then
// disagree by about three quarters of the mismatch and the sample is
// discarded as a kink crossing. A wrong backward rule produces
// self-consistent differences and is kept as a failure.
struct FdCheck {
    // rebuilds the graph from leaf values and returns the scalar loss node
    using Builder = std::function<double(const std::vector<Tensor<double>>&)>;

    static double max_rel_err(const Builder& forward, std::vector<Tensor<double>> leaves,
                              const std::vector<Tensor<double>>& analytic_grads,
                              int samples_per_leaf = 24, double h = 1e-5,
                              std::uint64_t seed = 42, int* valid_samples = nullptr,
                              double suspect_tol = 1e-6);
};

} // namespace ctml
