#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reflectdiffu/tensor.hpp"

namespace rd {

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    bool passed = false;
    std::size_t probe_count = 0;
    std::string worst_param;  // name of the tensor holding the worst coordinate
};

struct GradCheckOptions {
    double h = 1e-5;
    double tolerance = 1e-4;
    /// Coordinates probed per tensor; tensors at or below this size are probed exhaustively.
    std::size_t probes_per_tensor = 8;
    std::uint64_t seed = 7;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Compares reverse-mode gradients of `f` with central differences
/// (f(x + h) - f(x - h)) / 2h on a sample of coordinates of every tensor in
/// `params`. The relative error of a coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// `f` must rebuild its graph on each call and be deterministic; two
/// evaluations at the unperturbed point that differ throw TensorError.
GradCheckReport finite_difference_check(const std::string& name, const std::function<Tensor()>& f,
                                        const std::vector<NamedTensor>& params,
                                        const GradCheckOptions& options = {});

}  // namespace rd
