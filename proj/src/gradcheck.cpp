#include "reflectdiffu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "reflectdiffu/rng.hpp"

namespace rd {

GradCheckReport finite_difference_check(const std::string& name, const std::function<Tensor()>& f,
                                        const std::vector<NamedTensor>& params,
                                        const GradCheckOptions& options) {
    if (!(options.h > 0.0)) throw TensorError("finite_difference_check: h must be positive");

    for (const auto& p : params) {
        auto t = p.tensor;
        t.zero_grad();
    }
    const Tensor loss = f();
    const double base = loss.item();
    loss.backward();

    {
        NoGradGuard no_grad;
        const double again = f().item();
        if (again != base)
            throw TensorError("finite_difference_check(" + name +
                              "): function is not deterministic under a fixed seed");
    }

    GradCheckReport report;
    report.op_name = name;
    Rng rng(options.seed);
    NoGradGuard no_grad;
    for (const auto& p : params) {
        Tensor t = p.tensor;
        const std::size_t n = t.size();
        std::vector<double> analytic(t.grad().begin(), t.grad().end());

        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        if (n > options.probes_per_tensor) {
            rng.shuffle(coords);
            coords.resize(options.probes_per_tensor);
        }
        auto data = t.mutable_data();
        for (std::size_t c : coords) {
            const double original = data[c];
            data[c] = original + options.h;
            const double plus = f().item();
            data[c] = original - options.h;
            const double minus = f().item();
            data[c] = original;
            const double numeric = (plus - minus) / (2.0 * options.h);
            const double a = analytic[c];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > report.max_rel_error || report.probe_count == 0) {
                report.max_rel_error = rel;
                report.worst_param = p.name;
            }
            ++report.probe_count;
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

}  // namespace rd
