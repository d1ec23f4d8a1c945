#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tinydetr/tensor.hpp"

namespace tinydetr {

struct GradCheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t entries_checked = 0;
};

// Compares reverse-mode gradients against central finite differences.
//
// `forward` must be a pure function of the listed parameters and return a
// scalar loss tensor; it is re-run with per-element perturbations of +/-h.
// The relative error for each entry is |a - n| / max(1, |a|, |n|).
// When max_entries_per_param > 0, a deterministic random subset of entries is
// checked per parameter (seeded by sample_seed); 0 checks every entry.
GradCheckReport check_gradients(const std::function<Tensor()>& forward,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double h = 1e-5, double tolerance = 1e-4,
                                std::size_t max_entries_per_param = 0,
                                std::uint64_t sample_seed = 0);

}  // namespace tinydetr
