#include "tinydetr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tinydetr/rng.hpp"

namespace tinydetr {

GradCheckReport check_gradients(const std::function<Tensor()>& forward,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double h, double tolerance,
                                std::size_t max_entries_per_param,
                                std::uint64_t sample_seed) {
    if (Tape::active() != nullptr) {
        throw std::runtime_error("check_gradients must run outside an active tape");
    }
    for (const auto& [name, param] : params) {
        if (!param.requires_grad()) {
            throw std::invalid_argument("check_gradients: parameter '" + name +
                                        "' does not track gradients");
        }
        const_cast<Tensor&>(param).zero_grad();
    }

    // Analytic pass.
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = forward();
        tape.backward(loss);
    }
    analytic.reserve(params.size());
    for (const auto& [name, param] : params) {
        analytic.emplace_back(param.grad().begin(), param.grad().end());
    }

    // Finite-difference pass (no tape active, so re-runs stay forward-only).
    GradCheckReport report;
    report.passed = true;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::string& name = params[p].first;
        Tensor param = params[p].second;
        auto data = param.data();

        std::vector<std::size_t> indices(data.size());
        std::iota(indices.begin(), indices.end(), std::size_t{0});
        if (max_entries_per_param > 0 && indices.size() > max_entries_per_param) {
            Rng rng(derive_seed(sample_seed, "gradcheck", p));
            std::shuffle(indices.begin(), indices.end(), rng.engine());
            indices.resize(max_entries_per_param);
            std::sort(indices.begin(), indices.end());
        }

        for (std::size_t i : indices) {
            const double saved = data[i];
            data[i] = saved + h;
            const double fp = forward().item();
            data[i] = saved - h;
            const double fm = forward().item();
            data[i] = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[p][i];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            ++report.entries_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_parameter = name;
                report.worst_index = i;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace tinydetr
