#include "tinydetr/adam.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "tinydetr/errors.hpp"

namespace tinydetr {

Adam::Adam(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    std::set<std::string> seen;
    for (auto& group : groups_) {
        for (auto& [name, param] : group.params) {
            if (!param.defined()) {
                throw std::invalid_argument("adam: parameter '" + name + "' is undefined");
            }
            if (!param.requires_grad()) {
                throw std::invalid_argument("adam: parameter '" + name +
                                            "' does not track gradients");
            }
            if (!seen.insert(name).second) {
                throw std::invalid_argument("adam: duplicate parameter name '" + name + "'");
            }
            Moments mom;
            mom.m.assign(param.size(), 0.0);
            mom.v.assign(param.size(), 0.0);
            moments_.emplace(name, std::move(mom));
        }
    }
}

double Adam::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (auto& group : groups_) {
        for (auto& [name, param] : group.params) {
            for (double g : param.grad()) {
                sq += g * g;
            }
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& group : groups_) {
            for (auto& [name, param] : group.params) {
                for (double& g : param.grad()) {
                    g *= scale;
                }
            }
        }
    }
    return norm;
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (auto& group : groups_) {
        for (auto& [name, param] : group.params) {
            auto grad = param.grad();
            for (double g : grad) {
                if (!std::isfinite(g)) {
                    throw NumericError("adam: non-finite gradient in parameter '" + name + "'");
                }
            }
            Moments& mom = moments_.at(name);
            auto data = param.data();
            for (std::size_t i = 0; i < data.size(); ++i) {
                mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * grad[i];
                mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
                const double mhat = mom.m[i] / bc1;
                const double vhat = mom.v[i] / bc2;
                data[i] -= group.lr * mhat / (std::sqrt(vhat) + eps_);
            }
            param.zero_grad();
        }
    }
}

std::map<std::string, std::vector<double>> Adam::state() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, mom] : moments_) {
        out["adam." + name + ".m"] = mom.m;
        out["adam." + name + ".v"] = mom.v;
    }
    return out;
}

void Adam::load_state(const std::map<std::string, std::vector<double>>& state,
                      std::uint64_t step_count) {
    for (auto& [name, mom] : moments_) {
        const auto m_it = state.find("adam." + name + ".m");
        const auto v_it = state.find("adam." + name + ".v");
        if (m_it == state.end() || v_it == state.end()) {
            throw DataError("adam: checkpoint is missing optimizer state for parameter '" + name +
                            "'");
        }
        if (m_it->second.size() != mom.m.size() || v_it->second.size() != mom.v.size()) {
            throw DataError("adam: optimizer state size mismatch for parameter '" + name + "'");
        }
        mom.m = m_it->second;
        mom.v = v_it->second;
    }
    step_count_ = step_count;
}

}  // namespace tinydetr
