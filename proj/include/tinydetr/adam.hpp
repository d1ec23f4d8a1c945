#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinydetr/tensor.hpp"

namespace tinydetr {

// One named parameter group; every parameter in a group shares a learning rate.
struct ParamGroup {
    std::string name;
    double lr = 1e-3;
    std::vector<std::pair<std::string, Tensor>> params;
};

// Adam with bias correction. Moments are kept per parameter, keyed by name, so
// optimizer state can round-trip through checkpoints.
class Adam {
public:
    Adam(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    // Applies one update from the gradients currently stored on the parameters,
    // then zeroes those gradients. Throws NumericError if any parameter has a
    // non-finite gradient (the message names the parameter).
    void step();

    // Global L2 clip over the concatenation of all parameter gradients.
    // Returns the pre-clip norm. No-op when max_norm <= 0.
    double clip_grad_norm(double max_norm);

    std::uint64_t step_count() const { return step_count_; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }

    std::vector<ParamGroup>& groups() { return groups_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }

    // Flat views over optimizer state for checkpointing. Keys are
    // "adam.<param>.m" / "adam.<param>.v"; step count is restored separately.
    std::map<std::string, std::vector<double>> state() const;
    void load_state(const std::map<std::string, std::vector<double>>& state,
                    std::uint64_t step_count);

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    std::vector<ParamGroup> groups_;
    std::map<std::string, Moments> moments_;
    double beta1_;
    double beta2_;
    double eps_;
    std::uint64_t step_count_ = 0;
};

}  // namespace tinydetr
