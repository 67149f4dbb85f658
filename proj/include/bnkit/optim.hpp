#pragma once

#include <vector>

#include "bnkit/nn.hpp"
#include "bnkit/tensor.hpp"

namespace bnkit::optim {

enum class GroupRole { kWeight, kBnGamma, kBnBetaAndBias, kBnAux };

const char* group_role_name(GroupRole role);

struct ParamGroup {
  GroupRole role = GroupRole::kWeight;
  double lr_divisor = 1.0;    // c for the gamma group, 1 otherwise
  double weight_decay = 0.0;  // nonzero only for the weight group
  std::vector<nn::ParamRef> members;
  std::vector<Tensor> momentum;  // one buffer per member, zero-initialized
};

// Four groups in fixed order: weights (decayed), BN gammas (lr/c), BN betas
// plus biases, BN auxiliary parameters (w_v, w_b, gamma0). Frozen
// parameters join no group.
std::vector<ParamGroup> build_param_groups(nn::Network& net, double c,
                                           double weight_decay);

// Per member: g = grad + lambda*w (weight group only);
// v = mu*v + g; w -= (lr / lr_divisor) * v.
void sgd_step(std::vector<ParamGroup>& groups, double lr, double mu);

struct ScheduleState {
  double base_lr = 0.1;
  std::size_t total_epochs = 1;
  std::size_t epoch = 0;
};

// Half-period cosine: base_lr * (1 + cos(pi*t/T)) / 2, stepped per epoch.
double cosine_lr(const ScheduleState& schedule);

}  // namespace bnkit::optim
