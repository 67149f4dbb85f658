#include "bnkit/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bnkit::optim {

const char* group_role_name(GroupRole role) {
  switch (role) {
    case GroupRole::kWeight: return "weight";
    case GroupRole::kBnGamma: return "bn_gamma";
    case GroupRole::kBnBetaAndBias: return "bn_beta_and_bias";
    case GroupRole::kBnAux: return "bn_aux";
  }
  return "?";
}

std::vector<ParamGroup> build_param_groups(nn::Network& net, double c,
                                           double weight_decay) {
  if (!(c >= 1.0)) {
    throw std::invalid_argument("build_param_groups: c must be >= 1");
  }
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument(
        "build_param_groups: weight_decay must be >= 0");
  }
  std::vector<ParamGroup> groups(4);
  groups[0].role = GroupRole::kWeight;
  groups[0].weight_decay = weight_decay;
  groups[1].role = GroupRole::kBnGamma;
  groups[1].lr_divisor = c;
  groups[2].role = GroupRole::kBnBetaAndBias;
  groups[3].role = GroupRole::kBnAux;

  for (const nn::ParamRef& p : net.params()) {
    if (p.frozen) continue;
    switch (p.role) {
      case nn::ParamRole::kWeight:
        groups[0].members.push_back(p);
        break;
      case nn::ParamRole::kBnGamma:
        groups[1].members.push_back(p);
        break;
      case nn::ParamRole::kBnBeta:
      case nn::ParamRole::kBias:
        groups[2].members.push_back(p);
        break;
      case nn::ParamRole::kBnAux:
        groups[3].members.push_back(p);
        break;
    }
  }
  for (ParamGroup& g : groups) {
    g.momentum.reserve(g.members.size());
    for (const nn::ParamRef& p : g.members) {
      g.momentum.emplace_back(p.value->shape());
    }
  }
  return groups;
}

void sgd_step(std::vector<ParamGroup>& groups, double lr, double mu) {
  if (!(lr >= 0.0)) {
    throw std::invalid_argument("sgd_step: lr must be >= 0");
  }
  for (ParamGroup& group : groups) {
    const double step = lr / group.lr_divisor;
    for (std::size_t m = 0; m < group.members.size(); ++m) {
      Tensor& w = *group.members[m].value;
      const Tensor& grad = *group.members[m].grad;
      Tensor& v = group.momentum[m];
      if (grad.size() != w.size()) {
        throw std::runtime_error("sgd_step: missing or mis-sized gradient for " +
                                 group.members[m].name);
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        double g = grad[i];
        if (group.weight_decay != 0.0) g += group.weight_decay * w[i];
        v[i] = mu * v[i] + g;
        w[i] -= step * v[i];
      }
    }
  }
}

double cosine_lr(const ScheduleState& schedule) {
  if (schedule.total_epochs == 0) {
    throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
  }
  if (schedule.epoch > schedule.total_epochs) {
    throw std::invalid_argument("cosine_lr: epoch past the end of schedule");
  }
  const double t = static_cast<double>(schedule.epoch);
  const double total = static_cast<double>(schedule.total_epochs);
  return schedule.base_lr * (1.0 + std::cos(std::numbers::pi * t / total)) / 2.0;
}

}  // namespace bnkit::optim
