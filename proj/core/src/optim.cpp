#include "spkemb/optim.hpp"

#include <algorithm>
#include <cmath>

namespace spkemb {

void sgd_momentum_step(NamedTensors& params, const NamedTensors& grads,
                       NamedTensors& velocity, double lr, double momentum) {
  for (const auto& [name, g] : grads) {
    auto p = params.find(name);
    auto v = velocity.find(name);
    require(p != params.end(), ErrorKind::kDimension,
            "sgd: gradient for unknown parameter " + name);
    require(v != velocity.end(), ErrorKind::kDimension,
            "sgd: no velocity for parameter " + name);
    expect_shape(g.shape(), p->second.shape(), "sgd gradient " + name);
    expect_shape(v->second.shape(), p->second.shape(), "sgd velocity " + name);
    float* pd = p->second.data();
    float* vd = v->second.data();
    const float* gd = g.data();
    const float mu = static_cast<float>(momentum);
    const float rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < g.size(); ++i) {
      vd[i] = mu * vd[i] - rate * gd[i];
      pd[i] += vd[i];
    }
  }
}

void SgdMomentum::step(NamedTensors& params, const NamedTensors& grads,
                       double lr) {
  for (const auto& [name, g] : grads)
    if (!velocity_.contains(name)) velocity_.emplace(name, Tensor(g.shape()));
  sgd_momentum_step(params, grads, velocity_, lr, momentum_);
}

double lr_schedule(std::size_t step, std::size_t total_steps, double start,
                   double end) {
  require(step <= total_steps || total_steps == 0, ErrorKind::kOutOfRange,
          "lr_schedule step " + std::to_string(step) + " beyond " +
              std::to_string(total_steps));
  if (total_steps == 0) return start;
  if (step == total_steps) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return start + (end - start) * frac;
}

GradCheckResult grad_check(
    const std::function<double(std::span<const double>)>& loss,
    std::vector<double> point, std::span<const double> analytic, double eps) {
  require(point.size() == analytic.size(), ErrorKind::kDimension,
          "grad_check: point and gradient sizes differ");
  GradCheckResult worst;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double up = loss(point);
    point[i] = saved - eps;
    const double down = loss(point);
    point[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > worst.max_rel_error || i == 0) {
      worst = {rel, i, a, numeric};
    }
  }
  return worst;
}

}  // namespace spkemb
