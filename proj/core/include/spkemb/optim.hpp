#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "spkemb/tensor.hpp"

namespace spkemb {

inline constexpr double kDefaultMomentum = 0.99;

/// Classical momentum: v <- mu v - lr g; p <- p + v.
/// Every gradient name must exist in `params` and `velocity` with equal shape.
void sgd_momentum_step(NamedTensors& params, const NamedTensors& grads,
                       NamedTensors& velocity, double lr,
                       double momentum = kDefaultMomentum);

/// Owns velocity buffers, created as zeros on first use.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = kDefaultMomentum)
      : momentum_(momentum) {}

  void step(NamedTensors& params, const NamedTensors& grads, double lr);

  double momentum() const { return momentum_; }
  const NamedTensors& velocity() const { return velocity_; }

 private:
  double momentum_;
  NamedTensors velocity_;
};

/// Linear decay from `start` at step 0 to `end` at `total_steps`.
double lr_schedule(std::size_t step, std::size_t total_steps,
                   double start = 0.05, double end = 0.005);

// ---- finite-difference checking --------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Gradients smaller than this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares `analytic` against central differences of `loss` around
/// `point`, one coordinate at a time. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, kGradCheckFloor); the worst one is returned.
GradCheckResult grad_check(
    const std::function<double(std::span<const double>)>& loss,
    std::vector<double> point, std::span<const double> analytic,
    double eps = 1e-4);

}  // namespace spkemb
