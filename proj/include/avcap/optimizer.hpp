#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avcap/model.hpp"

namespace avcap {

// Adaptive-moment optimizer with bias correction and global gradient-norm
// clipping at 1.0. The learning rate is supplied per step.
class Adam {
 public:
  explicit Adam(const std::vector<std::pair<std::string, Tensor>>& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8, double clip_norm = 1.0);

  // Applies one update from the accumulated gradients. `grad_scale`
  // multiplies every gradient first (batch averaging); clipping happens on
  // the scaled gradients. Throws TrainError on non-finite gradients.
  void step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double grad_scale = 1.0);

  std::int64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_, clip_norm_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Linear warmup to `base` at `warmup` steps, inverse-square-root decay after.
double lr_schedule(std::int64_t step, double base, std::int64_t warmup);

}  // namespace avcap
