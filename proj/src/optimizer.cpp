#include "avcap/optimizer.hpp"

#include <cmath>

#include "avcap/errors.hpp"

namespace avcap {

Adam::Adam(const std::vector<std::pair<std::string, Tensor>>& params, double beta1, double beta2, double eps,
           double clip_norm)
    : beta1_(beta1), beta2_(beta2), eps_(eps), clip_norm_(clip_norm) {
  for (const auto& [name, t] : params) {
    m_.emplace_back(t.numel(), 0.0f);
    v_.emplace_back(t.numel(), 0.0f);
  }
}

void Adam::step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double grad_scale) {
  if (params.size() != m_.size()) throw ContractError("adam: parameter list changed size");
  double sq_norm = 0.0;
  for (auto& [name, t] : params) {
    if (!t.grad) throw ContractError("adam: parameter " + name + " has no gradient buffer");
    for (float g : *t.grad) {
      const double gs = static_cast<double>(g) * grad_scale;
      if (!std::isfinite(gs)) throw TrainError("adam: non-finite gradient in " + name);
      sq_norm += gs * gs;
    }
  }
  const double norm = std::sqrt(sq_norm);
  const double clip = norm > clip_norm_ && norm > 0.0 ? clip_norm_ / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].second;
    std::vector<float>& m = m_[p];
    std::vector<float>& v = v_[p];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double g = static_cast<double>((*t.grad)[i]) * grad_scale * clip;
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      (*t.data)[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

double lr_schedule(std::int64_t step, double base, std::int64_t warmup) {
  if (step < 1) step = 1;
  if (warmup < 1) warmup = 1;
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return base * std::min(s / w, std::sqrt(w / s));
}

}  // namespace avcap
