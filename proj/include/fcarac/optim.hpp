// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

#include "fcarac/autodiff.hpp"

namespace fcarac {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update on every parameter; clears gradients.
inline void adam_step(std::span<Parameter* const> params, const AdamOptions& opt) {
  if (!(opt.lr > 0.0)) throw std::invalid_argument("adam_step: lr must be > 0");
  for (Parameter* p : params) {
    ++p->steps;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p->steps));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p->steps));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = opt.beta1 * p->m[i] + (1.0 - opt.beta1) * g;
      p->v[i] = opt.beta2 * p->v[i] + (1.0 - opt.beta2) * g * g;
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      p->value[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    p->zero_grad();
  }
}

/// Plain gradient descent; clears gradients.
inline void sgd_step(std::span<Parameter* const> params, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
    p->zero_grad();
  }
}

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

/// Resets Adam moments, e.g. between pre-training and fine-tuning.
inline void reset_moments(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    p->m.fill(0.0);
    p->v.fill(0.0);
    p->steps = 0;
  }
}

}  // namespace fcarac
