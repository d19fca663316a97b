// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "scalabl/netzoo.hpp"
#include "scalabl/trainer.hpp"

namespace scalabl::testing {

/// Compares every trainable gradient of the negative ELBO (noise fixed)
/// against a five-point central difference. Entries with |grad| > floor must
/// agree to relative rtol; smaller ones to absolute atol.
inline ::testing::AssertionResult elbo_grad_matches(Model& model, const Batch& batch, double beta,
                                                    const NoiseBundle& noise, double rtol = 1e-4,
                                                    double floor = 1e-8, double atol = 1e-7,
                                                    double step = 1e-4) {
  const auto params = model.trainable_parameters();
  for (Parameter* p : params) p->zero_grad();
  elbo_step(model, batch, beta, noise);
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  const auto loss_at = [&] {
    const double v = elbo_step(model, batch, beta, noise).loss;
    return v;
  };
  std::size_t checked = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      double f[4];
      const double offs[4] = {-2, -1, 1, 2};
      for (int j = 0; j < 4; ++j) {
        p.value[k] = orig + offs[j] * step;
        f[j] = loss_at();
      }
      p.value[k] = orig;
      const double numeric = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step);
      const double a = analytic[i][k];
      const bool ok = std::abs(a) > floor
                          ? std::abs(a - numeric) <= rtol * std::max(std::abs(a), std::abs(numeric))
                          : std::abs(a - numeric) <= atol;
      if (!ok) {
        return ::testing::AssertionFailure() << p.name << "[" << k << "]: analytic " << a
                                             << " vs numeric " << numeric;
      }
      ++checked;
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return ::testing::AssertionSuccess() << checked << " entries";
}

}  // namespace scalabl::testing
