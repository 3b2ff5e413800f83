/*
 * Copyright 2026 The PCA Pipeline Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cmath>

#include "pca/config.hpp"
#include "pca/errors.hpp"

namespace pca::harness {

/// Linear warmup from 0 to base_lr over the warmup steps, then cosine decay
/// reaching exactly 0 at the final training step. Continuous at the warmup
/// boundary: the last warmup step and the first cosine step both yield
/// base_lr.
inline double lr_at_step(long step, long steps_per_epoch, const TrainConfig& cfg) {
  if (steps_per_epoch < 1) {
    throw ConfigError("lr_at_step: steps_per_epoch must be >= 1");
  }
  if (step < 0) throw InvalidInputError("lr_at_step: negative step");
  const long warmup_steps = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
  const long total_steps = static_cast<long>(cfg.total_epochs) * steps_per_epoch;
  if (step < warmup_steps) {
    return cfg.base_lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup_steps);
  }
  const long decay_intervals = total_steps - warmup_steps - 1;
  double t = 1.0;
  if (decay_intervals > 0) {
    t = std::min(1.0, static_cast<double>(step - warmup_steps) /
                          static_cast<double>(decay_intervals));
  }
  return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace pca::harness
