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
#include <functional>
#include <string>
#include <vector>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"

namespace pca {

template <typename T>
struct GradCheckReport {
  struct ParamResult {
    std::string name;
    T max_rel_err;
  };
  std::vector<ParamResult> per_param;
  T eps{};
  T tol{};
  T max_rel_err{};
  bool pass = false;
};

/// A scalar loss together with its analytic gradient, both functions of the
/// same named parameter set.
template <typename T>
struct DifferentiableLoss {
  std::function<T(const ParamStore<T>&)> value;
  std::function<ParamStore<T>(const ParamStore<T>&)> gradients;
};

/// Compares analytic gradients against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) per scalar parameter. Relative error is
/// |a - n| / max(|a|, |n|, 1e-12). The loss must be deterministic; two calls
/// at the same point returning different values raise DeterminismError.
template <typename T>
GradCheckReport<T> grad_check(const DifferentiableLoss<T>& loss,
                              const ParamStore<T>& params, T eps, T tol) {
  if (eps <= T(0)) throw InvalidInputError("grad_check: eps must be > 0");

  const T v1 = loss.value(params);
  const T v2 = loss.value(params);
  if (v1 != v2) {
    throw DeterminismError("grad_check: loss returned differing values on "
                           "repeated identical calls");
  }

  ParamStore<T> analytic = loss.gradients(params);
  ParamStore<T> probe = params;

  GradCheckReport<T> report;
  report.eps = eps;
  report.tol = tol;
  report.max_rel_err = T(0);

  for (auto& item : probe.items()) {
    const Mat<T>& grad = analytic.at(item.name);
    if (grad.rows() != item.value.rows() || grad.cols() != item.value.cols()) {
      throw ShapeError("grad_check: gradient shape mismatch for " + item.name);
    }
    T param_max = T(0);
    for (Eigen::Index i = 0; i < item.value.size(); ++i) {
      T* slot = item.value.data() + i;
      const T saved = *slot;
      *slot = saved + eps;
      const T plus = loss.value(probe);
      *slot = saved - eps;
      const T minus = loss.value(probe);
      *slot = saved;
      const T numeric = (plus - minus) / (T(2) * eps);
      const T a = grad.data()[i];
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-12)});
      param_max = std::max(param_max, std::abs(a - numeric) / denom);
    }
    report.per_param.push_back({item.name, param_max});
    report.max_rel_err = std::max(report.max_rel_err, param_max);
  }

  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace pca
