// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <type_traits>

#include "vsr/common.hpp"

namespace vsr {

// Dense row-major tensor. Gradient storage lives on the tensor itself and is
// filled lazily during backward; `grad` is either empty or the same size as
// `data`. Scalar type S is float (training) or double (gradient checking).
template <typename S>
struct Tensor {
  static_assert(std::is_floating_point_v<S>);

  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;
  std::vector<S> grad;

  std::int64_t numel() const { return vsr::numel(shape); }

  S& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const S& at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
  void zero_grad() { grad.assign(data.size(), S(0)); }
};

template <typename S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

template <typename S>
TensorPtr<S> make_tensor(Shape shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<S>>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<std::size_t>(numel(t->shape)), S(0));
  t->requires_grad = requires_grad;
  return t;
}

template <typename S>
TensorPtr<S> make_tensor(Shape shape, std::vector<S> values,
                         bool requires_grad = false) {
  auto t = std::make_shared<Tensor<S>>();
  t->shape = std::move(shape);
  require(static_cast<std::int64_t>(values.size()) == numel(t->shape),
          "tensor literal size does not match shape " + shape_str(t->shape));
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

// Ops surface non-finite outputs as errors instead of letting NaN propagate.
template <typename S>
void check_finite(const Tensor<S>& t, const char* op_name) {
  for (const S v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op_name) +
                         " produced a non-finite value (shape " +
                         shape_str(t.shape) + ")");
    }
  }
}

}  // namespace vsr
