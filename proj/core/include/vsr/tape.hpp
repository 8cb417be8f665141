// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr {

// Linear tape of recorded operations. Ops append one entry each; backward()
// seeds d(loss)=1 and replays entries in exact reverse recording order,
// accumulating additively into input gradients. Passing tape == nullptr to an
// op runs it in inference mode: nothing is recorded and no gradients flow.
//
// Single-threaded by design: one tape per model instance, no global state.
template <typename S>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return entries_.size(); }

  void backward(const TensorPtr<S>& loss) {
    require(loss->numel() == 1, "backward expects a scalar loss, got shape " +
                                    shape_str(loss->shape));
    loss->ensure_grad();
    loss->grad[0] = S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void reset() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

// True when `out` needs a backward entry: somebody upstream wants gradients.
template <typename S>
bool grad_needed(const Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad) return true;
  }
  return false;
}

}  // namespace vsr
