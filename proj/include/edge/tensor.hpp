#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edge {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
};

/// Dense row-major float32 array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage. Forward
/// operations always allocate fresh outputs, so a tensor produced by an op is
/// never written again except for gradient accumulation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float item() const;

  // Element access for C×H×W tensors.
  float at(int c, int i, int j) const;
  float& at(int c, int i, int j);

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  /// Gradient buffer, zero-allocated on first use.
  std::span<float> grad_buffer() const;
  void zero_grad() const;

  /// Deep copy of the values; the copy carries no gradient state.
  Tensor clone() const;

  const TensorImpl* id() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations on the current thread.
///
/// Every op whose inputs require gradients appends one entry holding its
/// inputs, its output and a backward rule. backward() replays the entries in
/// reverse order, each exactly once, then clears the tape.
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  static Tape& current();

  bool recording() const { return recording_; }
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> rule);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  friend class NoGradGuard;
  std::vector<Entry> entries_;
  bool recording_ = true;
};

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populates dLoss/dLeaf for every requires_grad tensor reachable from `loss`.
/// Leaf gradients accumulate across calls; the tape is cleared afterwards.
void backward(const Tensor& loss);

}  // namespace edge
