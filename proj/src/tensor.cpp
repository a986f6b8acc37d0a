#include "edge/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "edge/error.hpp"

namespace edge {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

float Tensor::at(int c, int i, int j) const {
  const auto& s = impl_->shape;
  return impl_->data[(static_cast<std::size_t>(c) * s[1] + i) * s[2] + j];
}

float& Tensor::at(int c, int i, int j) {
  const auto& s = impl_->shape;
  return impl_->data[(static_cast<std::size_t>(c) * s[1] + i) * s[2] + j];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

std::span<float> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> rule) {
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(rule)});
}

NoGradGuard::NoGradGuard() : previous_(Tape::current().recording_) {
  Tape::current().recording_ = false;
}

NoGradGuard::~NoGradGuard() { Tape::current().recording_ = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  Tape& tape = Tape::current();
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0f;
  auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    // Entries the loss never reached carry no gradient.
    if (!it->output.has_grad()) continue;
    it->backward();
  }
  tape.clear();
}

}  // namespace edge
