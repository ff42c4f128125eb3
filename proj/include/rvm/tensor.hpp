#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rvm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/*
 * Tensor is a shared handle to a dense row-major buffer of doubles. Copies of
 * the handle alias the same storage; use clone() for a deep copy. Values are
 * treated as immutable once an op has consumed them. Only parameters are
 * written in place, and only by the optimizer or checkpoint loader.
 */
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  const double* ptr() const { return data().data(); }
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Grad buffer, allocated (zero-filled) on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const { return clone(); }

  /// Stable identity of the underlying storage.
  const void* id() const noexcept { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/*
 * Linear record of differentiable operations. Ops append themselves when a
 * tape is active on the calling thread and at least one input requires grad;
 * backward() walks the record in reverse, so each op runs exactly once and
 * after every consumer of its output.
 */
class Tape {
 public:
  using GradRule = std::function<void(std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor output, std::vector<Tensor> inputs, GradRule rule);
  void backward(const Tensor& loss);
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  static Tape* active() noexcept;

 private:
  friend class TapeScope;
  struct Entry {
    Tensor output;
    std::vector<Tensor> inputs;
    GradRule rule;
  };
  std::vector<Entry> entries_;
};

/// Makes a tape the active recorder on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Runs backward on the given tape; the loss must be a recorded scalar.
void backward(const Tensor& loss, Tape& tape);

}  // namespace rvm
