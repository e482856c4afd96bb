#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tim {

// Dense 64-bit float tensor with shared storage. Copying a Tensor copies the
// handle, not the buffer; parameters stay live across tapes while gradients
// accumulate in place.
class Tensor {
 public:
  struct Storage {
    std::vector<size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on first use, same length as values
    bool requires_grad = false;
  };

  Tensor() : storage_(std::make_shared<Storage>()) {}
  Tensor(std::vector<size_t> shape, std::vector<double> values,
         bool requires_grad = false);

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const std::vector<size_t>& shape() const { return storage_->shape; }
  size_t rank() const { return storage_->shape.size(); }
  size_t size() const { return storage_->values.size(); }
  size_t rows() const;
  size_t cols() const;
  bool is_scalar() const { return size() == 1; }

  double scalar_value() const;

  std::vector<double>& values() { return storage_->values; }
  const std::vector<double>& values() const { return storage_->values; }

  double& at(size_t i) { return storage_->values[i]; }
  double at(size_t i) const { return storage_->values[i]; }
  double& at(size_t r, size_t c) { return storage_->values[r * cols() + c]; }
  double at(size_t r, size_t c) const {
    return storage_->values[r * cols() + c];
  }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool value) { storage_->requires_grad = value; }

  // Gradient buffer, zero-initialized on first access.
  std::vector<double>& grad();
  bool has_grad() const { return !storage_->grad.empty(); }
  void zero_grad();

  // True when every element is finite (no NaN/Inf).
  bool all_finite() const;

  const std::shared_ptr<Storage>& storage() const { return storage_; }
  bool same_storage(const Tensor& other) const {
    return storage_ == other.storage_;
  }

  static std::string shape_string(const std::vector<size_t>& shape);

 private:
  std::shared_ptr<Storage> storage_;
};

// Records primitive applications in execution order; backward replays them in
// reverse, visiting each node exactly once.
class Tape {
 public:
  void record(std::shared_ptr<Tensor::Storage> output,
              std::function<void()> backward_fn);

  // Seeds the gradient of `loss` with 1 and propagates to every recorded
  // input. Requires `loss` to be scalar and produced on this tape.
  void backward(const Tensor& loss);

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<Tensor::Storage> output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

// --- primitive operations ---------------------------------------------------
// Every primitive takes the tape first; a null tape runs inference-only (no
// node recorded, output never requires grad). Gradients are recorded whenever
// a tape is supplied and at least one input requires grad.

Tensor matmul(Tape* tape, Tensor a, Tensor b);
Tensor transpose(Tape* tape, Tensor a);
Tensor add(Tape* tape, Tensor a, Tensor b);  // same shape
Tensor add_rowwise(Tape* tape, Tensor a, Tensor bias);
Tensor add_scalar(Tape* tape, Tensor a, double c);
Tensor scale(Tape* tape, Tensor a, double c);
Tensor mul(Tape* tape, Tensor a, Tensor b);  // elementwise
Tensor maximum(Tape* tape, Tensor a, Tensor b);
Tensor relu(Tape* tape, Tensor a);
Tensor log_elem(Tape* tape, Tensor a);
Tensor softmax_rows(Tape* tape, Tensor a);
Tensor layer_norm(Tape* tape, Tensor x, Tensor gain,
                  Tensor bias, double eps);
Tensor gather_rows(Tape* tape, Tensor table, std::span<const int> ids);
Tensor concat_rows(Tape* tape, Tensor a, Tensor b);
Tensor concat_cols(Tape* tape, Tensor a, Tensor b);
Tensor slice_rows(Tape* tape, Tensor a, size_t begin, size_t end);
Tensor slice_cols(Tape* tape, Tensor a, size_t begin, size_t end);
Tensor sum_all(Tape* tape, Tensor a);
Tensor reshape(Tape* tape, Tensor a, std::vector<size_t> shape);

}  // namespace tim
