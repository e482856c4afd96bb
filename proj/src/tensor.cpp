#include "tim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "tim/error.hpp"

#ifdef TIM_USE_CBLAS
#include <cblas.h>
#include <cstdlib>
#endif

namespace tim {

namespace {

#ifdef TIM_USE_CBLAS
// Pin the BLAS backend to one thread before its lazy init so replays of the
// same inputs stay bitwise reproducible regardless of the host core count.
const bool kBlasSingleThread = [] {
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
  return true;
}();
#endif

size_t shape_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (const size_t d : shape) n *= d;
  return n;
}

void check_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got shape " +
                     Tensor::shape_string(t.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void matmul_accumulate(const double* a, const double* b, double* c, size_t m,
                       size_t k, size_t n) {
#ifdef TIM_USE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(k), b, static_cast<int>(n), 1.0, c,
              static_cast<int>(n));
#else
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
#endif
}

}  // namespace

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> values,
               bool requires_grad)
    : storage_(std::make_shared<Storage>()) {
  if (shape.empty()) {
    throw ShapeError("tensor shape must have at least one dimension");
  }
  for (const size_t d : shape) {
    if (d == 0) {
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_string(shape));
    }
  }
  if (shape_product(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_string(shape));
  }
  storage_->shape = std::move(shape);
  storage_->values = std::move(values);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  const size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<size_t> shape, double value,
                    bool requires_grad) {
  const size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value),
                requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

size_t Tensor::rows() const {
  return storage_->shape.empty() ? 0 : storage_->shape.front();
}

size_t Tensor::cols() const {
  return storage_->shape.size() < 2 ? 1 : storage_->shape.back();
}

double Tensor::scalar_value() const {
  if (!is_scalar()) {
    throw ContractError("scalar_value on tensor of shape " +
                        shape_string(shape()));
  }
  return storage_->values[0];
}

std::vector<double>& Tensor::grad() {
  if (storage_->grad.empty()) {
    storage_->grad.assign(storage_->values.size(), 0.0);
  }
  return storage_->grad;
}

void Tensor::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (const double v : storage_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string(const std::vector<size_t>& shape) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

void Tape::record(std::shared_ptr<Tensor::Storage> output,
                  std::function<void()> backward_fn) {
  nodes_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        Tensor::shape_string(loss.shape()));
  }
  bool on_tape = false;
  for (const Node& node : nodes_) {
    if (node.output == loss.storage()) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) {
    throw ContractError("backward: loss tensor was not produced on this tape");
  }
  Tensor mutable_loss = loss;
  mutable_loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward_fn();
  }
}

namespace {

struct OpResult {
  Tensor out;
  bool track;
};

// Creates the output tensor and decides whether this application is recorded.
OpResult make_output(Tape* tape, std::vector<size_t> shape,
                     std::vector<double> values, bool any_input_grad) {
  const bool track = tape != nullptr && any_input_grad;
  Tensor out(std::move(shape), std::move(values), track);
  return {out, track};
}

}  // namespace

Tensor matmul(Tape* tape, Tensor a, Tensor b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const size_t m = a.shape()[0];
  const size_t k = a.shape()[1];
  const size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " +
                     Tensor::shape_string(a.shape()) + " x " +
                     Tensor::shape_string(b.shape()));
  }
  std::vector<double> values(m * n, 0.0);
  matmul_accumulate(a.values().data(), b.values().data(), values.data(), m, k,
                    n);
  auto [out, track] =
      make_output(tape, {m, n}, std::move(values),
                  a.requires_grad() || b.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, b, out, m, k, n]() mutable {
      const std::vector<double>& g = out.grad();
      if (a.requires_grad()) {
        // dA = dC * B^T
        std::vector<double>& ga = a.grad();
        const std::vector<double>& bv = b.values();
        for (size_t i = 0; i < m; ++i) {
          for (size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB = A^T * dC
        std::vector<double>& gb = b.grad();
        const std::vector<double>& av = a.values();
        for (size_t i = 0; i < m; ++i) {
          for (size_t p = 0; p < k; ++p) {
            const double avip = av[i * k + p];
            if (avip == 0.0) continue;
            for (size_t j = 0; j < n; ++j) {
              gb[p * n + j] += avip * g[i * n + j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, Tensor a) {
  check_2d(a, "transpose");
  const size_t m = a.shape()[0];
  const size_t n = a.shape()[1];
  std::vector<double> values(m * n);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) values[j * m + i] = a.at(i, j);
  }
  auto [out, track] =
      make_output(tape, {n, m}, std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out, m, n]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      }
    });
  }
  return out;
}

Tensor add(Tape* tape, Tensor a, Tensor b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ, " + Tensor::shape_string(a.shape()) +
                     " vs " + Tensor::shape_string(b.shape()));
  }
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) {
    values[i] = a.at(i) + b.at(i);
  }
  auto [out, track] = make_output(tape, a.shape(), std::move(values),
                                  a.requires_grad() || b.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, b, out]() mutable {
      const std::vector<double>& g = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor add_rowwise(Tape* tape, Tensor a, Tensor bias) {
  check_2d(a, "add_rowwise");
  const size_t m = a.shape()[0];
  const size_t n = a.shape()[1];
  if (bias.size() != n) {
    throw ShapeError("add_rowwise: bias length " + std::to_string(bias.size()) +
                     " does not match row width " + std::to_string(n));
  }
  std::vector<double> values(m * n);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) values[i * n + j] = a.at(i, j) + bias.at(j);
  }
  auto [out, track] = make_output(tape, a.shape(), std::move(values),
                                  a.requires_grad() || bias.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, bias, out, m, n]() mutable {
      const std::vector<double>& g = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bias.requires_grad()) {
        std::vector<double>& gb = bias.grad();
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor add_scalar(Tape* tape, Tensor a, double c) {
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = a.at(i) + c;
  auto [out, track] =
      make_output(tape, a.shape(), std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor scale(Tape* tape, Tensor a, double c) {
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = a.at(i) * c;
  auto [out, track] =
      make_output(tape, a.shape(), std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out, c]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

Tensor mul(Tape* tape, Tensor a, Tensor b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ, " + Tensor::shape_string(a.shape()) +
                     " vs " + Tensor::shape_string(b.shape()));
  }
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = a.at(i) * b.at(i);
  auto [out, track] = make_output(tape, a.shape(), std::move(values),
                                  a.requires_grad() || b.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, b, out]() mutable {
      const std::vector<double>& g = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
      }
    });
  }
  return out;
}

Tensor maximum(Tape* tape, Tensor a, Tensor b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("maximum: shapes differ, " +
                     Tensor::shape_string(a.shape()) + " vs " +
                     Tensor::shape_string(b.shape()));
  }
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) {
    values[i] = std::max(a.at(i), b.at(i));
  }
  auto [out, track] = make_output(tape, a.shape(), std::move(values),
                                  a.requires_grad() || b.requires_grad());
  if (track) {
    // Ties route the gradient to the first argument.
    tape->record(out.storage(), [a, b, out]() mutable {
      const std::vector<double>& g = out.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (a.at(i) >= b.at(i)) {
          if (a.requires_grad()) a.grad()[i] += g[i];
        } else if (b.requires_grad()) {
          b.grad()[i] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape* tape, Tensor a) {
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) {
    values[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  }
  auto [out, track] =
      make_output(tape, a.shape(), std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (a.at(i) > 0.0) ga[i] += g[i];
      }
    });
  }
  return out;
}

Tensor log_elem(Tape* tape, Tensor a) {
  std::vector<double> values(a.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = std::log(a.at(i));
  auto [out, track] =
      make_output(tape, a.shape(), std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (g[i] != 0.0) ga[i] += g[i] / a.at(i);
      }
    });
  }
  return out;
}

Tensor softmax_rows(Tape* tape, Tensor a) {
  check_2d(a, "softmax_rows");
  const size_t m = a.shape()[0];
  const size_t n = a.shape()[1];
  std::vector<double> values(m * n);
  for (size_t i = 0; i < m; ++i) {
    double row_max = a.at(i, 0);
    for (size_t j = 1; j < n; ++j) row_max = std::max(row_max, a.at(i, j));
    double denom = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double e = std::exp(a.at(i, j) - row_max);
      values[i * n + j] = e;
      denom += e;
    }
    for (size_t j = 0; j < n; ++j) values[i * n + j] /= denom;
  }
  auto [out, track] =
      make_output(tape, a.shape(), std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out, m, n]() mutable {
      const std::vector<double>& g = out.grad();
      const std::vector<double>& y = out.values();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (size_t j = 0; j < n; ++j) {
          ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape* tape, Tensor x, Tensor gain,
                  Tensor bias, double eps) {
  if (eps <= 0.0) {
    throw ContractError("layer_norm: eps must be positive");
  }
  const size_t d = x.cols();
  const size_t m = x.rank() == 2 ? x.shape()[0] : 1;
  const size_t width = x.rank() == 2 ? d : x.size();
  if (gain.size() != width || bias.size() != width) {
    throw ShapeError("layer_norm: gain/bias length must match vector width " +
                     std::to_string(width));
  }
  const size_t n = width;
  std::vector<double> values(x.size());
  std::vector<double> inv_std(m);
  std::vector<double> normalized(x.size());
  for (size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double s = 1.0 / std::sqrt(var + eps);
    inv_std[i] = s;
    for (size_t j = 0; j < n; ++j) {
      const double z = (row[j] - mean) * s;
      normalized[i * n + j] = z;
      values[i * n + j] = z * gain.at(j) + bias.at(j);
    }
  }
  auto [out, track] = make_output(
      tape, x.shape(), std::move(values),
      x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  if (track) {
    tape->record(out.storage(), [x, gain, bias, out, m, n,
                                 inv_std = std::move(inv_std),
                                 normalized = std::move(normalized)]() mutable {
      const std::vector<double>& g = out.grad();
      for (size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        const double* zrow = normalized.data() + i * n;
        if (gain.requires_grad()) {
          std::vector<double>& gg = gain.grad();
          for (size_t j = 0; j < n; ++j) gg[j] += grow[j] * zrow[j];
        }
        if (bias.requires_grad()) {
          std::vector<double>& gb = bias.grad();
          for (size_t j = 0; j < n; ++j) gb[j] += grow[j];
        }
        if (x.requires_grad()) {
          // dz_j = g_j * gain_j; dx = s * (dz - mean(dz) - z * mean(dz*z))
          double mean_dz = 0.0;
          double mean_dzz = 0.0;
          for (size_t j = 0; j < n; ++j) {
            const double dz = grow[j] * gain.at(j);
            mean_dz += dz;
            mean_dzz += dz * zrow[j];
          }
          mean_dz /= static_cast<double>(n);
          mean_dzz /= static_cast<double>(n);
          std::vector<double>& gx = x.grad();
          for (size_t j = 0; j < n; ++j) {
            const double dz = grow[j] * gain.at(j);
            gx[i * n + j] += inv_std[i] * (dz - mean_dz - zrow[j] * mean_dzz);
          }
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(Tape* tape, Tensor table, std::span<const int> ids) {
  check_2d(table, "gather_rows");
  const size_t v = table.shape()[0];
  const size_t d = table.shape()[1];
  if (ids.empty()) {
    throw ContractError("gather_rows: empty id list");
  }
  std::vector<double> values(ids.size() * d);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<size_t>(id) >= v) {
      throw ShapeError("gather_rows: id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(v) + ")");
    }
    std::copy_n(table.values().data() + static_cast<size_t>(id) * d, d,
                values.data() + i * d);
  }
  auto [out, track] = make_output(tape, {ids.size(), d}, std::move(values),
                                  table.requires_grad());
  if (track) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    tape->record(out.storage(),
                 [table, out, d, ids_copy = std::move(ids_copy)]() mutable {
                   const std::vector<double>& g = out.grad();
                   std::vector<double>& gt = table.grad();
                   for (size_t i = 0; i < ids_copy.size(); ++i) {
                     double* dst =
                         gt.data() + static_cast<size_t>(ids_copy[i]) * d;
                     const double* src = g.data() + i * d;
                     for (size_t j = 0; j < d; ++j) dst[j] += src[j];
                   }
                 });
  }
  return out;
}

Tensor concat_rows(Tape* tape, Tensor a, Tensor b) {
  check_2d(a, "concat_rows");
  check_2d(b, "concat_rows");
  if (a.shape()[1] != b.shape()[1]) {
    throw ShapeError("concat_rows: column counts differ, " +
                     Tensor::shape_string(a.shape()) + " vs " +
                     Tensor::shape_string(b.shape()));
  }
  const size_t n = a.shape()[1];
  std::vector<double> values;
  values.reserve(a.size() + b.size());
  values.insert(values.end(), a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  auto [out, track] =
      make_output(tape, {a.shape()[0] + b.shape()[0], n}, std::move(values),
                  a.requires_grad() || b.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, b, out]() mutable {
      const std::vector<double>& g = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = a.grad();
        for (size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = b.grad();
        for (size_t i = 0; i < b.size(); ++i) gb[i] += g[a.size() + i];
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape* tape, Tensor a, Tensor b) {
  check_2d(a, "concat_cols");
  check_2d(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_cols: row counts differ, " +
                     Tensor::shape_string(a.shape()) + " vs " +
                     Tensor::shape_string(b.shape()));
  }
  const size_t m = a.shape()[0];
  const size_t na = a.shape()[1];
  const size_t nb = b.shape()[1];
  std::vector<double> values(m * (na + nb));
  for (size_t i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * na, na, values.data() + i * (na + nb));
    std::copy_n(b.values().data() + i * nb, nb,
                values.data() + i * (na + nb) + na);
  }
  auto [out, track] = make_output(tape, {m, na + nb}, std::move(values),
                                  a.requires_grad() || b.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, b, out, m, na, nb]() mutable {
      const std::vector<double>& g = out.grad();
      for (size_t i = 0; i < m; ++i) {
        if (a.requires_grad()) {
          std::vector<double>& ga = a.grad();
          for (size_t j = 0; j < na; ++j) {
            ga[i * na + j] += g[i * (na + nb) + j];
          }
        }
        if (b.requires_grad()) {
          std::vector<double>& gb = b.grad();
          for (size_t j = 0; j < nb; ++j) {
            gb[i * nb + j] += g[i * (na + nb) + na + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape* tape, Tensor a, size_t begin, size_t end) {
  check_2d(a, "slice_rows");
  const size_t m = a.shape()[0];
  const size_t n = a.shape()[1];
  if (begin >= end || end > m) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) +
                     ", " + std::to_string(end) + ") for " +
                     std::to_string(m) + " rows");
  }
  std::vector<double> values(a.values().begin() + begin * n,
                             a.values().begin() + end * n);
  auto [out, track] = make_output(tape, {end - begin, n}, std::move(values),
                                  a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out, begin, n]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(Tape* tape, Tensor a, size_t begin, size_t end) {
  check_2d(a, "slice_cols");
  const size_t m = a.shape()[0];
  const size_t n = a.shape()[1];
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: invalid range [" + std::to_string(begin) +
                     ", " + std::to_string(end) + ") for " +
                     std::to_string(n) + " cols");
  }
  const size_t w = end - begin;
  std::vector<double> values(m * w);
  for (size_t i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * n + begin, w, values.data() + i * w);
  }
  auto [out, track] =
      make_output(tape, {m, w}, std::move(values), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out, begin, m, n, w]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < w; ++j) {
          ga[i * n + begin + j] += g[i * w + j];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, Tensor a) {
  double total = 0.0;
  for (const double v : a.values()) total += v;
  auto [out, track] =
      make_output(tape, {1}, {total}, a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out]() mutable {
      const double g = out.grad()[0];
      if (g == 0.0) return;
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor reshape(Tape* tape, Tensor a, std::vector<size_t> shape) {
  if (shape_product(shape) != a.size()) {
    throw ShapeError("reshape: element count mismatch, " +
                     Tensor::shape_string(a.shape()) + " -> " +
                     Tensor::shape_string(shape));
  }
  auto [out, track] =
      make_output(tape, std::move(shape), a.values(), a.requires_grad());
  if (track) {
    tape->record(out.storage(), [a, out]() mutable {
      const std::vector<double>& g = out.grad();
      std::vector<double>& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

}  // namespace tim
