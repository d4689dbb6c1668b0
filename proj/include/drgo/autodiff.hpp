#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every primitive whose inputs require gradients while the tape
// is alive (the most recently constructed Tape is the active one). Entries are
// appended in evaluation order, so walking them backwards is a valid
// topological order. Without an active tape, primitives compute values only.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/matrix.hpp"
#include "drgo/sparse.hpp"

namespace drgo::ad {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves
};

inline void accumulate(Node& n, const Matrix& g) {
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  auto& d = n.grad.data();
  const auto& s = g.data();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
}

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    return Tensor(Matrix(rows, cols), requires_grad);
  }
  static Tensor filled(std::size_t rows, std::size_t cols, double v) { return Tensor(Matrix(rows, cols, v)); }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor(Matrix(1, 1, v), requires_grad); }
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false) {
    return Tensor(Matrix(rows, cols, std::move(values)), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }
  /// For optimizers and perturbation harnesses; do not mutate a tensor that
  /// is still referenced by an un-replayed tape.
  Matrix& mutable_value() { return node_->value; }
  double operator()(std::size_t r, std::size_t c) const { return node_->value(r, c); }

  /// Value of a 1x1 tensor.
  double item() const {
    if (size() != 1) throw std::invalid_argument("item() on a tensor that is not 1x1");
    return node_->value.data()[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->tape_id == 0; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Matrix(rows(), cols()); }
  void clear_grad() { node_->grad = Matrix(); }

  /// Same value, no history, no gradient requirement.
  Tensor detach() const { return Tensor(node_->value); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

class Tape {
 public:
  Tape() : id_(detail::next_tape_id()), previous_(active_) { active_ = this; }
  ~Tape() { active_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return active_; }

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Appends an entry; `fn` receives the output gradient and accumulates into inputs.
  void record(std::shared_ptr<detail::Node> out, std::function<void(const Matrix&)> fn) {
    if (consumed_) throw std::logic_error("Tape: recording onto a tape that was already replayed");
    out->tape_id = id_;
    entries_.push_back({std::move(out), std::move(fn)});
  }

  /// Populates d(loss)/d(leaf) for every requires_grad leaf reachable from the
  /// loss. Leaf gradients accumulate; intermediates are released afterwards.
  /// A tape can be replayed once.
  void backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("Tape::backward: tape already replayed; run the forward pass again");
    if (!loss.defined() || loss.size() != 1)
      throw std::invalid_argument("Tape::backward: loss must be a 1x1 tensor");
    if (loss.node()->tape_id != id_)
      throw std::invalid_argument("Tape::backward: loss was not produced on this tape (detached)");
    loss.node()->grad = Matrix(1, 1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->fn(it->out->grad);
    }
    for (auto& e : entries_) e.out->grad = Matrix();
    entries_.clear();
    consumed_ = true;
  }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> out;
    std::function<void(const Matrix&)> fn;
  };

  std::uint64_t id_;
  Tape* previous_;
  bool consumed_ = false;
  std::vector<Entry> entries_;
  inline static thread_local Tape* active_ = nullptr;
};

namespace detail {

/// Result tensor plus whether a tape entry must be recorded for it.
inline std::pair<Tensor, Tape*> make_output(Matrix value, std::initializer_list<const Tensor*> inputs) {
  Tensor out(std::move(value));
  Tape* tape = Tape::active();
  if (!tape) return {out, nullptr};
  const bool need = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  if (!need) return {out, nullptr};
  out.node()->requires_grad = true;
  return {out, tape};
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

template <class F>
Matrix map(const Matrix& x, F f) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) y.data()[k] = f(x.data()[k]);
  return y;
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// ---- primitives ------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  auto [out, tape] = detail::make_output(drgo::matmul(a.value(), b.value()), {&a, &b});
  if (tape) {
    tape->record(out.node(), [an = a.node(), bn = b.node()](const Matrix& g) {
      const Matrix& A = an->value;
      const Matrix& B = bn->value;
      if (an->requires_grad) {
        Matrix da(A.rows(), A.cols());
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t k = 0; k < A.cols(); ++k) da(i, k) = dot(g.row(i), B.row(k));
        detail::accumulate(*an, da);
      }
      if (bn->requires_grad) {
        Matrix db(B.rows(), B.cols());
        for (std::size_t i = 0; i < A.rows(); ++i) {
          const auto gi = g.row(i);
          for (std::size_t k = 0; k < A.cols(); ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) continue;
            double* dbk = db.row(k).data();
            for (std::size_t j = 0; j < gi.size(); ++j) dbk[j] += aik * gi[j];
          }
        }
        detail::accumulate(*bn, db);
      }
    });
  }
  return out;
}

/// S * A for a constant sparse S (graph propagation).
inline Tensor spmm(std::shared_ptr<const CsrMatrix> s, const Tensor& a) {
  auto [out, tape] = detail::make_output(drgo::spmm(*s, a.value()), {&a});
  if (tape) {
    tape->record(out.node(), [s, an = a.node()](const Matrix& g) {
      Matrix da(an->value.rows(), an->value.cols());
      for (std::size_t r = 0; r < s->rows(); ++r) {
        const auto cs = s->row_cols(r);
        const auto vs = s->row_values(r);
        const double* gr = g.row(r).data();
        for (std::size_t k = 0; k < cs.size(); ++k) {
          double* dr = da.row(cs[k]).data();
          for (std::size_t j = 0; j < g.cols(); ++j) dr[j] += vs[k] * gr[j];
        }
      }
      detail::accumulate(*an, da);
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.data()[k] += b.value().data()[k];
  auto [out, tape] = detail::make_output(std::move(v), {&a, &b});
  if (tape)
    tape->record(out.node(), [an = a.node(), bn = b.node()](const Matrix& g) {
      detail::accumulate(*an, g);
      detail::accumulate(*bn, g);
    });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.data()[k] -= b.value().data()[k];
  auto [out, tape] = detail::make_output(std::move(v), {&a, &b});
  if (tape)
    tape->record(out.node(), [an = a.node(), bn = b.node()](const Matrix& g) {
      detail::accumulate(*an, g);
      if (bn->requires_grad) detail::accumulate(*bn, detail::map(g, [](double x) { return -x; }));
    });
  return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.data()[k] *= b.value().data()[k];
  auto [out, tape] = detail::make_output(std::move(v), {&a, &b});
  if (tape)
    tape->record(out.node(), [an = a.node(), bn = b.node()](const Matrix& g) {
      auto prod = [&g](const Matrix& other) {
        Matrix d = g;
        for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] *= other.data()[k];
        return d;
      };
      if (an->requires_grad) detail::accumulate(*an, prod(bn->value));
      if (bn->requires_grad) detail::accumulate(*bn, prod(an->value));
    });
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  auto [out, tape] = detail::make_output(detail::map(a.value(), [s](double x) { return s * x; }), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node(), s](const Matrix& g) {
      detail::accumulate(*an, detail::map(g, [s](double x) { return s * x; }));
    });
  return out;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  auto [out, tape] = detail::make_output(Matrix(1, 1, s), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node()](const Matrix& g) {
      detail::accumulate(*an, Matrix(an->value.rows(), an->value.cols(), g(0, 0)));
    });
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor sigmoid(const Tensor& a) {
  auto [out, tape] = detail::make_output(detail::map(a.value(), detail::stable_sigmoid), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node(), on = out.node()](const Matrix& g) {
      Matrix d = g;
      for (std::size_t k = 0; k < d.size(); ++k) {
        const double y = on->value.data()[k];
        d.data()[k] *= y * (1.0 - y);
      }
      detail::accumulate(*an, d);
    });
  return out;
}

/// Natural log; non-positive inputs are a domain error rather than NaN.
inline Tensor log(const Tensor& a) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!(a.value().data()[k] > 0.0))
      throw std::domain_error("log: non-positive input " + std::to_string(a.value().data()[k]) + " at flat index " +
                              std::to_string(k));
  auto [out, tape] = detail::make_output(detail::map(a.value(), [](double x) { return std::log(x); }), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node()](const Matrix& g) {
      Matrix d = g;
      for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] /= an->value.data()[k];
      detail::accumulate(*an, d);
    });
  return out;
}

inline Tensor exp(const Tensor& a) {
  auto [out, tape] = detail::make_output(detail::map(a.value(), [](double x) { return std::exp(x); }), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node(), on = out.node()](const Matrix& g) {
      Matrix d = g;
      for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] *= on->value.data()[k];
      detail::accumulate(*an, d);
    });
  return out;
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
  auto [out, tape] = detail::make_output(detail::map(a.value(), detail::stable_softplus), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node()](const Matrix& g) {
      Matrix d = g;
      for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] *= detail::stable_sigmoid(an->value.data()[k]);
      detail::accumulate(*an, d);
    });
  return out;
}

inline Tensor square(const Tensor& a) {
  auto [out, tape] = detail::make_output(detail::map(a.value(), [](double x) { return x * x; }), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node()](const Matrix& g) {
      Matrix d = g;
      for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] *= 2.0 * an->value.data()[k];
      detail::accumulate(*an, d);
    });
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), v.data().begin() + static_cast<std::ptrdiff_t>(off * cols));
    off += p.rows();
  }
  Tensor out(std::move(v));
  Tape* tape = Tape::active();
  const bool need = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape && need) {
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record(out.node(), [nodes = std::move(nodes)](const Matrix& g) {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t r = n->value.rows(), c = n->value.cols();
        if (n->requires_grad) {
          Matrix d(r, c);
          std::copy(g.data().begin() + static_cast<std::ptrdiff_t>(off * c),
                    g.data().begin() + static_cast<std::ptrdiff_t>((off + r) * c), d.data().begin());
          detail::accumulate(*n, d);
        }
        off += r;
      }
    });
  }
  return out;
}

inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  for (std::size_t r : idx)
    if (r >= a.rows()) throw std::out_of_range("gather_rows: index " + std::to_string(r) + " out of range");
  auto [out, tape] = detail::make_output(select_rows(a.value(), idx), {&a});
  if (tape)
    tape->record(out.node(), [an = a.node(), idx = std::vector<std::size_t>(idx.begin(), idx.end())](const Matrix& g) {
      Matrix d(an->value.rows(), an->value.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double* dr = d.row(idx[r]).data();
        const double* gr = g.row(r).data();
        for (std::size_t j = 0; j < g.cols(); ++j) dr[j] += gr[j];
      }
      detail::accumulate(*an, d);
    });
  return out;
}

// ---- compositions ----------------------------------------------------------

/// Column vector of per-row sums.
inline Tensor row_sum(const Tensor& a) { return matmul(a, Tensor::filled(a.cols(), 1, 1.0)); }

/// Adds the 1 x c row `bias` to every row of `a`.
inline Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  return add(a, matmul(Tensor::filled(a.rows(), 1, 1.0), bias));
}

/// x * sigmoid(x).
inline Tensor silu(const Tensor& a) { return hadamard(a, sigmoid(a)); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace drgo::ad
