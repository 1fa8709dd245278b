#pragma once

// Reverse-mode differentiation over dense arrays of doubles.
//
// A Tape records elementary array operations in topological order. Every
// node keeps its forward value, so the tape can be replayed and pulled back
// (vector-Jacobian product) without re-running the user's program. Vars are
// lightweight handles (tape pointer + node index); a Tape must outlive every
// Var it produced and is not movable.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfid::ad {

using IndexMap = std::shared_ptr<const std::vector<std::int32_t>>;

IndexMap make_index_map(std::vector<std::int32_t> idx);

enum class Op : std::uint8_t {
  Input,
  Constant,
  Copy,
  Add,
  Sub,
  Mul,
  Div,
  Ratio,
  Scale,
  Shift,
  MatVec,
  VecMat,
  Exp,
  Log,
  Sigmoid,
  Relu,
  SoftmaxRows,
  LogSoftmaxRows,
  Sum,
  Gather,
  Slice,
  ScatterAdd,
  Concat,
  Clamp,
};

const char* op_name(Op op);

/// Raised when an operation is undefined at its inputs; carries the index of
/// the node that would have been created.
class TapeError : public std::runtime_error {
 public:
  TapeError(std::size_t node, const std::string& what);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::int32_t id() const { return id_; }
  std::size_t size() const;
  std::span<const double> value() const;
  double scalar() const;
  double operator[](std::size_t i) const { return value()[i]; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

struct Node {
  Op op = Op::Constant;
  std::vector<std::int32_t> inputs;
  std::vector<double> value;
  double p0 = 0.0;
  double p1 = 0.0;
  std::size_t rows = 0;  // slice: offset
  std::size_t cols = 0;  // slice: length
  IndexMap index;
};

class Adjoints {
 public:
  /// Cotangent accumulated on `v`; zeros if nothing flowed into it.
  std::vector<double> of(Var v) const;

 private:
  friend class Tape;
  std::vector<std::vector<double>> adj_;
  std::vector<std::size_t> sizes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var input(std::vector<double> values);
  Var constant(std::vector<double> values);
  Var constant(double value);
  Var zeros(std::size_t n) { return constant(std::vector<double>(n, 0.0)); }

  // Binary elementwise ops. Operands must have equal sizes, or one of them
  // size 1 (broadcast).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  /// Division with the extended conventions 0/0 = 0, x/0 = +inf (x > 0),
  /// x/0 = -inf (x < 0). Zero denominators contribute no derivative.
  Var ratio(Var a, Var b);

  Var copy(Var a);
  Var scale(Var a, double c);
  Var shift(Var a, double c);
  /// y = M x, M stored row-major [rows x cols].
  Var matvec(Var m, Var x, std::size_t rows, std::size_t cols);
  /// y = x^T M, M stored row-major [rows x cols].
  Var vecmat(Var x, Var m, std::size_t rows, std::size_t cols);

  Var exp(Var a);
  Var log(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var softmax_rows(Var a, std::size_t width);
  Var log_softmax_rows(Var a, std::size_t width);

  Var sum(Var a);
  /// y[i] = a[idx[i]]
  Var gather(Var a, IndexMap idx);
  /// y[idx[i]] += a[i], y has size n
  Var scatter_add(Var a, IndexMap idx, std::size_t n);
  Var slice(Var a, std::size_t offset, std::size_t length);
  Var concat(std::span<const Var> parts);
  /// Derivative 1 on [lo, hi] (boundaries included), 0 outside.
  Var clamp(Var a, double lo, double hi);

  std::size_t num_nodes() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  /// Recomputes every non-leaf node from its inputs and reports whether the
  /// results match the recorded values bitwise.
  bool replay_matches() const;

  /// u^T J for the Jacobian J of `output` with respect to every node.
  Adjoints vjp(Var output, std::span<const double> cotangent) const;

 private:
  friend class Var;
  Var push(Node node);
  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a, double p0 = 0.0, double p1 = 0.0);
  std::vector<double> evaluate(const Node& node, std::size_t index) const;
  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator*(double c, Var a);
Var operator-(Var a);

/// A program built from tape operations: inputs in, outputs out.
using Program = std::function<std::vector<Var>(Tape&, std::span<const Var>)>;

struct Recording {
  std::unique_ptr<Tape> tape;
  std::vector<Var> inputs;
  std::vector<Var> outputs;
};

Recording record(const Program& program,
                 const std::vector<std::vector<double>>& inputs);

/// Pulls `cotangent` back through the recording; one vector per input.
std::vector<std::vector<double>> vjp(const Recording& rec,
                                     std::span<const double> cotangent,
                                     std::size_t output = 0);

using ScalarProgram = std::function<Var(Tape&, Var)>;

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  /// Coordinates where f was not finite at a probe point.
  std::vector<std::size_t> nonfinite;
};

/// Compares the reverse-mode gradient of a scalar program against central
/// differences. Relative error per coordinate uses max(1, |analytic|).
GradcheckReport gradcheck(const ScalarProgram& f, std::span<const double> x,
                          double eps);

}  // namespace mfid::ad
