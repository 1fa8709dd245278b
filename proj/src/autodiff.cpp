#include "mfid/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace mfid::ad {

namespace {

std::string describe(std::size_t node, Op op, const std::string& msg) {
  std::ostringstream os;
  os << "node " << node << " (" << op_name(op) << "): " << msg;
  return os.str();
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace

IndexMap make_index_map(std::vector<std::int32_t> idx) {
  return std::make_shared<const std::vector<std::int32_t>>(std::move(idx));
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Copy: return "copy";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Ratio: return "ratio";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::MatVec: return "matvec";
    case Op::VecMat: return "vecmat";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LogSoftmaxRows: return "log_softmax_rows";
    case Op::Sum: return "sum";
    case Op::Gather: return "gather";
    case Op::Slice: return "slice";
    case Op::ScatterAdd: return "scatter_add";
    case Op::Concat: return "concat";
    case Op::Clamp: return "clamp";
  }
  return "?";
}

TapeError::TapeError(std::size_t node, const std::string& what)
    : std::runtime_error(what), node_(node) {}

std::size_t Var::size() const { return tape_->nodes_[id_].value.size(); }

std::span<const double> Var::value() const { return tape_->nodes_[id_].value; }

double Var::scalar() const {
  const auto& v = tape_->nodes_[id_].value;
  if (v.size() != 1) throw std::invalid_argument("Var::scalar on non-scalar node");
  return v[0];
}

std::vector<double> Adjoints::of(Var v) const {
  const auto id = static_cast<std::size_t>(v.id());
  if (id < adj_.size() && !adj_[id].empty()) return adj_[id];
  return std::vector<double>(id < sizes_.size() ? sizes_[id] : v.size(), 0.0);
}

void Tape::check_owned(Var v) const {
  if (!v.valid() || &v.tape() != this || v.id() < 0 ||
      static_cast<std::size_t>(v.id()) >= nodes_.size())
    throw std::invalid_argument("Var does not belong to this tape");
}

Var Tape::push(Node node) {
  const std::size_t index = nodes_.size();
  node.value = evaluate(node, index);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::int32_t>(index));
}

Var Tape::input(std::vector<double> values) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::constant(std::vector<double> values) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::constant(double value) { return constant(std::vector<double>{value}); }

Var Tape::binary(Op op, Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const auto sa = a.size();
  const auto sb = b.size();
  if (sa != sb && sa != 1 && sb != 1) {
    throw TapeError(nodes_.size(),
                    describe(nodes_.size(), op,
                             "shape mismatch " + std::to_string(sa) + " vs " +
                                 std::to_string(sb)));
  }
  Node n;
  n.op = op;
  n.inputs = {a.id(), b.id()};
  return push(std::move(n));
}

Var Tape::unary(Op op, Var a, double p0, double p1) {
  check_owned(a);
  Node n;
  n.op = op;
  n.inputs = {a.id()};
  n.p0 = p0;
  n.p1 = p1;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::Div, a, b); }
Var Tape::ratio(Var a, Var b) { return binary(Op::Ratio, a, b); }
Var Tape::copy(Var a) { return unary(Op::Copy, a); }
Var Tape::scale(Var a, double c) { return unary(Op::Scale, a, c); }
Var Tape::shift(Var a, double c) { return unary(Op::Shift, a, c); }
Var Tape::exp(Var a) { return unary(Op::Exp, a); }
Var Tape::log(Var a) { return unary(Op::Log, a); }
Var Tape::sigmoid(Var a) { return unary(Op::Sigmoid, a); }
Var Tape::relu(Var a) { return unary(Op::Relu, a); }
Var Tape::sum(Var a) { return unary(Op::Sum, a); }
Var Tape::clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(Op::Clamp, a, lo, hi);
}

Var Tape::matvec(Var m, Var x, std::size_t rows, std::size_t cols) {
  check_owned(m);
  check_owned(x);
  if (m.size() != rows * cols || x.size() != cols)
    throw TapeError(nodes_.size(), describe(nodes_.size(), Op::MatVec, "shape mismatch"));
  Node n;
  n.op = Op::MatVec;
  n.inputs = {m.id(), x.id()};
  n.rows = rows;
  n.cols = cols;
  return push(std::move(n));
}

Var Tape::vecmat(Var x, Var m, std::size_t rows, std::size_t cols) {
  check_owned(m);
  check_owned(x);
  if (m.size() != rows * cols || x.size() != rows)
    throw TapeError(nodes_.size(), describe(nodes_.size(), Op::VecMat, "shape mismatch"));
  Node n;
  n.op = Op::VecMat;
  n.inputs = {x.id(), m.id()};
  n.rows = rows;
  n.cols = cols;
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a, std::size_t width) {
  check_owned(a);
  if (width == 0 || a.size() % width != 0)
    throw TapeError(nodes_.size(), describe(nodes_.size(), Op::SoftmaxRows, "bad row width"));
  Node n;
  n.op = Op::SoftmaxRows;
  n.inputs = {a.id()};
  n.cols = width;
  n.rows = a.size() / width;
  return push(std::move(n));
}

Var Tape::log_softmax_rows(Var a, std::size_t width) {
  check_owned(a);
  if (width == 0 || a.size() % width != 0)
    throw TapeError(nodes_.size(),
                    describe(nodes_.size(), Op::LogSoftmaxRows, "bad row width"));
  Node n;
  n.op = Op::LogSoftmaxRows;
  n.inputs = {a.id()};
  n.cols = width;
  n.rows = a.size() / width;
  return push(std::move(n));
}

Var Tape::gather(Var a, IndexMap idx) {
  check_owned(a);
  const std::size_t sa = a.size();
  for (auto i : *idx)
    if (i < 0 || static_cast<std::size_t>(i) >= sa)
      throw TapeError(nodes_.size(), describe(nodes_.size(), Op::Gather, "index out of range"));
  Node n;
  n.op = Op::Gather;
  n.inputs = {a.id()};
  n.index = std::move(idx);
  return push(std::move(n));
}

Var Tape::scatter_add(Var a, IndexMap idx, std::size_t size) {
  check_owned(a);
  if (idx->size() != a.size())
    throw TapeError(nodes_.size(), describe(nodes_.size(), Op::ScatterAdd, "index size mismatch"));
  for (auto i : *idx)
    if (i < 0 || static_cast<std::size_t>(i) >= size)
      throw TapeError(nodes_.size(),
                      describe(nodes_.size(), Op::ScatterAdd, "index out of range"));
  Node n;
  n.op = Op::ScatterAdd;
  n.inputs = {a.id()};
  n.index = std::move(idx);
  n.rows = size;
  return push(std::move(n));
}

Var Tape::slice(Var a, std::size_t offset, std::size_t length) {
  check_owned(a);
  if (offset + length > a.size())
    throw TapeError(nodes_.size(), describe(nodes_.size(), Op::Slice, "slice out of range"));
  Node n;
  n.op = Op::Slice;
  n.inputs = {a.id()};
  n.rows = offset;
  n.cols = length;
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  Node n;
  n.op = Op::Concat;
  for (const auto& p : parts) {
    check_owned(p);
    n.inputs.push_back(p.id());
  }
  return push(std::move(n));
}

std::vector<double> Tape::evaluate(const Node& n, std::size_t index) const {
  auto in = [&](std::size_t k) -> const std::vector<double>& {
    return nodes_[static_cast<std::size_t>(n.inputs[k])].value;
  };
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      return n.value;
    case Op::Copy:
      return in(0);
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Ratio: {
      const auto& a = in(0);
      const auto& b = in(1);
      const std::size_t size = std::max(a.size(), b.size());
      const bool ba = a.size() == 1, bb = b.size() == 1;
      std::vector<double> y(size);
      const std::size_t sa = ba ? 0 : 1, sb = bb ? 0 : 1;
      const double* pa = a.data();
      const double* pb = b.data();
      switch (n.op) {
        case Op::Add:
          for (std::size_t i = 0; i < size; ++i) y[i] = pa[i * sa] + pb[i * sb];
          break;
        case Op::Sub:
          for (std::size_t i = 0; i < size; ++i) y[i] = pa[i * sa] - pb[i * sb];
          break;
        case Op::Mul:
          for (std::size_t i = 0; i < size; ++i) y[i] = pa[i * sa] * pb[i * sb];
          break;
        case Op::Div:
          for (std::size_t i = 0; i < size; ++i) {
            const double x1 = pb[i * sb];
            if (x1 == 0.0) throw TapeError(index, describe(index, n.op, "division by zero"));
            y[i] = pa[i * sa] / x1;
          }
          break;
        default:
          for (std::size_t i = 0; i < size; ++i) {
            const double x0 = pa[i * sa], x1 = pb[i * sb];
            if (x1 != 0.0) {
              y[i] = x0 / x1;
            } else if (x0 > 0.0) {
              y[i] = std::numeric_limits<double>::infinity();
            } else if (x0 < 0.0) {
              y[i] = -std::numeric_limits<double>::infinity();
            } else {
              y[i] = 0.0;
            }
          }
      }
      return y;
    }
    case Op::Scale: {
      std::vector<double> y = in(0);
      for (auto& v : y) v *= n.p0;
      return y;
    }
    case Op::Shift: {
      std::vector<double> y = in(0);
      for (auto& v : y) v += n.p0;
      return y;
    }
    case Op::MatVec: {
      const auto& m = in(0);
      const auto& x = in(1);
      std::vector<double> y(n.rows, 0.0);
      for (std::size_t r = 0; r < n.rows; ++r) {
        const double* row = m.data() + r * n.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < n.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
      }
      return y;
    }
    case Op::VecMat: {
      const auto& x = in(0);
      const auto& m = in(1);
      std::vector<double> y(n.cols, 0.0);
      for (std::size_t r = 0; r < n.rows; ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        const double* row = m.data() + r * n.cols;
        for (std::size_t c = 0; c < n.cols; ++c) y[c] += xr * row[c];
      }
      return y;
    }
    case Op::Exp: {
      std::vector<double> y = in(0);
      for (auto& v : y) v = std::exp(v);
      return y;
    }
    case Op::Log: {
      std::vector<double> y = in(0);
      for (auto& v : y) {
        if (!(v > 0.0)) throw TapeError(index, describe(index, n.op, "log of nonpositive value"));
        v = std::log(v);
      }
      return y;
    }
    case Op::Sigmoid: {
      std::vector<double> y = in(0);
      for (auto& v : y) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      return y;
    }
    case Op::Relu: {
      std::vector<double> y = in(0);
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case Op::SoftmaxRows:
    case Op::LogSoftmaxRows: {
      std::vector<double> y = in(0);
      for (std::size_t r = 0; r < n.rows; ++r) {
        double* row = y.data() + r * n.cols;
        const double mx = *std::max_element(row, row + n.cols);
        double z = 0.0;
        for (std::size_t c = 0; c < n.cols; ++c) z += std::exp(row[c] - mx);
        if (n.op == Op::SoftmaxRows) {
          for (std::size_t c = 0; c < n.cols; ++c) row[c] = std::exp(row[c] - mx) / z;
        } else {
          const double lse = std::log(z);
          for (std::size_t c = 0; c < n.cols; ++c) row[c] = (row[c] - mx) - lse;
        }
      }
      return y;
    }
    case Op::Sum: {
      double acc = 0.0;
      for (double v : in(0)) acc += v;
      return {acc};
    }
    case Op::Gather: {
      const auto& a = in(0);
      const auto& idx = *n.index;
      std::vector<double> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = a[static_cast<std::size_t>(idx[i])];
      return y;
    }
    case Op::Slice: {
      const auto& a = in(0);
      return std::vector<double>(a.begin() + static_cast<std::ptrdiff_t>(n.rows),
                                 a.begin() + static_cast<std::ptrdiff_t>(n.rows + n.cols));
    }
    case Op::ScatterAdd: {
      const auto& a = in(0);
      const auto& idx = *n.index;
      std::vector<double> y(n.rows, 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) y[static_cast<std::size_t>(idx[i])] += a[i];
      return y;
    }
    case Op::Concat: {
      std::vector<double> y;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const auto& p = in(k);
        y.insert(y.end(), p.begin(), p.end());
      }
      return y;
    }
    case Op::Clamp: {
      std::vector<double> y = in(0);
      for (auto& v : y) v = std::min(std::max(v, n.p0), n.p1);
      return y;
    }
  }
  throw TapeError(index, "unknown op");
}

bool Tape::replay_matches() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.op == Op::Input || n.op == Op::Constant) continue;
    if (!bitwise_equal(evaluate(n, i), n.value)) return false;
  }
  return true;
}

Adjoints Tape::vjp(Var output, std::span<const double> cotangent) const {
  check_owned(output);
  if (cotangent.size() != output.size())
    throw std::invalid_argument("vjp: cotangent size " + std::to_string(cotangent.size()) +
                                " does not match output size " + std::to_string(output.size()));
  Adjoints res;
  const auto out = static_cast<std::size_t>(output.id());
  res.adj_.resize(out + 1);
  res.sizes_.resize(out + 1);
  for (std::size_t i = 0; i <= out; ++i) res.sizes_[i] = nodes_[i].value.size();
  res.adj_[out].assign(cotangent.begin(), cotangent.end());

  auto grad = [&](std::int32_t id) -> std::vector<double>& {
    auto& g = res.adj_[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].value.size(), 0.0);
    return g;
  };

  for (std::size_t k = out + 1; k-- > 0;) {
    if (res.adj_[k].empty()) continue;
    const Node& n = nodes_[k];
    const std::vector<double>& g = res.adj_[k];
    const auto& y = n.value;
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::Copy:
      case Op::Shift: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::Scale: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.p0 * g[i];
        break;
      }
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Ratio: {
        const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const auto& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        const bool ba = a.size() == 1 && g.size() > 1;
        const bool bb = b.size() == 1 && g.size() > 1;
        auto& ga = grad(n.inputs[0]);
        auto& gb = grad(n.inputs[1]);
        const std::size_t sa = ba ? 0 : 1, sb = bb ? 0 : 1;
        switch (n.op) {
          case Op::Add:
            for (std::size_t i = 0; i < g.size(); ++i) {
              ga[i * sa] += g[i];
              gb[i * sb] += g[i];
            }
            break;
          case Op::Sub:
            for (std::size_t i = 0; i < g.size(); ++i) {
              ga[i * sa] += g[i];
              gb[i * sb] -= g[i];
            }
            break;
          case Op::Mul:
            for (std::size_t i = 0; i < g.size(); ++i) {
              ga[i * sa] += g[i] * b[i * sb];
              gb[i * sb] += g[i] * a[i * sa];
            }
            break;
          default:
            for (std::size_t i = 0; i < g.size(); ++i) {
              const double bi = b[i * sb];
              if (bi != 0.0) {
                ga[i * sa] += g[i] / bi;
                gb[i * sb] -= g[i] * y[i] / bi;
              }
            }
        }
        break;
      }
      case Op::MatVec: {
        const auto& m = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const auto& x = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        const bool need_m = nodes_[static_cast<std::size_t>(n.inputs[0])].op != Op::Constant;
        auto& gx = grad(n.inputs[1]);
        std::vector<double>* gm = need_m ? &grad(n.inputs[0]) : nullptr;
        for (std::size_t r = 0; r < n.rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* row = m.data() + r * n.cols;
          for (std::size_t c = 0; c < n.cols; ++c) gx[c] += gr * row[c];
          if (gm) {
            double* grow = gm->data() + r * n.cols;
            for (std::size_t c = 0; c < n.cols; ++c) grow[c] += gr * x[c];
          }
        }
        break;
      }
      case Op::VecMat: {
        const auto& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const auto& m = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        const bool need_m = nodes_[static_cast<std::size_t>(n.inputs[1])].op != Op::Constant;
        auto& gx = grad(n.inputs[0]);
        std::vector<double>* gm = need_m ? &grad(n.inputs[1]) : nullptr;
        for (std::size_t r = 0; r < n.rows; ++r) {
          const double* row = m.data() + r * n.cols;
          double acc = 0.0;
          for (std::size_t c = 0; c < n.cols; ++c) acc += row[c] * g[c];
          gx[r] += acc;
          if (gm && x[r] != 0.0) {
            double* grow = gm->data() + r * n.cols;
            for (std::size_t c = 0; c < n.cols; ++c) grow[c] += x[r] * g[c];
          }
        }
        break;
      }
      case Op::Exp: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        break;
      }
      case Op::Log: {
        const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        break;
      }
      case Op::Sigmoid: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::Relu: {
        const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a[i] >= 0.0) ga[i] += g[i];
        break;
      }
      case Op::SoftmaxRows: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          const std::size_t o = r * n.cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < n.cols; ++c) dot += g[o + c] * y[o + c];
          for (std::size_t c = 0; c < n.cols; ++c) ga[o + c] += y[o + c] * (g[o + c] - dot);
        }
        break;
      }
      case Op::LogSoftmaxRows: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          const std::size_t o = r * n.cols;
          double total = 0.0;
          for (std::size_t c = 0; c < n.cols; ++c) total += g[o + c];
          for (std::size_t c = 0; c < n.cols; ++c) ga[o + c] += g[o + c] - std::exp(y[o + c]) * total;
        }
        break;
      }
      case Op::Sum: {
        auto& ga = grad(n.inputs[0]);
        for (auto& v : ga) v += g[0];
        break;
      }
      case Op::Gather: {
        auto& ga = grad(n.inputs[0]);
        const auto& idx = *n.index;
        for (std::size_t i = 0; i < idx.size(); ++i) ga[static_cast<std::size_t>(idx[i])] += g[i];
        break;
      }
      case Op::Slice: {
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[n.rows + i] += g[i];
        break;
      }
      case Op::ScatterAdd: {
        auto& ga = grad(n.inputs[0]);
        const auto& idx = *n.index;
        for (std::size_t i = 0; i < idx.size(); ++i) ga[i] += g[static_cast<std::size_t>(idx[i])];
        break;
      }
      case Op::Concat: {
        std::size_t off = 0;
        for (auto id : n.inputs) {
          auto& gp = grad(id);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
          off += gp.size();
        }
        break;
      }
      case Op::Clamp: {
        const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        auto& ga = grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a[i] >= n.p0 && a[i] <= n.p1) ga[i] += g[i];
        break;
      }
    }
  }
  return res;
}

Var operator+(Var a, Var b) { return a.tape().add(a, b); }
Var operator-(Var a, Var b) { return a.tape().sub(a, b); }
Var operator*(Var a, Var b) { return a.tape().mul(a, b); }
Var operator/(Var a, Var b) { return a.tape().div(a, b); }
Var operator*(double c, Var a) { return a.tape().scale(a, c); }
Var operator-(Var a) { return a.tape().scale(a, -1.0); }

Recording record(const Program& program, const std::vector<std::vector<double>>& inputs) {
  Recording rec;
  rec.tape = std::make_unique<Tape>();
  for (const auto& x : inputs) rec.inputs.push_back(rec.tape->input(x));
  rec.outputs = program(*rec.tape, rec.inputs);
  return rec;
}

std::vector<std::vector<double>> vjp(const Recording& rec, std::span<const double> cotangent,
                                     std::size_t output) {
  if (output >= rec.outputs.size()) throw std::invalid_argument("vjp: no such output");
  const auto adj = rec.tape->vjp(rec.outputs[output], cotangent);
  std::vector<std::vector<double>> res;
  res.reserve(rec.inputs.size());
  for (const auto& in : rec.inputs) res.push_back(adj.of(in));
  return res;
}

GradcheckReport gradcheck(const ScalarProgram& f, std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be positive");
  GradcheckReport rep;
  {
    Tape tape;
    auto in = tape.input(std::vector<double>(x.begin(), x.end()));
    auto y = f(tape, in);
    if (y.size() != 1) throw std::invalid_argument("gradcheck: program must return a scalar");
    const double one = 1.0;
    rep.analytic = tape.vjp(y, std::span<const double>(&one, 1)).of(in);
  }
  // A probe outside the program's domain counts as non-finite.
  auto eval = [&](const std::vector<double>& p) {
    Tape tape;
    auto in = tape.input(p);
    try {
      return f(tape, in).scalar();
    } catch (const TapeError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  rep.numeric.resize(x.size());
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      rep.nonfinite.push_back(i);
      rep.numeric[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    rep.numeric[i] = (fp - fm) / (2.0 * eps);
    const double err =
        std::abs(rep.numeric[i] - rep.analytic[i]) / std::max(1.0, std::abs(rep.analytic[i]));
    rep.max_rel_error = std::max(rep.max_rel_error, err);
  }
  return rep;
}

}  // namespace mfid::ad
