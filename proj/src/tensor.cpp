#include "fhalab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace fhalab {
namespace ad {

namespace {

thread_local Tape* g_current_tape = nullptr;
std::int64_t g_tape_counter = 0;  // read/written under single-threaded setup of each tape

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(Op op, const Shape& a) {
  throw std::invalid_argument(std::string(op_name(op)) + ": unsupported shape " +
                              shape_str(a));
}

}  // namespace

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != data.size())
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::vec(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> v) {
  return Tensor({r, c}, std::move(v));
}

Tensor Tensor::zeros(const Shape& s) { return Tensor(s, std::vector<double>(shape_size(s), 0.0)); }

Tensor Tensor::ones(const Shape& s) { return Tensor(s, std::vector<double>(shape_size(s), 1.0)); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows(): tensor is " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols(): tensor is " + shape_str(shape));
  return shape[1];
}

double Tensor::scalar_value() const {
  if (size() != 1) throw std::invalid_argument("scalar_value(): tensor is " + shape_str(shape));
  return data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::smul: return "smul";
    case Op::relu: return "relu";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::sqrt_clamped: return "sqrt_clamped";
    case Op::rsqrt_safe: return "rsqrt_safe";
    case Op::abs: return "abs";
    case Op::clamp_min: return "clamp_min";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::softmax: return "softmax";
    case Op::concat: return "concat";
    case Op::transpose: return "transpose";
    case Op::trace: return "trace";
    case Op::row_broadcast: return "row_broadcast";
    case Op::dropout: return "dropout";
  }
  return "?";
}

Tape::Tape() : id_(++g_tape_counter) {}

Tape::~Tape() {
  if (g_current_tape == this) g_current_tape = nullptr;
}

Tape::Scope::Scope(Tape& t) : prev_(g_current_tape) { g_current_tape = &t; }
Tape::Scope::~Scope() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

int Tape::append(Node n) {
  if (consumed_) throw std::invalid_argument("Tape: record already consumed by backward()");
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(const Tensor& t) {
  Node n;
  n.op = Op::leaf;
  n.shape = t.shape;
  n.value = t.data;
  int id = append(std::move(n));
  Tensor out = t;
  out.tape_id = id_;
  out.node = id;
  return out;
}

namespace {

bool recorded_here(const Tensor& t, const Tape* tape) {
  return tape && !tape->consumed() && t.node >= 0 && t.tape_id == tape->id();
}

NodeInput capture(const Tensor& t, const Tape* tape) {
  NodeInput in;
  if (recorded_here(t, tape)) {
    in.id = t.node;
  } else {
    auto c = std::make_shared<Tensor>();
    c->shape = t.shape;
    c->data = t.data;
    in.constant = std::move(c);
  }
  return in;
}

struct InputView {
  const Shape* shape;
  const std::vector<double>* value;
};

InputView view(const Tape& tape, const NodeInput& in) {
  if (in.id >= 0) {
    const Node& n = tape.node(in.id);
    return {&n.shape, &n.value};
  }
  return {&in.constant->shape, &in.constant->data};
}

// Builds the result tensor; records a node when a tape is active and at
// least one input is recorded on it (or record_always is set, used by
// dropout so the mask is replayed correctly).
Tensor finish(Op op, Shape shape, std::vector<double> value,
              std::initializer_list<const Tensor*> inputs, double scalar = 0.0,
              int axis = 0, std::vector<double> aux = {}) {
  Tensor out;
  out.shape = std::move(shape);
  Tape* tape = Tape::current();
  bool record = false;
  if (tape) {
    for (const Tensor* t : inputs)
      if (recorded_here(*t, tape)) record = true;
  }
  if (!record) {
    out.data = std::move(value);
    return out;
  }
  Node n;
  n.op = op;
  n.shape = out.shape;
  n.value = std::move(value);
  n.arity = static_cast<int>(inputs.size());
  int slot = 0;
  for (const Tensor* t : inputs) n.in[static_cast<std::size_t>(slot++)] = capture(*t, tape);
  n.scalar = scalar;
  n.axis = axis;
  n.aux = std::move(aux);
  out.data = n.value;
  out.node = tape->append(std::move(n));
  out.tape_id = tape->id();
  return out;
}

void require_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail(op, a.shape, b.shape);
}

std::vector<double> softmax_values(const Tensor& a, int axis, std::size_t& r, std::size_t& c) {
  // 1-D input behaves as a single row.
  if (a.rank() == 1 || a.rank() == 0) {
    r = 1;
    c = a.size();
  } else if (a.rank() == 2) {
    r = a.shape[0];
    c = a.shape[1];
  } else {
    shape_fail(Op::softmax, a.shape);
  }
  if (c == 0 || r == 0) shape_fail(Op::softmax, a.shape);
  std::vector<double> out(a.data.size());
  auto one = [&](std::size_t n, auto get, auto put) {
    double mx = get(0);
    for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, get(k));
    double z = 0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(get(k) - mx);
    for (std::size_t k = 0; k < n; ++k) put(k, std::exp(get(k) - mx) / z);
  };
  if (a.rank() <= 1 || axis == 1) {
    for (std::size_t i = 0; i < r; ++i)
      one(c, [&](std::size_t k) { return a.data[i * c + k]; },
          [&](std::size_t k, double v) { out[i * c + k] = v; });
  } else if (axis == 0) {
    for (std::size_t j = 0; j < c; ++j)
      one(r, [&](std::size_t k) { return a.data[k * c + j]; },
          [&](std::size_t k, double v) { out[k * c + j] = v; });
  } else {
    throw std::invalid_argument("softmax: axis must be 0 or 1");
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    shape_fail(Op::matmul, a.shape, b.shape);
  std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = a.data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.data[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return finish(Op::matmul, {m, n}, std::move(out), {&a, &b});
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(Op::add, a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] + b.data[i];
  return finish(Op::add, a.shape, std::move(out), {&a, &b});
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(Op::sub, a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] - b.data[i];
  return finish(Op::sub, a.shape, std::move(out), {&a, &b});
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(Op::mul, a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * b.data[i];
  return finish(Op::mul, a.shape, std::move(out), {&a, &b});
}

Tensor smul(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * c;
  return finish(Op::smul, a.shape, std::move(out), {&a}, c);
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] > 0 ? a.data[i] : 0.0;
  return finish(Op::relu, a.shape, std::move(out), {&a});
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data[i]);
  return finish(Op::tanh, a.shape, std::move(out), {&a});
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data[i]);
  return finish(Op::exp, a.shape, std::move(out), {&a});
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data[i] <= 0.0)
      throw std::invalid_argument("log: non-positive entry " + std::to_string(a.data[i]));
    out[i] = std::log(a.data[i]);
  }
  return finish(Op::log, a.shape, std::move(out), {&a});
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data[i] < 0.0)
      throw std::invalid_argument("sqrt: negative entry " + std::to_string(a.data[i]));
    out[i] = std::sqrt(a.data[i]);
  }
  return finish(Op::sqrt, a.shape, std::move(out), {&a});
}

Tensor sqrt_clamped(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data[i] > 0.0 ? std::sqrt(a.data[i]) : 0.0;
  return finish(Op::sqrt_clamped, a.shape, std::move(out), {&a});
}

Tensor rsqrt_safe(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data[i] < 0.0)
      throw std::invalid_argument("rsqrt_safe: negative entry " + std::to_string(a.data[i]));
    out[i] = a.data[i] > 0.0 ? 1.0 / std::sqrt(a.data[i]) : 0.0;
  }
  return finish(Op::rsqrt_safe, a.shape, std::move(out), {&a});
}

Tensor abs(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.data[i]);
  return finish(Op::abs, a.shape, std::move(out), {&a});
}

Tensor clamp_min(const Tensor& a, double lo) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data[i], lo);
  return finish(Op::clamp_min, a.shape, std::move(out), {&a}, lo);
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data) s += v;
  return finish(Op::sum, {}, {s}, {&a});
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0;
  for (double v : a.data) s += v;
  return finish(Op::mean, {}, {s / static_cast<double>(a.size())}, {&a});
}

Tensor softmax(const Tensor& a, int axis) {
  std::size_t r, c;
  std::vector<double> out = softmax_values(a, axis, r, c);
  return finish(Op::softmax, a.shape, std::move(out), {&a}, 0.0, axis);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != 2 || b.rank() != 2) shape_fail(Op::concat, a.shape, b.shape);
  std::size_t ar = a.shape[0], ac = a.shape[1], br = b.shape[0], bc = b.shape[1];
  std::vector<double> out;
  Shape shape;
  if (axis == 0) {
    if (ac != bc) shape_fail(Op::concat, a.shape, b.shape);
    shape = {ar + br, ac};
    out = a.data;
    out.insert(out.end(), b.data.begin(), b.data.end());
  } else if (axis == 1) {
    if (ar != br) shape_fail(Op::concat, a.shape, b.shape);
    shape = {ar, ac + bc};
    out.resize(ar * (ac + bc));
    for (std::size_t i = 0; i < ar; ++i) {
      std::copy_n(&a.data[i * ac], ac, &out[i * (ac + bc)]);
      std::copy_n(&b.data[i * bc], bc, &out[i * (ac + bc) + ac]);
    }
  } else {
    throw std::invalid_argument("concat: axis must be 0 or 1");
  }
  return finish(Op::concat, std::move(shape), std::move(out), {&a, &b}, 0.0, axis);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) shape_fail(Op::transpose, a.shape);
  std::size_t r = a.shape[0], c = a.shape[1];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data[i * c + j];
  return finish(Op::transpose, {c, r}, std::move(out), {&a});
}

Tensor trace(const Tensor& a) {
  if (a.rank() != 2 || a.shape[0] != a.shape[1]) shape_fail(Op::trace, a.shape);
  std::size_t n = a.shape[0];
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a.data[i * n + i];
  return finish(Op::trace, {}, {s}, {&a});
}

Tensor row_broadcast(const Tensor& m, const Tensor& row) {
  if (m.rank() != 2) shape_fail(Op::row_broadcast, m.shape, row.shape);
  std::size_t r = m.shape[0], c = m.shape[1];
  std::size_t rc = row.rank() == 1 ? row.shape[0]
               : (row.rank() == 2 && row.shape[0] == 1) ? row.shape[1]
                                                        : 0;
  if (rc != c) shape_fail(Op::row_broadcast, m.shape, row.shape);
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data[i * c + j] + row.data[j];
  return finish(Op::row_broadcast, m.shape, std::move(out), {&m, &row});
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& g) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  double keep = 1.0 - rate;
  std::vector<double> mask(a.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng::uniform01(g) < rate ? 0.0 : 1.0 / keep;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * mask[i];
  return finish(Op::dropout, a.shape, std::move(out), {&a}, rate, 0, std::move(mask));
}

Tensor forward(std::string_view tag, std::span<const Tensor> inputs, const ForwardOpts& opts) {
  auto unary = [&](auto fn) {
    if (inputs.size() != 1)
      throw std::invalid_argument(std::string(tag) + ": expects 1 input");
    return fn(inputs[0]);
  };
  auto binary = [&](auto fn) {
    if (inputs.size() != 2)
      throw std::invalid_argument(std::string(tag) + ": expects 2 inputs");
    return fn(inputs[0], inputs[1]);
  };
  if (tag == "matmul") return binary([](auto& a, auto& b) { return matmul(a, b); });
  if (tag == "add") return binary([](auto& a, auto& b) { return add(a, b); });
  if (tag == "sub") return binary([](auto& a, auto& b) { return sub(a, b); });
  if (tag == "mul" || tag == "elementwise-mul")
    return binary([](auto& a, auto& b) { return mul(a, b); });
  if (tag == "smul" || tag == "scalar-mul")
    return unary([&](auto& a) { return smul(a, opts.scalar); });
  if (tag == "relu") return unary([](auto& a) { return relu(a); });
  if (tag == "tanh") return unary([](auto& a) { return tanh(a); });
  if (tag == "exp") return unary([](auto& a) { return exp(a); });
  if (tag == "log") return unary([](auto& a) { return log(a); });
  if (tag == "sqrt") return unary([](auto& a) { return sqrt(a); });
  if (tag == "sqrt_clamped") return unary([](auto& a) { return sqrt_clamped(a); });
  if (tag == "rsqrt_safe") return unary([](auto& a) { return rsqrt_safe(a); });
  if (tag == "abs") return unary([](auto& a) { return abs(a); });
  if (tag == "clamp_min") return unary([&](auto& a) { return clamp_min(a, opts.scalar); });
  if (tag == "sum") return unary([](auto& a) { return sum(a); });
  if (tag == "mean") return unary([](auto& a) { return mean(a); });
  if (tag == "softmax") return unary([&](auto& a) { return softmax(a, opts.axis); });
  if (tag == "concat") return binary([&](auto& a, auto& b) { return concat(a, b, opts.axis); });
  if (tag == "transpose") return unary([](auto& a) { return transpose(a); });
  if (tag == "trace") return unary([](auto& a) { return trace(a); });
  if (tag == "row_broadcast" || tag == "row-broadcast")
    return binary([](auto& a, auto& b) { return row_broadcast(a, b); });
  throw std::invalid_argument("forward: unsupported operation tag '" + std::string(tag) + "'");
}

GradMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::invalid_argument("backward: record already consumed");
  if (loss.size() != 1 || loss.rank() != 0)
    throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(loss.shape));
  if (loss.node < 0 || loss.tape_id != id_)
    throw std::invalid_argument("backward: loss was not recorded on this tape");

  std::vector<std::vector<double>> adj(nodes_.size());
  adj[static_cast<std::size_t>(loss.node)] = {1.0};

  auto acc = [&](const NodeInput& in, std::size_t size, auto fill) {
    if (in.id < 0) return;  // constant input
    auto& a = adj[static_cast<std::size_t>(in.id)];
    if (a.empty()) a.assign(size, 0.0);
    fill(a);
  };

  for (int idx = loss.node; idx >= 0; --idx) {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    const auto& g = adj[static_cast<std::size_t>(idx)];
    if (g.empty() || n.op == Op::leaf) continue;
    InputView a{}, b{};
    if (n.arity >= 1) a = view(*this, n.in[0]);
    if (n.arity >= 2) b = view(*this, n.in[1]);

    switch (n.op) {
      case Op::matmul: {
        std::size_t m = (*a.shape)[0], k = (*a.shape)[1], c = (*b.shape)[1];
        acc(n.in[0], m * k, [&](std::vector<double>& da) {
          // dA = G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0;
              for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * (*b.value)[p * c + j];
              da[i * k + p] += s;
            }
        });
        acc(n.in[1], k * c, [&](std::vector<double>& db) {
          // dB = A^T * G
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < c; ++j) {
              double s = 0;
              for (std::size_t i = 0; i < m; ++i) s += (*a.value)[i * k + p] * g[i * c + j];
              db[p * c + j] += s;
            }
        });
        break;
      }
      case Op::add:
        acc(n.in[0], g.size(), [&](auto& d) { for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; });
        acc(n.in[1], g.size(), [&](auto& d) { for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; });
        break;
      case Op::sub:
        acc(n.in[0], g.size(), [&](auto& d) { for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; });
        acc(n.in[1], g.size(), [&](auto& d) { for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i]; });
        break;
      case Op::mul:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*b.value)[i];
        });
        acc(n.in[1], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*a.value)[i];
        });
        break;
      case Op::smul:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.scalar;
        });
        break;
      case Op::relu:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if ((*a.value)[i] > 0) d[i] += g[i];
        });
        break;
      case Op::tanh:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        });
        break;
      case Op::exp:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.value[i];
        });
        break;
      case Op::log:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / (*a.value)[i];
        });
        break;
      case Op::sqrt:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * 0.5 / n.value[i];
        });
        break;
      case Op::sqrt_clamped:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if ((*a.value)[i] > 0.0) d[i] += g[i] * 0.5 / n.value[i];
        });
        break;
      case Op::rsqrt_safe:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if ((*a.value)[i] > 0.0)
              d[i] += g[i] * (-0.5) * n.value[i] * n.value[i] * n.value[i];
        });
        break;
      case Op::abs:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            double x = (*a.value)[i];
            if (x > 0) d[i] += g[i];
            else if (x < 0) d[i] -= g[i];
          }
        });
        break;
      case Op::clamp_min:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if ((*a.value)[i] > n.scalar) d[i] += g[i];
        });
        break;
      case Op::sum:
        acc(n.in[0], a.value->size(), [&](auto& d) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
        });
        break;
      case Op::mean: {
        double inv = 1.0 / static_cast<double>(a.value->size());
        acc(n.in[0], a.value->size(), [&](auto& d) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * inv;
        });
        break;
      }
      case Op::softmax: {
        std::size_t r = 1, c = n.value.size();
        if (n.shape.size() == 2) { r = n.shape[0]; c = n.shape[1]; }
        bool rows = n.shape.size() <= 1 || n.axis == 1;
        acc(n.in[0], n.value.size(), [&](auto& d) {
          if (rows) {
            for (std::size_t i = 0; i < r; ++i) {
              double dot = 0;
              for (std::size_t k = 0; k < c; ++k) dot += g[i * c + k] * n.value[i * c + k];
              for (std::size_t k = 0; k < c; ++k)
                d[i * c + k] += n.value[i * c + k] * (g[i * c + k] - dot);
            }
          } else {
            for (std::size_t j = 0; j < c; ++j) {
              double dot = 0;
              for (std::size_t k = 0; k < r; ++k) dot += g[k * c + j] * n.value[k * c + j];
              for (std::size_t k = 0; k < r; ++k)
                d[k * c + j] += n.value[k * c + j] * (g[k * c + j] - dot);
            }
          }
        });
        break;
      }
      case Op::concat: {
        std::size_t ar = (*a.shape)[0], ac = (*a.shape)[1];
        std::size_t bc = (*b.shape)[1];
        if (n.axis == 0) {
          acc(n.in[0], a.value->size(), [&](auto& d) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
          });
          acc(n.in[1], b.value->size(), [&](auto& d) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[a.value->size() + i];
          });
        } else {
          acc(n.in[0], a.value->size(), [&](auto& d) {
            for (std::size_t i = 0; i < ar; ++i)
              for (std::size_t j = 0; j < ac; ++j) d[i * ac + j] += g[i * (ac + bc) + j];
          });
          acc(n.in[1], b.value->size(), [&](auto& d) {
            for (std::size_t i = 0; i < ar; ++i)
              for (std::size_t j = 0; j < bc; ++j) d[i * bc + j] += g[i * (ac + bc) + ac + j];
          });
        }
        break;
      }
      case Op::transpose: {
        std::size_t r = (*a.shape)[0], c = (*a.shape)[1];
        acc(n.in[0], r * c, [&](auto& d) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j * r + i];
        });
        break;
      }
      case Op::trace: {
        std::size_t m = (*a.shape)[0];
        acc(n.in[0], m * m, [&](auto& d) {
          for (std::size_t i = 0; i < m; ++i) d[i * m + i] += g[0];
        });
        break;
      }
      case Op::row_broadcast: {
        std::size_t r = (*a.shape)[0], c = (*a.shape)[1];
        acc(n.in[0], r * c, [&](auto& d) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        });
        acc(n.in[1], c, [&](auto& d) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[j] += g[i * c + j];
        });
        break;
      }
      case Op::dropout:
        acc(n.in[0], g.size(), [&](auto& d) {
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.aux[i];
        });
        break;
      case Op::leaf:
        break;
    }
  }

  GradMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op != Op::leaf) continue;
    auto& a = adj[i];
    if (a.empty()) a.assign(nodes_[i].value.size(), 0.0);
    grads.emplace(static_cast<int>(i), std::move(a));
  }
  consumed_ = true;
  nodes_.clear();
  return grads;
}

void attach_grad(const GradMap& grads, Tensor& t) {
  auto it = grads.find(t.node);
  if (it == grads.end())
    throw std::invalid_argument("attach_grad: tensor is not a registered leaf");
  t.grad = it->second;
}

}  // namespace ad

namespace rng {

double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

double normal(std::mt19937_64& g) {
  // Box-Muller, one value per two draws; avoids the implementation-defined
  // std::normal_distribution so streams are identical across toolchains.
  double u1 = 1.0 - uniform01(g);
  double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::size_t index(std::mt19937_64& g, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rng::index: empty range");
  auto i = static_cast<std::size_t>(uniform01(g) * static_cast<double>(n));
  return i < n ? i : n - 1;
}

std::vector<double> normal_vec(std::mt19937_64& g, std::size_t count) {
  std::vector<double> out(count);
  for (auto& v : out) v = normal(g);
  return out;
}

}  // namespace rng

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::string_view block_name) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: " + std::string(block_name) + ": " +
                                std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " grads");
  const AdamConfig& c = state.cfg;
  if (!(c.beta1 >= 0 && c.beta1 < 1) || !(c.beta2 >= 0 && c.beta2 < 1) || c.epsilon <= 0 ||
      c.learning_rate <= 0)
    throw std::invalid_argument("adam_step: invalid optimizer configuration");
  if (state.first_moment.empty()) state.first_moment.assign(params.size(), 0.0);
  if (state.second_moment.empty()) state.second_moment.assign(params.size(), 0.0);
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw std::invalid_argument("adam_step: moment size mismatch for " + std::string(block_name));
  for (double gv : grads)
    if (std::isnan(gv))
      throw numeric_error("adam_step: NaN gradient in block '" + std::string(block_name) + "'");

  state.step += 1;
  double b1t = std::pow(c.beta1, static_cast<double>(state.step));
  double b2t = std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i] * grads[i];
    double mhat = m / (1.0 - b1t);
    double vhat = v / (1.0 - b2t);
    params[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

}  // namespace fhalab
