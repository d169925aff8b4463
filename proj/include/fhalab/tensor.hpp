#ifndef FHALAB_TENSOR_HPP
#define FHALAB_TENSOR_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fhalab {

// Raised when training math goes non-finite; the CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense 64-bit tensor, row-major. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix (the highest rank the ops support).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;      // filled by attach_grad() after backward()
  std::int64_t tape_id = -1;     // tape the node id belongs to
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> v);
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v);
  static Tensor zeros(const Shape& s);
  static Tensor ones(const Shape& s);
  static Tensor identity(std::size_t n);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  double scalar_value() const;
  double at(std::size_t r, std::size_t c) const;
  double& at(std::size_t r, std::size_t c);
};

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  mul,         // elementwise
  smul,        // by a compile-time-constant scalar
  relu,
  tanh,
  exp,
  log,
  sqrt,
  sqrt_clamped,  // sqrt(max(x, 0)), subgradient 0 on the clamped branch
  rsqrt_safe,    // 1/sqrt(x) with 0 at x == 0 (and gradient 0 there)
  abs,
  clamp_min,
  sum,
  mean,
  softmax,
  concat,
  transpose,
  trace,
  row_broadcast,  // matrix + row vector, added to every row
  dropout,
};

const char* op_name(Op op);

struct NodeInput {
  int id = -1;                             // -1: captured constant
  std::shared_ptr<const Tensor> constant;  // set iff id == -1
};

struct Node {
  Op op = Op::leaf;
  Shape shape;
  std::vector<double> value;
  std::array<NodeInput, 2> in;
  int arity = 0;
  double scalar = 0.0;  // smul factor / clamp_min bound / dropout rate
  int axis = 0;
  std::vector<double> aux;  // dropout mask
};

using GradMap = std::unordered_map<int, std::vector<double>>;

/// Append-only record of one forward computation. Ops record onto the
/// innermost tape activated on the current thread; with no active tape (or a
/// consumed one) they evaluate eagerly. One tape per thread at a time;
/// distinct tapes on distinct threads share nothing.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current();

  /// Registers a trainable parameter; the returned tensor carries the node id.
  Tensor leaf(const Tensor& t);

  /// Reverse pass from a scalar loss. Returns a gradient per leaf node id
  /// (zeros for leaves the loss does not reach). Consumes the record.
  GradMap backward(const Tensor& loss);

  std::int64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  bool consumed() const { return consumed_; }
  int append(Node n);

 private:
  std::int64_t id_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor smul(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sqrt_clamped(const Tensor& a);
Tensor rsqrt_safe(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = 1);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor transpose(const Tensor& a);
Tensor trace(const Tensor& a);
Tensor row_broadcast(const Tensor& m, const Tensor& row);
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);

struct ForwardOpts {
  double scalar = 0.0;
  int axis = 1;
};

/// Tag-dispatched entry point; accepts both the canonical op names and the
/// spelled-out aliases "elementwise-mul", "scalar-mul", "row-broadcast".
Tensor forward(std::string_view tag, std::span<const Tensor> inputs,
               const ForwardOpts& opts = {});

/// Copies the gradient for a registered leaf into t.grad.
void attach_grad(const GradMap& grads, Tensor& t);

}  // namespace ad

namespace rng {

// Distribution helpers with fully pinned-down bit behavior (the standard
// library distributions are implementation-defined, which would break
// cross-build reproducibility of shipped metrics).
double uniform01(std::mt19937_64& g);
double normal(std::mt19937_64& g);
std::size_t index(std::mt19937_64& g, std::size_t n);
std::vector<double> normal_vec(std::mt19937_64& g, std::size_t count);

}  // namespace rng

/// Adam with bias correction. One state per parameter block.
struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::size_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// In-place update. Rejects NaN gradients with a diagnostic naming the block.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, std::string_view block_name = "params");

}  // namespace fhalab

#endif  // FHALAB_TENSOR_HPP
