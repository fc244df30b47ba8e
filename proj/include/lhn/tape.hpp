#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "lhn/common.hpp"

namespace lhn::ad {

// Reverse-mode tape over flat-array nodes. Every node value is a row-major
// (rows x cols) block in one contiguous arena; adjoints live in a mirror
// arena with identical layout, so Slice nodes are pure views and their
// adjoints accumulate straight into the parent's block.
enum class Op : uint8_t {
  Const,
  Leaf,
  Add,       // elementwise, size-1 broadcast on either side
  Sub,
  Mul,
  Scale,     // c0 * a
  Axpb,      // c0 * a + b   (b same size, or size-1)
  MatMul,    // A(r x k) * B(k x c), row-major blocks
  AddCol,    // M(r x c) + v(r x 1) broadcast across columns
  Tanh,
  Softplus,
  Exp,
  Log,
  Square,
  Max,       // elementwise max(a, b), same size
  Sum,       // all elements -> 1x1
  Slice,     // contiguous view into a
  Concat,    // [a; b] flat
  Merge,     // out[det_idx] = a, out[sto_idx] = b
};

const char* op_name(Op op);

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

struct Node {
  Op op;
  int32_t a = -1, b = -1;
  int32_t rows = 0, cols = 0;
  int64_t off = 0;
  double c0 = 0.0;
  int32_t aux = 0;
};

class Tape {
 public:
  using ConstMap = Eigen::Map<const Eigen::ArrayXd>;
  using MutMap = Eigen::Map<Eigen::ArrayXd>;

  Var leaf(const double* p, int rows, int cols = 1);
  Var leaf(const Eigen::VectorXd& v) { return leaf(v.data(), int(v.size()), 1); }
  Var constant(const double* p, int rows, int cols = 1);
  Var constant(const Eigen::VectorXd& v) { return constant(v.data(), int(v.size()), 1); }
  Var constant(double x) { return constant(&x, 1, 1); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var axpb(Var a, double c, Var b);  // c*a + b
  Var matmul(Var a, Var b);
  Var add_col(Var a, Var b);
  Var tanh(Var a);
  Var softplus(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var max(Var a, Var b);
  Var sum(Var a);
  Var slice(Var a, int64_t offset, int rows, int cols = 1);
  Var concat(Var a, Var b);
  Var merge(Var a_det, Var b_sto, int32_t partition_id);

  // partitions used by Merge; index vectors are copied in
  int32_t register_partition(std::vector<int32_t> det_idx, std::vector<int32_t> sto_idx);

  void backward(Var root);

  ConstMap val(Var v) const {
    const Node& n = nodes_[v.id];
    return ConstMap(vals_.data() + n.off, int64_t(n.rows) * n.cols);
  }
  double scalar(Var v) const { return vals_[nodes_[v.id].off]; }
  ConstMap adjoint(Var v) const {
    const Node& n = nodes_[v.id];
    return ConstMap(adj_.data() + n.off, int64_t(n.rows) * n.cols);
  }
  Eigen::VectorXd val_vec(Var v) const { return val(v).matrix(); }
  Eigen::VectorXd adjoint_vec(Var v) const { return adjoint(v).matrix(); }

  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  int64_t numel(Var v) const { return int64_t(nodes_[v.id].rows) * nodes_[v.id].cols; }

  size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  Var emit(Node n);
  int64_t alloc(int64_t n);
  void check_finite(int32_t id);

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> adj_;
  std::vector<std::pair<std::vector<int32_t>, std::vector<int32_t>>> partitions_;
};

// Gradient of a scalar-valued computation with respect to x.
Eigen::VectorXd grad(const std::function<Var(Tape&, Var)>& f, const Eigen::VectorXd& x);

}  // namespace lhn::ad
