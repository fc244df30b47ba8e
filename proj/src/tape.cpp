#include "lhn/tape.hpp"

#include <cmath>
#include <string>

namespace lhn::ad {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMat = Eigen::Map<const RowMat>;
using MMat = Eigen::Map<RowMat>;
}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Axpb: return "axpb";
    case Op::MatMul: return "matmul";
    case Op::AddCol: return "add_col";
    case Op::Tanh: return "tanh";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Max: return "max";
    case Op::Sum: return "sum";
    case Op::Slice: return "slice";
    case Op::Concat: return "concat";
    case Op::Merge: return "merge";
  }
  return "?";
}

int64_t Tape::alloc(int64_t n) {
  int64_t off = int64_t(vals_.size());
  vals_.resize(vals_.size() + n);
  return off;
}

void Tape::check_finite(int32_t id) {
  const Node& n = nodes_[id];
  const double* p = vals_.data() + n.off;
  int64_t m = int64_t(n.rows) * n.cols;
  if (!ConstMap(p, m).allFinite()) {
    throw NumericalError("non-finite value at node " + std::to_string(id) + " (" +
                         op_name(n.op) + ")");
  }
}

Var Tape::leaf(const double* p, int rows, int cols) {
  Node n{Op::Leaf, -1, -1, rows, cols, 0, 0.0, 0};
  n.off = alloc(int64_t(rows) * cols);
  std::copy(p, p + int64_t(rows) * cols, vals_.begin() + n.off);
  nodes_.push_back(n);
  int32_t id = int32_t(nodes_.size()) - 1;
  check_finite(id);
  return Var{id};
}

Var Tape::constant(const double* p, int rows, int cols) {
  Var v = leaf(p, rows, cols);
  nodes_[v.id].op = Op::Const;
  return v;
}

int32_t Tape::register_partition(std::vector<int32_t> det_idx, std::vector<int32_t> sto_idx) {
  partitions_.emplace_back(std::move(det_idx), std::move(sto_idx));
  return int32_t(partitions_.size()) - 1;
}

Var Tape::emit(Node n) {
  nodes_.push_back(n);
  int32_t id = int32_t(nodes_.size()) - 1;
  Node& nd = nodes_[id];
  const int64_t m = int64_t(nd.rows) * nd.cols;

  if (nd.op == Op::Slice) {
    nd.off = nodes_[nd.a].off + nd.aux;
    return Var{id};  // view: nothing to compute, parent already checked
  }

  nd.off = alloc(m);
  double* out = vals_.data() + nd.off;
  const double* pa = nd.a >= 0 ? vals_.data() + nodes_[nd.a].off : nullptr;
  const double* pb = nd.b >= 0 ? vals_.data() + nodes_[nd.b].off : nullptr;
  const int64_t na = nd.a >= 0 ? int64_t(nodes_[nd.a].rows) * nodes_[nd.a].cols : 0;
  const int64_t nb = nd.b >= 0 ? int64_t(nodes_[nd.b].rows) * nodes_[nd.b].cols : 0;

  switch (nd.op) {
    case Op::Add:
      if (na == nb) MutMap(out, m) = ConstMap(pa, m) + ConstMap(pb, m);
      else if (nb == 1) MutMap(out, m) = ConstMap(pa, m) + pb[0];
      else MutMap(out, m) = pa[0] + ConstMap(pb, m);
      break;
    case Op::Sub:
      if (na == nb) MutMap(out, m) = ConstMap(pa, m) - ConstMap(pb, m);
      else if (nb == 1) MutMap(out, m) = ConstMap(pa, m) - pb[0];
      else MutMap(out, m) = pa[0] - ConstMap(pb, m);
      break;
    case Op::Mul:
      if (na == nb) MutMap(out, m) = ConstMap(pa, m) * ConstMap(pb, m);
      else if (nb == 1) MutMap(out, m) = ConstMap(pa, m) * pb[0];
      else MutMap(out, m) = pa[0] * ConstMap(pb, m);
      break;
    case Op::Scale:
      MutMap(out, m) = nd.c0 * ConstMap(pa, m);
      break;
    case Op::Axpb:
      if (na == nb) MutMap(out, m) = nd.c0 * ConstMap(pa, m) + ConstMap(pb, m);
      else MutMap(out, m) = nd.c0 * ConstMap(pa, m) + pb[0];
      break;
    case Op::MatMul: {
      const Node& A = nodes_[nd.a];
      const Node& B = nodes_[nd.b];
      MMat(out, nd.rows, nd.cols).noalias() =
          CMat(pa, A.rows, A.cols) * CMat(pb, B.rows, B.cols);
      break;
    }
    case Op::AddCol: {
      MMat o(out, nd.rows, nd.cols);
      o = CMat(pa, nd.rows, nd.cols);
      o.colwise() += Eigen::Map<const Eigen::VectorXd>(pb, nd.rows);
      break;
    }
    case Op::Tanh:
      MutMap(out, m) = ConstMap(pa, m).tanh();
      break;
    case Op::Softplus:
      // overflow-safe: max(x,0) + log1p(exp(-|x|))
      MutMap(out, m) =
          ConstMap(pa, m).max(0.0) + (-ConstMap(pa, m).abs()).exp().log1p();
      break;
    case Op::Exp:
      MutMap(out, m) = ConstMap(pa, m).exp();
      break;
    case Op::Log:
      MutMap(out, m) = ConstMap(pa, m).log();
      break;
    case Op::Square:
      MutMap(out, m) = ConstMap(pa, m).square();
      break;
    case Op::Max:
      MutMap(out, m) = ConstMap(pa, m).max(ConstMap(pb, m));
      break;
    case Op::Sum:
      out[0] = ConstMap(pa, na).sum();
      break;
    case Op::Concat:
      std::copy(pa, pa + na, out);
      std::copy(pb, pb + nb, out + na);
      break;
    case Op::Merge: {
      const auto& [det, sto] = partitions_[nd.aux];
      for (size_t i = 0; i < det.size(); ++i) out[det[i]] = pa[i];
      for (size_t i = 0; i < sto.size(); ++i) out[sto[i]] = pb[i];
      break;
    }
    default:
      throw NumericalError("emit: bad op");
  }
  check_finite(id);
  return Var{id};
}

namespace {
void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

Var Tape::add(Var a, Var b) {
  int64_t na = numel(a), nb = numel(b);
  require(na == nb || na == 1 || nb == 1, "add: size mismatch");
  const Node& s = na >= nb ? nodes_[a.id] : nodes_[b.id];
  return emit(Node{Op::Add, a.id, b.id, s.rows, s.cols, 0, 0.0, 0});
}

Var Tape::sub(Var a, Var b) {
  int64_t na = numel(a), nb = numel(b);
  require(na == nb || na == 1 || nb == 1, "sub: size mismatch");
  const Node& s = na >= nb ? nodes_[a.id] : nodes_[b.id];
  return emit(Node{Op::Sub, a.id, b.id, s.rows, s.cols, 0, 0.0, 0});
}

Var Tape::mul(Var a, Var b) {
  int64_t na = numel(a), nb = numel(b);
  require(na == nb || na == 1 || nb == 1, "mul: size mismatch");
  const Node& s = na >= nb ? nodes_[a.id] : nodes_[b.id];
  return emit(Node{Op::Mul, a.id, b.id, s.rows, s.cols, 0, 0.0, 0});
}

Var Tape::scale(Var a, double c) {
  return emit(Node{Op::Scale, a.id, -1, nodes_[a.id].rows, nodes_[a.id].cols, 0, c, 0});
}

Var Tape::axpb(Var a, double c, Var b) {
  require(numel(a) == numel(b) || numel(b) == 1, "axpb: size mismatch");
  return emit(Node{Op::Axpb, a.id, b.id, nodes_[a.id].rows, nodes_[a.id].cols, 0, c, 0});
}

Var Tape::matmul(Var a, Var b) {
  require(nodes_[a.id].cols == nodes_[b.id].rows, "matmul: inner dim mismatch");
  return emit(Node{Op::MatMul, a.id, b.id, nodes_[a.id].rows, nodes_[b.id].cols, 0, 0.0, 0});
}

Var Tape::add_col(Var a, Var b) {
  require(nodes_[b.id].rows == nodes_[a.id].rows && nodes_[b.id].cols == 1,
          "add_col: column size mismatch");
  return emit(Node{Op::AddCol, a.id, b.id, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}

Var Tape::tanh(Var a) {
  return emit(Node{Op::Tanh, a.id, -1, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}
Var Tape::softplus(Var a) {
  return emit(Node{Op::Softplus, a.id, -1, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}
Var Tape::exp(Var a) {
  return emit(Node{Op::Exp, a.id, -1, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}
Var Tape::log(Var a) {
  return emit(Node{Op::Log, a.id, -1, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}
Var Tape::square(Var a) {
  return emit(Node{Op::Square, a.id, -1, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}

Var Tape::max(Var a, Var b) {
  require(numel(a) == numel(b), "max: size mismatch");
  return emit(Node{Op::Max, a.id, b.id, nodes_[a.id].rows, nodes_[a.id].cols, 0, 0.0, 0});
}

Var Tape::sum(Var a) { return emit(Node{Op::Sum, a.id, -1, 1, 1, 0, 0.0, 0}); }

Var Tape::slice(Var a, int64_t offset, int rows, int cols) {
  require(offset >= 0 && offset + int64_t(rows) * cols <= numel(a), "slice: out of range");
  Node n{Op::Slice, a.id, -1, rows, cols, 0, 0.0, 0};
  n.aux = int32_t(offset);
  return emit(n);
}

Var Tape::concat(Var a, Var b) {
  return emit(Node{Op::Concat, a.id, b.id, int(numel(a) + numel(b)), 1, 0, 0.0, 0});
}

Var Tape::merge(Var a_det, Var b_sto, int32_t partition_id) {
  const auto& [det, sto] = partitions_[partition_id];
  require(int64_t(det.size()) == numel(a_det) && int64_t(sto.size()) == numel(b_sto),
          "merge: partition size mismatch");
  return emit(Node{Op::Merge, a_det.id, b_sto.id, int(det.size() + sto.size()), 1, 0, 0.0,
                   partition_id});
}

void Tape::backward(Var root) {
  require(root.valid() && numel(root) == 1, "backward: root must be scalar");
  adj_.assign(vals_.size(), 0.0);
  adj_[nodes_[root.id].off] = 1.0;

  for (int32_t i = root.id; i >= 0; --i) {
    const Node& nd = nodes_[i];
    if (nd.op == Op::Const || nd.op == Op::Leaf || nd.op == Op::Slice) continue;
    const int64_t m = int64_t(nd.rows) * nd.cols;
    const double* g = adj_.data() + nd.off;
    const double* v = vals_.data() + nd.off;
    double* ga = nd.a >= 0 ? adj_.data() + nodes_[nd.a].off : nullptr;
    double* gb = nd.b >= 0 ? adj_.data() + nodes_[nd.b].off : nullptr;
    const double* va = nd.a >= 0 ? vals_.data() + nodes_[nd.a].off : nullptr;
    const double* vb = nd.b >= 0 ? vals_.data() + nodes_[nd.b].off : nullptr;
    const int64_t na = nd.a >= 0 ? numel(Var{nd.a}) : 0;
    const int64_t nb = nd.b >= 0 ? numel(Var{nd.b}) : 0;

    switch (nd.op) {
      case Op::Add:
        if (na == m) MutMap(ga, m) += ConstMap(g, m); else ga[0] += ConstMap(g, m).sum();
        if (nb == m) MutMap(gb, m) += ConstMap(g, m); else gb[0] += ConstMap(g, m).sum();
        break;
      case Op::Sub:
        if (na == m) MutMap(ga, m) += ConstMap(g, m); else ga[0] += ConstMap(g, m).sum();
        if (nb == m) MutMap(gb, m) -= ConstMap(g, m); else gb[0] -= ConstMap(g, m).sum();
        break;
      case Op::Mul:
        if (na == nb) {
          MutMap(ga, m) += ConstMap(g, m) * ConstMap(vb, m);
          MutMap(gb, m) += ConstMap(g, m) * ConstMap(va, m);
        } else if (nb == 1) {
          MutMap(ga, m) += ConstMap(g, m) * vb[0];
          gb[0] += (ConstMap(g, m) * ConstMap(va, m)).sum();
        } else {
          ga[0] += (ConstMap(g, m) * ConstMap(vb, m)).sum();
          MutMap(gb, m) += ConstMap(g, m) * va[0];
        }
        break;
      case Op::Scale:
        MutMap(ga, m) += nd.c0 * ConstMap(g, m);
        break;
      case Op::Axpb:
        MutMap(ga, m) += nd.c0 * ConstMap(g, m);
        if (nb == m) MutMap(gb, m) += ConstMap(g, m); else gb[0] += ConstMap(g, m).sum();
        break;
      case Op::MatMul: {
        const Node& A = nodes_[nd.a];
        const Node& B = nodes_[nd.b];
        MMat(ga, A.rows, A.cols).noalias() +=
            CMat(g, nd.rows, nd.cols) * CMat(vb, B.rows, B.cols).transpose();
        MMat(gb, B.rows, B.cols).noalias() +=
            CMat(va, A.rows, A.cols).transpose() * CMat(g, nd.rows, nd.cols);
        break;
      }
      case Op::AddCol:
        MutMap(ga, m) += ConstMap(g, m);
        Eigen::Map<Eigen::VectorXd>(gb, nd.rows) +=
            CMat(g, nd.rows, nd.cols).rowwise().sum();
        break;
      case Op::Tanh:
        MutMap(ga, m) += ConstMap(g, m) * (1.0 - ConstMap(v, m).square());
        break;
      case Op::Softplus:
        MutMap(ga, m) += ConstMap(g, m) * 0.5 * (1.0 + (0.5 * ConstMap(va, m)).tanh());
        break;
      case Op::Exp:
        MutMap(ga, m) += ConstMap(g, m) * ConstMap(v, m);
        break;
      case Op::Log:
        MutMap(ga, m) += ConstMap(g, m) / ConstMap(va, m);
        break;
      case Op::Square:
        MutMap(ga, m) += 2.0 * ConstMap(g, m) * ConstMap(va, m);
        break;
      case Op::Max:
        MutMap(ga, m) +=
            ConstMap(g, m) * (ConstMap(va, m) >= ConstMap(vb, m)).cast<double>();
        MutMap(gb, m) +=
            ConstMap(g, m) * (ConstMap(va, m) < ConstMap(vb, m)).cast<double>();
        break;
      case Op::Sum:
        MutMap(ga, na) += g[0];
        break;
      case Op::Concat:
        MutMap(ga, na) += ConstMap(g, na);
        MutMap(gb, nb) += ConstMap(g + na, nb);
        break;
      case Op::Merge: {
        const auto& [det, sto] = partitions_[nd.aux];
        for (size_t k = 0; k < det.size(); ++k) ga[k] += g[det[k]];
        for (size_t k = 0; k < sto.size(); ++k) gb[k] += g[sto[k]];
        break;
      }
      default:
        break;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  vals_.clear();
  adj_.clear();
  partitions_.clear();
}

Eigen::VectorXd grad(const std::function<Var(Tape&, Var)>& f, const Eigen::VectorXd& x) {
  Tape tape;
  Var xv = tape.leaf(x);
  Var y = f(tape, xv);
  if (tape.numel(y) != 1) throw std::invalid_argument("grad: f must be scalar-valued");
  tape.backward(y);
  return tape.adjoint_vec(xv);
}

}  // namespace lhn::ad
