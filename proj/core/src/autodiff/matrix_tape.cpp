#include "scnn/autodiff/matrix_tape.hpp"

#include <string>

#include "scnn/error.hpp"

namespace scnn::ad {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw StructuralError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

void add_into(Matrix& acc, const Matrix& contrib) {
  if (acc.size() == 0) {
    acc = contrib;
  } else {
    acc += contrib;
  }
}

}  // namespace

const Matrix& MatNode::value() const { return tape->value(id); }

MatNode operator+(MatNode a, MatNode b) { return a.tape->add(a, b); }
MatNode operator-(MatNode a, MatNode b) { return a.tape->sub(a, b); }

MatNode MatrixTape::push(Node node) {
  nodes_.push_back(std::move(node));
  return MatNode{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void MatrixTape::check(MatNode x) const {
  if (x.tape != this || x.id >= nodes_.size()) {
    throw StructuralError("matrix node does not belong to this tape");
  }
}

MatNode MatrixTape::constant(Matrix value) {
  Node n{Op::Leaf, false, kNone, kNone};
  n.value = std::move(value);
  return push(std::move(n));
}

MatNode MatrixTape::parameter(Matrix value) {
  Node n{Op::Leaf, true, kNone, kNone};
  n.value = std::move(value);
  return push(std::move(n));
}

MatNode MatrixTape::matmul(MatNode a, MatNode b) {
  check(a);
  check(b);
  const Matrix& x = nodes_[a.id].value;
  const Matrix& y = nodes_[b.id].value;
  if (x.cols() != y.rows()) {
    throw StructuralError("matmul: inner dimensions differ " + shape(x) + " * " + shape(y));
  }
  Node n{Op::MatMul, grad_of(a.id) || grad_of(b.id), a.id, b.id};
  n.value.noalias() = x * y;
  return push(std::move(n));
}

MatNode MatrixTape::add(MatNode a, MatNode b) {
  check(a);
  check(b);
  require_same_shape("add", nodes_[a.id].value, nodes_[b.id].value);
  Node n{Op::Add, grad_of(a.id) || grad_of(b.id), a.id, b.id};
  n.value = nodes_[a.id].value + nodes_[b.id].value;
  return push(std::move(n));
}

MatNode MatrixTape::sub(MatNode a, MatNode b) {
  check(a);
  check(b);
  require_same_shape("sub", nodes_[a.id].value, nodes_[b.id].value);
  Node n{Op::Sub, grad_of(a.id) || grad_of(b.id), a.id, b.id};
  n.value = nodes_[a.id].value - nodes_[b.id].value;
  return push(std::move(n));
}

MatNode MatrixTape::mul(MatNode a, MatNode b) {
  check(a);
  check(b);
  require_same_shape("mul", nodes_[a.id].value, nodes_[b.id].value);
  Node n{Op::Mul, grad_of(a.id) || grad_of(b.id), a.id, b.id};
  n.value = nodes_[a.id].value.cwiseProduct(nodes_[b.id].value);
  return push(std::move(n));
}

MatNode MatrixTape::affine(MatNode a, double scale, double offset) {
  check(a);
  Node n{Op::Affine, grad_of(a.id), a.id, kNone};
  n.s = scale;
  n.c = offset;
  n.value = (scale * nodes_[a.id].value).array() + offset;
  return push(std::move(n));
}

MatNode MatrixTape::add_bias(MatNode x, MatNode b) {
  check(x);
  check(b);
  const Matrix& m = nodes_[x.id].value;
  const Matrix& v = nodes_[b.id].value;
  if (v.cols() != 1 || v.rows() != m.rows()) {
    throw StructuralError("add_bias: bias " + shape(v) + " does not fit " + shape(m));
  }
  Node n{Op::AddBias, grad_of(x.id) || grad_of(b.id), x.id, b.id};
  n.value = m.colwise() + v.col(0);
  return push(std::move(n));
}

MatNode MatrixTape::scale_cols(MatNode x, MatNode r) {
  check(x);
  check(r);
  const Matrix& m = nodes_[x.id].value;
  const Matrix& w = nodes_[r.id].value;
  if (w.rows() != 1 || w.cols() != m.cols()) {
    throw StructuralError("scale_cols: factor " + shape(w) + " does not fit " + shape(m));
  }
  Node n{Op::ScaleCols, grad_of(x.id) || grad_of(r.id), x.id, r.id};
  n.value = m * w.row(0).asDiagonal();
  return push(std::move(n));
}

MatNode MatrixTape::tanh(MatNode a) {
  check(a);
  Node n{Op::Tanh, grad_of(a.id), a.id, kNone};
  n.value = nodes_[a.id].value.array().tanh();
  return push(std::move(n));
}

MatNode MatrixTape::square(MatNode a) {
  check(a);
  Node n{Op::Square, grad_of(a.id), a.id, kNone};
  n.value = nodes_[a.id].value.array().square();
  return push(std::move(n));
}

MatNode MatrixTape::tile_cols(MatNode a, Eigen::Index times) {
  check(a);
  if (times < 1) throw StructuralError("tile_cols: times must be positive");
  Node n{Op::TileCols, grad_of(a.id), a.id, kNone};
  n.i0 = times;
  n.value = nodes_[a.id].value.replicate(1, times);
  return push(std::move(n));
}

MatNode MatrixTape::rows(MatNode a, Eigen::Index first, Eigen::Index count) {
  check(a);
  const Matrix& m = nodes_[a.id].value;
  if (first < 0 || count < 0 || first + count > m.rows()) {
    throw StructuralError("rows: range [" + std::to_string(first) + ", " +
                          std::to_string(first + count) + ") outside " + shape(m));
  }
  Node n{Op::Rows, grad_of(a.id), a.id, kNone};
  n.i0 = first;
  n.i1 = count;
  n.value = m.middleRows(first, count);
  return push(std::move(n));
}

MatNode MatrixTape::concat_rows(std::span<const MatNode> parts) {
  if (parts.empty()) throw StructuralError("concat_rows: no parts");
  Eigen::Index total = 0;
  const Eigen::Index cols = parts.front().cols();
  bool needs = false;
  Node n{Op::ConcatRows, false, kNone, kNone};
  for (const auto& p : parts) {
    check(p);
    if (nodes_[p.id].value.cols() != cols) {
      throw StructuralError("concat_rows: column count mismatch");
    }
    total += nodes_[p.id].value.rows();
    needs = needs || grad_of(p.id);
    n.parts.push_back(p.id);
  }
  n.needs_grad = needs;
  n.value.resize(total, cols);
  Eigen::Index row = 0;
  for (const auto& p : parts) {
    const Matrix& m = nodes_[p.id].value;
    n.value.middleRows(row, m.rows()) = m;
    row += m.rows();
  }
  return push(std::move(n));
}

MatNode MatrixTape::reshape(MatNode a, Eigen::Index rows, Eigen::Index cols) {
  check(a);
  const Matrix& m = nodes_[a.id].value;
  if (rows * cols != m.size()) {
    throw StructuralError("reshape: " + shape(m) + " cannot become " + std::to_string(rows) +
                          "x" + std::to_string(cols));
  }
  Node n{Op::Reshape, grad_of(a.id), a.id, kNone};
  n.value = m.reshaped(rows, cols);
  return push(std::move(n));
}

MatNode MatrixTape::transpose(MatNode a) {
  check(a);
  Node n{Op::Transpose, grad_of(a.id), a.id, kNone};
  n.value = nodes_[a.id].value.transpose();
  return push(std::move(n));
}

MatNode MatrixTape::colsum(MatNode a) {
  check(a);
  Node n{Op::ColSum, grad_of(a.id), a.id, kNone};
  n.value = nodes_[a.id].value.colwise().sum();
  return push(std::move(n));
}

MatNode MatrixTape::sum(MatNode a) {
  check(a);
  Node n{Op::Sum, grad_of(a.id), a.id, kNone};
  n.value = Matrix::Constant(1, 1, nodes_[a.id].value.sum());
  return push(std::move(n));
}

MatNode MatrixTape::bracket(MatNode f, MatNode g) {
  check(f);
  check(g);
  const Matrix& x = nodes_[f.id].value;
  const Matrix& y = nodes_[g.id].value;
  require_same_shape("bracket", x, y);
  if (x.rows() % 2 != 0) throw StructuralError("bracket: odd phase-space dimension");
  const Eigen::Index k = x.rows() / 2;
  Node n{Op::Bracket, grad_of(f.id) || grad_of(g.id), f.id, g.id};
  n.value = (x.topRows(k).cwiseProduct(y.bottomRows(k)) -
             x.bottomRows(k).cwiseProduct(y.topRows(k)))
                .colwise()
                .sum();
  return push(std::move(n));
}

std::vector<Matrix> MatrixTape::backward(MatNode out, std::span<const MatNode> leaves) {
  check(out);
  if (nodes_[out.id].value.size() != 1) {
    throw StructuralError("backward: output must be 1x1, got " + shape(nodes_[out.id].value));
  }
  std::vector<Matrix> adj(out.id + 1);
  adj[out.id] = Matrix::Ones(1, 1);

  for (std::uint32_t i = out.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || adj[i].size() == 0 || n.op == Op::Leaf) continue;
    const Matrix& g = adj[i];
    const bool ga = grad_of(n.a);
    const bool gb = grad_of(n.b);
    switch (n.op) {
      case Op::MatMul:
        if (ga) add_into(adj[n.a], g * nodes_[n.b].value.transpose());
        if (gb) add_into(adj[n.b], nodes_[n.a].value.transpose() * g);
        break;
      case Op::Add:
        if (ga) add_into(adj[n.a], g);
        if (gb) add_into(adj[n.b], g);
        break;
      case Op::Sub:
        if (ga) add_into(adj[n.a], g);
        if (gb) add_into(adj[n.b], -g);
        break;
      case Op::Mul:
        if (ga) add_into(adj[n.a], g.cwiseProduct(nodes_[n.b].value));
        if (gb) add_into(adj[n.b], g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::Affine:
        if (ga) add_into(adj[n.a], n.s * g);
        break;
      case Op::AddBias:
        if (ga) add_into(adj[n.a], g);
        if (gb) add_into(adj[n.b], g.rowwise().sum());
        break;
      case Op::ScaleCols:
        if (ga) add_into(adj[n.a], g * nodes_[n.b].value.row(0).asDiagonal());
        if (gb) add_into(adj[n.b], g.cwiseProduct(nodes_[n.a].value).colwise().sum());
        break;
      case Op::Tanh:
        if (ga) add_into(adj[n.a], g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
        break;
      case Op::Square:
        if (ga) add_into(adj[n.a], 2.0 * g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::TileCols:
        if (ga) {
          const Eigen::Index w = nodes_[n.a].value.cols();
          Matrix acc = g.leftCols(w);
          for (Eigen::Index t = 1; t < n.i0; ++t) acc += g.middleCols(t * w, w);
          add_into(adj[n.a], acc);
        }
        break;
      case Op::Rows:
        if (ga) {
          Matrix& target = adj[n.a];
          if (target.size() == 0) target = Matrix::Zero(nodes_[n.a].value.rows(), g.cols());
          target.middleRows(n.i0, n.i1) += g;
        }
        break;
      case Op::ConcatRows: {
        Eigen::Index row = 0;
        for (const auto p : n.parts) {
          const Eigen::Index r = nodes_[p].value.rows();
          if (grad_of(p)) add_into(adj[p], g.middleRows(row, r));
          row += r;
        }
        break;
      }
      case Op::Reshape:
        if (ga) {
          const Matrix& src = nodes_[n.a].value;
          add_into(adj[n.a], g.reshaped(src.rows(), src.cols()));
        }
        break;
      case Op::Transpose:
        if (ga) add_into(adj[n.a], g.transpose());
        break;
      case Op::ColSum:
        if (ga) add_into(adj[n.a], Matrix::Ones(nodes_[n.a].value.rows(), 1) * g);
        break;
      case Op::Sum:
        if (ga) {
          const Matrix& src = nodes_[n.a].value;
          add_into(adj[n.a], Matrix::Constant(src.rows(), src.cols(), g(0, 0)));
        }
        break;
      case Op::Bracket: {
        const Matrix& f = nodes_[n.a].value;
        const Matrix& h = nodes_[n.b].value;
        const Eigen::Index k = f.rows() / 2;
        const auto gb_row = g.row(0).asDiagonal();
        if (ga) {
          Matrix d(f.rows(), f.cols());
          d.topRows(k) = h.bottomRows(k) * gb_row;
          d.bottomRows(k) = -(h.topRows(k) * gb_row);
          add_into(adj[n.a], d);
        }
        if (gb) {
          Matrix d(h.rows(), h.cols());
          d.topRows(k) = -(f.bottomRows(k) * gb_row);
          d.bottomRows(k) = f.topRows(k) * gb_row;
          add_into(adj[n.b], d);
        }
        break;
      }
      case Op::Leaf:
        break;
    }
    // Adjoints of interior nodes are no longer needed once propagated.
    adj[i].resize(0, 0);
  }

  std::vector<Matrix> result;
  result.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    check(leaf);
    if (leaf.id <= out.id && adj[leaf.id].size() != 0) {
      result.push_back(adj[leaf.id]);
    } else {
      result.push_back(Matrix::Zero(leaf.rows(), leaf.cols()));
    }
  }
  return result;
}

}  // namespace scnn::ad
