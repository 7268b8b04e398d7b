#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace scnn::ad {

using Matrix = Eigen::MatrixXd;

class MatrixTape;

struct MatNode {
  MatrixTape* tape = nullptr;
  std::uint32_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Tape of dense matrix operations with a first-order reverse sweep.
//
// Input derivatives of a network are formed as ordinary nodes (tangent
// propagation, see nets::forward_tangent), so a single backward() over this
// tape differentiates quantities that already contain input gradients with
// respect to the parameters.
class MatrixTape {
 public:
  enum class Op : std::uint8_t {
    Leaf, MatMul, Add, Sub, Mul, Affine, AddBias, ScaleCols, Tanh, Square,
    TileCols, Rows, ConcatRows, Reshape, Transpose, ColSum, Sum, Bracket
  };

  MatrixTape() = default;
  MatrixTape(const MatrixTape&) = delete;
  MatrixTape& operator=(const MatrixTape&) = delete;

  MatNode constant(Matrix value);
  // Leaf whose adjoint is wanted from backward().
  MatNode parameter(Matrix value);

  MatNode matmul(MatNode a, MatNode b);
  MatNode add(MatNode a, MatNode b);
  MatNode sub(MatNode a, MatNode b);
  MatNode mul(MatNode a, MatNode b);
  // scale * a + offset, elementwise.
  MatNode affine(MatNode a, double scale, double offset);
  // x (m x n) plus the column vector b (m x 1) in every column.
  MatNode add_bias(MatNode x, MatNode b);
  // x (m x n) with column j multiplied by r(0, j); r is 1 x n.
  MatNode scale_cols(MatNode x, MatNode r);
  MatNode tanh(MatNode a);
  MatNode square(MatNode a);
  // [a a ... a], `times` copies side by side.
  MatNode tile_cols(MatNode a, Eigen::Index times);
  MatNode rows(MatNode a, Eigen::Index first, Eigen::Index count);
  MatNode concat_rows(std::span<const MatNode> parts);
  // Column-major reinterpretation.
  MatNode reshape(MatNode a, Eigen::Index rows, Eigen::Index cols);
  MatNode transpose(MatNode a);
  // 1 x n row of column sums.
  MatNode colsum(MatNode a);
  // 1 x 1 sum of all entries.
  MatNode sum(MatNode a);
  // Per-column canonical bracket of two gradient matrices. f and g are 2K x n
  // with rows (d/dq_1..d/dq_K, d/dp_1..d/dp_K); result is 1 x n with
  //   sum_l f[l] g[K+l] - f[K+l] g[l].
  MatNode bracket(MatNode f, MatNode g);

  // Reverse sweep from a 1 x 1 node. Returns one adjoint per requested leaf;
  // leaves that do not influence `out` get a zero matrix.
  std::vector<Matrix> backward(MatNode out, std::span<const MatNode> leaves);

  const Matrix& value(std::uint32_t id) const { return nodes_[id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    bool needs_grad;
    std::uint32_t a;
    std::uint32_t b;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    double s = 0.0;
    double c = 0.0;
    std::vector<std::uint32_t> parts{};
    Matrix value{};
  };

  static constexpr std::uint32_t kNone = 0xffffffffu;

  MatNode push(Node node);
  void check(MatNode x) const;
  bool grad_of(std::uint32_t id) const { return id != kNone && nodes_[id].needs_grad; }

  std::vector<Node> nodes_;
};

MatNode operator+(MatNode a, MatNode b);
MatNode operator-(MatNode a, MatNode b);

}  // namespace scnn::ad
