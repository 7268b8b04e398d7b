#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace scnn::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class DiffScalar {
 public:
  DiffScalar() = default;

  double value() const noexcept { return value_; }
  std::uint32_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  DiffScalar(Tape* tape, std::uint32_t index, double value)
      : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  double value_ = 0.0;
};

// Append-only expression tape. The reverse sweep in grad() records its own
// arithmetic on the same tape, so the returned adjoints can be differentiated
// again. Single writer; use one tape per thread.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Const, Var, Add, Sub, Mul, Div, Pow, Neg, Sqrt, Sin, Cos, Exp, Log, Tanh, Square
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant node (zero derivative). Throws DomainError on non-finite input.
  DiffScalar lift(double v);
  // Tracked leaf.
  DiffScalar var(double v);

  DiffScalar add(DiffScalar a, DiffScalar b);
  DiffScalar sub(DiffScalar a, DiffScalar b);
  DiffScalar mul(DiffScalar a, DiffScalar b);
  DiffScalar div(DiffScalar a, DiffScalar b);
  DiffScalar pow(DiffScalar a, DiffScalar b);
  DiffScalar unary(Op op, DiffScalar a);

  // d output / d inputs[k] as nodes on this tape.
  std::vector<DiffScalar> grad(DiffScalar output, std::span<const DiffScalar> inputs);
  std::vector<DiffScalar> grad(DiffScalar output, std::initializer_list<DiffScalar> inputs) {
    return grad(output, std::span<const DiffScalar>(inputs.begin(), inputs.size()));
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(std::uint32_t i) const { return nodes_[i].op; }
  double value(std::uint32_t i) const { return nodes_[i].value; }

  // Drops every node. Outstanding DiffScalars become invalid.
  void clear();

 private:
  struct Node {
    Op op;
    std::uint32_t a;
    std::uint32_t b;
    double value;
  };

  static constexpr std::uint32_t kNone = 0xffffffffu;

  DiffScalar push(Op op, std::uint32_t a, std::uint32_t b, double value);
  DiffScalar handle(std::uint32_t i) { return DiffScalar(this, i, nodes_[i].value); }
  void check_owned(DiffScalar x) const;
  bool is_const(DiffScalar x, double v) const {
    return nodes_[x.index()].op == Op::Const && nodes_[x.index()].value == v;
  }
  void accumulate(std::vector<std::uint32_t>& adj, std::uint32_t target, DiffScalar contrib);

  std::vector<Node> nodes_;
};

DiffScalar operator+(DiffScalar a, DiffScalar b);
DiffScalar operator-(DiffScalar a, DiffScalar b);
DiffScalar operator*(DiffScalar a, DiffScalar b);
DiffScalar operator/(DiffScalar a, DiffScalar b);
DiffScalar operator-(DiffScalar a);

DiffScalar operator+(DiffScalar a, double b);
DiffScalar operator+(double a, DiffScalar b);
DiffScalar operator-(DiffScalar a, double b);
DiffScalar operator-(double a, DiffScalar b);
DiffScalar operator*(DiffScalar a, double b);
DiffScalar operator*(double a, DiffScalar b);
DiffScalar operator/(DiffScalar a, double b);
DiffScalar operator/(double a, DiffScalar b);

inline DiffScalar& operator+=(DiffScalar& a, DiffScalar b) { return a = a + b; }
inline DiffScalar& operator-=(DiffScalar& a, DiffScalar b) { return a = a - b; }
inline DiffScalar& operator*=(DiffScalar& a, DiffScalar b) { return a = a * b; }

DiffScalar sqrt(DiffScalar a);
DiffScalar sin(DiffScalar a);
DiffScalar cos(DiffScalar a);
DiffScalar exp(DiffScalar a);
DiffScalar log(DiffScalar a);
DiffScalar tanh(DiffScalar a);
DiffScalar square(DiffScalar a);
DiffScalar pow(DiffScalar a, DiffScalar b);
DiffScalar pow(DiffScalar a, double b);

inline double square(double a) { return a * a; }

// Value extraction that works for both plain doubles and tape nodes.
inline double value_of(double x) { return x; }
inline double value_of(DiffScalar x) { return x.value(); }

}  // namespace scnn::ad
