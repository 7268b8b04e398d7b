#include "scnn/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scnn/error.hpp"

namespace scnn::ad {

namespace {

const char* op_name(Tape::Op op) {
  switch (op) {
    case Tape::Op::Const: return "const";
    case Tape::Op::Var: return "var";
    case Tape::Op::Add: return "add";
    case Tape::Op::Sub: return "sub";
    case Tape::Op::Mul: return "mul";
    case Tape::Op::Div: return "div";
    case Tape::Op::Pow: return "pow";
    case Tape::Op::Neg: return "neg";
    case Tape::Op::Sqrt: return "sqrt";
    case Tape::Op::Sin: return "sin";
    case Tape::Op::Cos: return "cos";
    case Tape::Op::Exp: return "exp";
    case Tape::Op::Log: return "log";
    case Tape::Op::Tanh: return "tanh";
    case Tape::Op::Square: return "square";
  }
  return "?";
}

[[noreturn]] void domain_fail(Tape::Op op, std::size_t node, double arg) {
  throw DomainError(std::string(op_name(op)) + " outside its domain (argument " +
                    std::to_string(arg) + ") at node " + std::to_string(node));
}

Tape* common_tape(DiffScalar a, DiffScalar b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw StructuralError("operands live on different tapes");
  }
  return a.tape();
}

Tape* tape_of(DiffScalar a) {
  if (a.tape() == nullptr) throw StructuralError("operand is not attached to a tape");
  return a.tape();
}

}  // namespace

DiffScalar Tape::push(Op op, std::uint32_t a, std::uint32_t b, double value) {
  nodes_.push_back(Node{op, a, b, value});
  return DiffScalar(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

void Tape::check_owned(DiffScalar x) const {
  if (x.tape() != this || x.index() >= nodes_.size()) {
    throw StructuralError("node " + std::to_string(x.index()) + " does not belong to this tape");
  }
}

void Tape::clear() { nodes_.clear(); }

DiffScalar Tape::lift(double v) {
  if (!std::isfinite(v)) throw DomainError("lift: non-finite constant");
  return push(Op::Const, kNone, kNone, v);
}

DiffScalar Tape::var(double v) {
  if (!std::isfinite(v)) throw DomainError("var: non-finite value");
  return push(Op::Var, kNone, kNone, v);
}

DiffScalar Tape::add(DiffScalar a, DiffScalar b) {
  check_owned(a);
  check_owned(b);
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  return push(Op::Add, a.index(), b.index(), a.value() + b.value());
}

DiffScalar Tape::sub(DiffScalar a, DiffScalar b) {
  check_owned(a);
  check_owned(b);
  if (is_const(b, 0.0)) return a;
  return push(Op::Sub, a.index(), b.index(), a.value() - b.value());
}

DiffScalar Tape::mul(DiffScalar a, DiffScalar b) {
  check_owned(a);
  check_owned(b);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (is_const(a, 0.0)) return a;
  if (is_const(b, 0.0)) return b;
  return push(Op::Mul, a.index(), b.index(), a.value() * b.value());
}

DiffScalar Tape::div(DiffScalar a, DiffScalar b) {
  check_owned(a);
  check_owned(b);
  if (b.value() == 0.0) domain_fail(Op::Div, nodes_.size(), b.value());
  if (is_const(b, 1.0)) return a;
  return push(Op::Div, a.index(), b.index(), a.value() / b.value());
}

DiffScalar Tape::pow(DiffScalar a, DiffScalar b) {
  check_owned(a);
  check_owned(b);
  const double x = a.value();
  const double y = b.value();
  if ((x < 0.0 && std::floor(y) != y) || (x == 0.0 && y < 0.0)) {
    domain_fail(Op::Pow, nodes_.size(), x);
  }
  return push(Op::Pow, a.index(), b.index(), std::pow(x, y));
}

DiffScalar Tape::unary(Op op, DiffScalar a) {
  check_owned(a);
  const double x = a.value();
  double v = 0.0;
  switch (op) {
    case Op::Neg: v = -x; break;
    case Op::Sqrt:
      if (x < 0.0) domain_fail(op, nodes_.size(), x);
      v = std::sqrt(x);
      break;
    case Op::Sin: v = std::sin(x); break;
    case Op::Cos: v = std::cos(x); break;
    case Op::Exp: v = std::exp(x); break;
    case Op::Log:
      if (x <= 0.0) domain_fail(op, nodes_.size(), x);
      v = std::log(x);
      break;
    case Op::Tanh: v = std::tanh(x); break;
    case Op::Square: v = x * x; break;
    default:
      throw StructuralError(std::string("unary: ") + op_name(op) + " is not a unary op");
  }
  if (nodes_[a.index()].op == Op::Const) return lift(v);
  return push(op, a.index(), kNone, v);
}

void Tape::accumulate(std::vector<std::uint32_t>& adj, std::uint32_t target, DiffScalar contrib) {
  if (adj[target] == kNone) {
    adj[target] = contrib.index();
  } else {
    adj[target] = add(handle(adj[target]), contrib).index();
  }
}

std::vector<DiffScalar> Tape::grad(DiffScalar output, std::span<const DiffScalar> inputs) {
  check_owned(output);
  for (const auto& in : inputs) check_owned(in);

  const std::uint32_t out = output.index();
  const std::size_t n = static_cast<std::size_t>(out) + 1;

  // Only nodes on a path from some input to the output need an adjoint.
  std::vector<char> dep(n, 0);
  std::uint32_t lowest = out;
  for (const auto& in : inputs) {
    if (in.index() <= out) {
      dep[in.index()] = 1;
      lowest = std::min(lowest, in.index());
    }
  }
  for (std::size_t i = lowest; i < n; ++i) {
    const Node& nd = nodes_[i];
    if (nd.a != kNone && nd.a < n && dep[nd.a]) dep[i] = 1;
    if (nd.b != kNone && nd.b < n && dep[nd.b]) dep[i] = 1;
  }

  std::vector<std::uint32_t> adj(n, kNone);
  if (dep[out]) adj[out] = lift(1.0).index();

  for (std::size_t ii = n; ii-- > lowest;) {
    const auto i = static_cast<std::uint32_t>(ii);
    if (adj[i] == kNone || !dep[i]) continue;
    // Copy: pushes below may reallocate nodes_.
    const Node nd = nodes_[i];
    if (nd.op == Op::Var || nd.op == Op::Const) continue;
    const DiffScalar g = handle(adj[i]);
    const DiffScalar self = handle(i);
    const bool da = nd.a != kNone && dep[nd.a];
    const bool db = nd.b != kNone && dep[nd.b];
    const DiffScalar a = nd.a != kNone ? handle(nd.a) : DiffScalar();
    const DiffScalar b = nd.b != kNone ? handle(nd.b) : DiffScalar();

    switch (nd.op) {
      case Op::Add:
        if (da) accumulate(adj, nd.a, g);
        if (db) accumulate(adj, nd.b, g);
        break;
      case Op::Sub:
        if (da) accumulate(adj, nd.a, g);
        if (db) accumulate(adj, nd.b, unary(Op::Neg, g));
        break;
      case Op::Mul:
        if (da) accumulate(adj, nd.a, mul(g, b));
        if (db) accumulate(adj, nd.b, mul(g, a));
        break;
      case Op::Div:
        if (da) accumulate(adj, nd.a, div(g, b));
        if (db) accumulate(adj, nd.b, unary(Op::Neg, div(mul(g, self), b)));
        break;
      case Op::Pow:
        if (da) {
          const DiffScalar em1 = sub(b, lift(1.0));
          accumulate(adj, nd.a, mul(g, mul(b, pow(a, em1))));
        }
        if (db) accumulate(adj, nd.b, mul(g, mul(self, unary(Op::Log, a))));
        break;
      case Op::Neg:
        if (da) accumulate(adj, nd.a, unary(Op::Neg, g));
        break;
      case Op::Sqrt:
        if (da) accumulate(adj, nd.a, div(mul(g, lift(0.5)), self));
        break;
      case Op::Sin:
        if (da) accumulate(adj, nd.a, mul(g, unary(Op::Cos, a)));
        break;
      case Op::Cos:
        if (da) accumulate(adj, nd.a, unary(Op::Neg, mul(g, unary(Op::Sin, a))));
        break;
      case Op::Exp:
        if (da) accumulate(adj, nd.a, mul(g, self));
        break;
      case Op::Log:
        if (da) accumulate(adj, nd.a, div(g, a));
        break;
      case Op::Tanh:
        if (da) accumulate(adj, nd.a, mul(g, sub(lift(1.0), unary(Op::Square, self))));
        break;
      case Op::Square:
        if (da) accumulate(adj, nd.a, mul(g, mul(lift(2.0), a)));
        break;
      case Op::Const:
      case Op::Var:
        break;
    }
  }

  std::vector<DiffScalar> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.index() <= out && adj[in.index()] != kNone) {
      result.push_back(handle(adj[in.index()]));
    } else {
      result.push_back(lift(0.0));
    }
  }
  return result;
}

DiffScalar operator+(DiffScalar a, DiffScalar b) { return common_tape(a, b)->add(a, b); }
DiffScalar operator-(DiffScalar a, DiffScalar b) { return common_tape(a, b)->sub(a, b); }
DiffScalar operator*(DiffScalar a, DiffScalar b) { return common_tape(a, b)->mul(a, b); }
DiffScalar operator/(DiffScalar a, DiffScalar b) { return common_tape(a, b)->div(a, b); }
DiffScalar operator-(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Neg, a); }

DiffScalar operator+(DiffScalar a, double b) { return a + tape_of(a)->lift(b); }
DiffScalar operator+(double a, DiffScalar b) { return tape_of(b)->lift(a) + b; }
DiffScalar operator-(DiffScalar a, double b) { return a - tape_of(a)->lift(b); }
DiffScalar operator-(double a, DiffScalar b) { return tape_of(b)->lift(a) - b; }
DiffScalar operator*(DiffScalar a, double b) { return a * tape_of(a)->lift(b); }
DiffScalar operator*(double a, DiffScalar b) { return tape_of(b)->lift(a) * b; }
DiffScalar operator/(DiffScalar a, double b) { return a / tape_of(a)->lift(b); }
DiffScalar operator/(double a, DiffScalar b) { return tape_of(b)->lift(a) / b; }

DiffScalar sqrt(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Sqrt, a); }
DiffScalar sin(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Sin, a); }
DiffScalar cos(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Cos, a); }
DiffScalar exp(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Exp, a); }
DiffScalar log(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Log, a); }
DiffScalar tanh(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Tanh, a); }
DiffScalar square(DiffScalar a) { return tape_of(a)->unary(Tape::Op::Square, a); }
DiffScalar pow(DiffScalar a, DiffScalar b) { return common_tape(a, b)->pow(a, b); }
DiffScalar pow(DiffScalar a, double b) { return pow(a, tape_of(a)->lift(b)); }

}  // namespace scnn::ad
