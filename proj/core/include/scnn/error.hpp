#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scnn {

// A numerical operation was evaluated outside its domain (sqrt of a negative,
// division by zero, a state outside the physical region, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Shapes, tapes or model kinds do not fit together.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed input file. `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A vector field failed during integration. `stage` is the RK4 stage (1-4),
// `step` the rollout step (0 for a single rk4_step call).
class IntegrationError : public DomainError {
 public:
  IntegrationError(const std::string& what, int stage, std::size_t step)
      : DomainError(what), stage_(stage), step_(step) {}

  int stage() const noexcept { return stage_; }
  std::size_t step() const noexcept { return step_; }

 private:
  int stage_;
  std::size_t step_;
};

}  // namespace scnn
