#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace scnn::cli {

// Failure with a fixed machine-readable category, reported as
// "error: <category>: <message>".
class CliError : public std::runtime_error {
 public:
  CliError(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

// Runs one command line (args excludes the program name). Returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scnn::cli
