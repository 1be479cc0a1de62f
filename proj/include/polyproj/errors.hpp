#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace polyproj {

// Error taxonomy used across the library. The CLI maps Input/Rank/Infeasible
// to exit code 1 and Convergence to exit code 2.
enum class ErrorKind {
  Input,        // malformed or inconsistent arguments
  Rank,         // equality system not of full row rank
  Infeasible,   // constraint set certified empty
  Convergence,  // iterative solve hit its cap
  Size,         // problem too large for an enumeration-based routine
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Carries the best iterate seen so callers can inspect a failed solve.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, std::vector<double> best,
                   double residual)
      : Error(ErrorKind::Convergence, message),
        best_iterate(std::move(best)),
        residual(residual) {}

  std::vector<double> best_iterate;
  double residual;
};

}  // namespace polyproj
