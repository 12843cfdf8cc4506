#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace termdp {

// Bad indices, malformed specs, out-of-range parameters.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A valid request this implementation deliberately does not serve,
// e.g. exact evaluation of off-grid costs.
class UnsupportedConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Enumeration oracles refuse instances past their leaf cap.
class InstanceTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite intermediate values (advantages, likelihoods).
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The likelihood maximizer ran out of iterations. Carries the last iterate so
// callers can inspect or resume.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(const std::string& what, std::vector<double> last_iterate,
                     double last_bias, double gradient_norm, int iterations)
      : std::runtime_error(what),
        last_iterate_(std::move(last_iterate)),
        last_bias_(last_bias),
        gradient_norm_(gradient_norm),
        iterations_(iterations) {}

  const std::vector<double>& last_iterate() const { return last_iterate_; }
  double last_bias() const { return last_bias_; }
  double gradient_norm() const { return gradient_norm_; }
  int iterations() const { return iterations_; }

 private:
  std::vector<double> last_iterate_;
  double last_bias_;
  double gradient_norm_;
  int iterations_;
};

}  // namespace termdp
