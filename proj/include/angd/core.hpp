#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace angd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Contract violations (bad dimensions, invalid configs) throw
// std::invalid_argument. Numeric failures at runtime throw NumericError.
// Operations requested on problems that cannot supply the needed
// quantities throw CapabilityError.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class CapabilityError : public std::runtime_error {
 public:
  explicit CapabilityError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_finite(const Eigen::Ref<const Matrix>& m, const std::string& who) {
  if (!m.allFinite()) throw NumericError(who + ": non-finite entries");
}

}  // namespace angd
