#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tdenclosure/core.hpp"

namespace tde {

/// One indicator value I_B(tau), held as sign and log-magnitude so that values
/// far below the double range (large tau) remain usable.
struct IndicatorSample {
  double tau{0.0};
  int sign{0};  // -1, 0, +1
  double log_abs{-std::numeric_limits<double>::infinity()};

  static IndicatorSample from_value(double tau, double v) {
    IndicatorSample s;
    s.tau = tau;
    s.sign = (v > 0) - (v < 0);
    s.log_abs = s.sign ? std::log(std::abs(v)) : -std::numeric_limits<double>::infinity();
    return s;
  }
  static IndicatorSample from_log(double tau, int sign, double log_abs) {
    IndicatorSample s;
    s.tau = tau;
    s.sign = sign;
    s.log_abs = sign ? log_abs : -std::numeric_limits<double>::infinity();
    return s;
  }

  double value() const { return sign == 0 ? 0.0 : sign * std::exp(log_abs); }

  /// tau^4 exp(2 tau dist) I_B(tau).
  double normalized(double dist) const {
    if (sign == 0) return 0.0;
    return sign * std::exp(log_abs + 4.0 * std::log(tau) + 2.0 * tau * dist);
  }
};

enum class Provenance { oracle, bem, tdwave, synthetic };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::oracle: return "oracle";
    case Provenance::bem: return "bem";
    case Provenance::tdwave: return "tdwave";
    case Provenance::synthetic: return "synthetic";
  }
  return "unknown";
}

}  // namespace tde
