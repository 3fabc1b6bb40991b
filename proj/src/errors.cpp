#include "levyfilter/errors.hpp"

namespace levyfilter {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::unsupported_measure: return "unsupported-measure";
    case ErrorKind::model_violation: return "model-violation";
    case ErrorKind::integration_failure: return "integration-failure";
    case ErrorKind::stiffness_rejected: return "stiffness-rejected";
    case ErrorKind::extrapolation: return "extrapolation-error";
    case ErrorKind::config: return "config-error";
  }
  return "unknown";
}

}  // namespace levyfilter
