#include "triad/error.hpp"

namespace triad {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_pair: return "invalid_pair";
    case ErrorCode::invalid_triplet: return "invalid_triplet";
    case ErrorCode::too_few_items: return "too_few_items";
    case ErrorCode::parse: return "parse";
    case ErrorCode::input: return "input";
    case ErrorCode::plan: return "plan";
    case ErrorCode::tie: return "tie";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::coverage: return "coverage";
    case ErrorCode::iteration_limit: return "iteration_limit";
    case ErrorCode::size: return "size";
    case ErrorCode::validation: return "validation";
    case ErrorCode::emission: return "emission";
    case ErrorCode::io: return "io";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::completed: return "completed";
    case ErrorCode::sequence: return "sequence";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::state: return "state";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::planning: return "planning";
    case ErrorCode::unauthorized: return "unauthorized";
  }
  return "unknown";
}

}  // namespace triad
