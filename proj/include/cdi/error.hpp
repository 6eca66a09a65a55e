#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cdi {

// Machine-readable failure codes. The names are part of the wire format:
// the control service and CLI report them verbatim.
enum class Errc {
  capacity_exceeded,
  duplicate_id,
  dangling_reference,
  schema_error,
  no_path,
  mode_conflict,
  already_owned,
  mode_capacity,
  host_limit,
  not_connected,
  not_owned,
  forbidden,
  unknown_label,
  insufficient_resources,
  unknown_device,
  not_calibrated,
  infeasible_batch,
  no_feasible_batch,
  uncalibratable,
  missing_estimate,
  unknown_run,
  unknown_scope,
  unknown_workload,
  bind_failure,
  state_corrupt,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::capacity_exceeded: return "CAPACITY_EXCEEDED";
    case Errc::duplicate_id: return "DUPLICATE_ID";
    case Errc::dangling_reference: return "DANGLING_REFERENCE";
    case Errc::schema_error: return "SCHEMA_ERROR";
    case Errc::no_path: return "NO_PATH";
    case Errc::mode_conflict: return "MODE_CONFLICT";
    case Errc::already_owned: return "ALREADY_OWNED";
    case Errc::mode_capacity: return "MODE_CAPACITY";
    case Errc::host_limit: return "HOST_LIMIT";
    case Errc::not_connected: return "NOT_CONNECTED";
    case Errc::not_owned: return "NOT_OWNED";
    case Errc::forbidden: return "FORBIDDEN";
    case Errc::unknown_label: return "UNKNOWN_LABEL";
    case Errc::insufficient_resources: return "INSUFFICIENT_RESOURCES";
    case Errc::unknown_device: return "UNKNOWN_DEVICE";
    case Errc::not_calibrated: return "NOT_CALIBRATED";
    case Errc::infeasible_batch: return "INFEASIBLE_BATCH";
    case Errc::no_feasible_batch: return "NO_FEASIBLE_BATCH";
    case Errc::uncalibratable: return "UNCALIBRATABLE";
    case Errc::missing_estimate: return "MISSING_ESTIMATE";
    case Errc::unknown_run: return "UNKNOWN_RUN";
    case Errc::unknown_scope: return "UNKNOWN_SCOPE";
    case Errc::unknown_workload: return "UNKNOWN_WORKLOAD";
    case Errc::bind_failure: return "BIND_FAILURE";
    case Errc::state_corrupt: return "STATE_CORRUPT";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace cdi
