#pragma once

#include <cstdint>

namespace deepcc {

// An acknowledgement as observed by the sender.
struct AckEvent {
  int flow_id = 0;
  std::int64_t seq = 0;
  std::int64_t time_ms = 0;  // arrival at the sender
  double rtt_ms = 0.0;
  int delivered_bytes = 0;
};

}  // namespace deepcc
