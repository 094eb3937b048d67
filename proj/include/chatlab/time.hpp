#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <string_view>

namespace chatlab {

using Timestamp = std::chrono::time_point<std::chrono::system_clock, std::chrono::milliseconds>;
using Clock = std::function<Timestamp()>;

Timestamp now();

// ISO-8601 UTC with millisecond precision, e.g. 2024-03-01T09:30:00.250Z.
std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(std::string_view text);

}  // namespace chatlab
