#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace chatlab {

struct SseEvent {
  std::string event;  // empty means the default "message" type
  std::string data;
};

/// Incremental server-sent-events decoder; accepts arbitrary byte splits.
class SseParser {
 public:
  std::vector<SseEvent> feed(std::string_view bytes);

 private:
  void process_line(std::string_view line, std::vector<SseEvent>& out);

  std::string buffer_;
  SseEvent current_;
  bool has_data_ = false;
};

/// Encodes one event; multi-line data is split across several data: fields.
std::string format_sse(std::string_view event, std::string_view data);

}  // namespace chatlab
