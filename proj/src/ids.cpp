#include "chatlab/ids.hpp"

namespace chatlab {

IdGenerator::IdGenerator() : engine_(std::random_device{}()) {}

IdGenerator::IdGenerator(std::uint64_t seed) : engine_(seed) {}

std::string IdGenerator::next(std::string_view prefix) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t bits;
  {
    std::lock_guard lock(mutex_);
    bits = engine_();
  }
  std::string out(prefix);
  out += '_';
  for (int shift = 60; shift >= 0; shift -= 4) out += kHex[(bits >> shift) & 0xF];
  return out;
}

}  // namespace chatlab
