#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>

namespace gdsrec {

/// FNV-1a over the object representation of trivially copyable values.
/// Only used for on-disk fingerprints, so the byte order of the host matters.
class Fnv1a {
 public:
  void add_bytes(std::span<const unsigned char> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
  }

  template <class T>
    requires std::is_trivially_copyable_v<T>
  void add(const T& value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    add_bytes(buf);
  }

  void add(const std::string& s) {
    add(s.size());
    add_bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
  }

  std::uint64_t value() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

}  // namespace gdsrec
