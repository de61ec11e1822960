#include "smoothswap/rng.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>

namespace smoothswap {

std::string Rng::serialize() const {
  char buf[160];
  // Hex keeps full 64-bit precision (JSON numbers would not).
  std::snprintf(buf, sizeof(buf), "%016" PRIx64 ":%016" PRIx64 ":%016" PRIx64 ":%016" PRIx64
                                  ":%d:%a",
                s_[0], s_[1], s_[2], s_[3], has_gauss_ ? 1 : 0, gauss_);
  return buf;
}

Rng Rng::deserialize(const std::string& hex) {
  Rng r;
  int has = 0;
  double g = 0.0;
  const int n = std::sscanf(hex.c_str(), "%" SCNx64 ":%" SCNx64 ":%" SCNx64 ":%" SCNx64 ":%d:%la",
                            &r.s_[0], &r.s_[1], &r.s_[2], &r.s_[3], &has, &g);
  if (n != 6) throw Error("Rng::deserialize: malformed state string '" + hex + "'");
  r.has_gauss_ = has != 0;
  r.gauss_ = g;
  return r;
}

}  // namespace smoothswap
