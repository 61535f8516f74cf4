#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <initializer_list>

namespace fse {

// splitmix64 finalizer; derives independent stream seeds from (base, tags...).
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags) {
  uint64_t s = mix_seed(base);
  for (uint64_t t : tags) s = mix_seed(s ^ mix_seed(t + 0x632be59bd9b4e019ULL));
  return s;
}

inline torch::Generator make_rng(uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

}  // namespace fse
