#include "gmetro/rng.hpp"

namespace gmetro {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix_seed(root);
  for (std::uint64_t p : path) h = mix_seed(h ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace gmetro
