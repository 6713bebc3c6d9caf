#include "dept/rng.hpp"

namespace dept {

namespace {

// splitmix64 finalizer; good avalanche for seed derivation.
uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t master, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : tag) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return mix(master ^ mix(h));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
  return mix(derive_seed(master, tag) + index);
}

}  // namespace dept
