// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace clmoe {

using Rng = std::mt19937_64;

// One root seed feeds every random stream in a run. Sub-seeds are derived by
// hashing (root, purpose, index) so that adding a consumer never shifts the
// draws of another one.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0) {
  return Rng(derive_seed(root, purpose, index));
}

}  // namespace clmoe
