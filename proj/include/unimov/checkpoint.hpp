#pragma once

#include "unimov/autodiff.hpp"

#include <string>

namespace unimov {

// Named-array container: text header, then raw little-endian float32 payload.
//
//   UNIMOV-CKPT v1 <count>
//   <name> <rows> <cols>        (count lines)
//   <rows*cols float32 values per entry, row-major, in header order>
//
// Values are stored in 32-bit floats; loading widens back to double.
void save_checkpoint(const ad::ParamStore& store, const std::string& path);

// Loads into an existing store; every entry must match an existing
// parameter's name and shape.
void load_checkpoint(ad::ParamStore& store, const std::string& path);

}  // namespace unimov
