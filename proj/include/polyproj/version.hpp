#pragma once

namespace polyproj {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace polyproj
