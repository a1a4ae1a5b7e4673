#pragma once

namespace st4d {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace st4d
