#pragma once

namespace retrace {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace retrace
