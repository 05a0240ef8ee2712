#pragma once

namespace mixmerge {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mixmerge
