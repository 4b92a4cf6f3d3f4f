#pragma once

namespace attnground {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace attnground
