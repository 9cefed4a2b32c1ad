#pragma once

namespace cbf {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSpecSchemaVersion = 1;

}  // namespace cbf
