#pragma once

namespace geomerge {
inline constexpr const char* kVersion = "0.1.0";
}
