#pragma once

namespace steinpp {

inline constexpr const char* kVersion = "1.0.0";

} // namespace steinpp
