#pragma once

namespace fedctta {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fedctta
