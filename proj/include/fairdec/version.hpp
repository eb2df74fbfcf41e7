#pragma once

namespace fairdec {

inline constexpr const char* kVersion = "0.1.0";

}
