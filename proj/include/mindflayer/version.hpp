#pragma once

namespace mindflayer {

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace mindflayer
