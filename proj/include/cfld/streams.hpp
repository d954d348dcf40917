#pragma once

#include <cstdint>

// RNG stream purposes. Every random draw in the pipeline comes from a
// substream keyed by (purpose, step/index), so replay and resume are exact by
// construction: no draw depends on how many draws happened before it.

namespace cfld::streams {

inline constexpr std::uint64_t kCodecStep = 0xC0DE0001;
inline constexpr std::uint64_t kBackboneStep = 0xC0DE0002;
inline constexpr std::uint64_t kTrainStep = 0xC0DE0003;
inline constexpr std::uint64_t kSampleInit = 0xC0DE0004;
inline constexpr std::uint64_t kTransferRef = 0xC0DE0005;

}  // namespace cfld::streams
