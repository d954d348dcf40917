#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"

// Synthetic stick-person dataset: one sampled appearance rendered at two
// sampled poses, plus OpenPose-style skeleton maps. Everything is a pure
// function of (seed, index), so generation parallelizes and replays exactly.

namespace cfld {

using numkit::Rng;
using numkit::Tensor;

namespace skeleton {

// head, neck, l/r shoulder, l/r elbow, l/r hand, hip, feet midpoint
inline constexpr int kJoints = 10;
inline constexpr int kBones = 9;
// (parent, child) pairs over the joint indices above
inline constexpr std::array<std::array<int, 2>, kBones> kBonePairs = {{
    {1, 0},  // neck-head
    {1, 2},  // neck-left shoulder
    {1, 3},  // neck-right shoulder
    {2, 4},  // left upper arm
    {3, 5},  // right upper arm
    {4, 6},  // left forearm
    {5, 7},  // right forearm
    {1, 8},  // spine
    {8, 9},  // legs (hip to feet midpoint)
}};

}  // namespace skeleton

struct PoseSpec {
    // normalized [0,1]^2, x right, y down
    std::array<std::array<double, 2>, skeleton::kJoints> joints{};
    bool facing_back = false;
};

enum class TorsoPattern { kSolid = 0, kStripes = 1, kDots = 2 };

struct Rgb {
    double r = 0, g = 0, b = 0;
};

struct AppearanceSpec {
    Rgb torso, limb, head, background;
    TorsoPattern pattern = TorsoPattern::kSolid;
    double phase = 0.0;  // pattern phase in [0,1)
};

struct SamplePair {
    Tensor<float> x_s, x_g;    // [3,H,W] in [-1,1]
    Tensor<float> x_sp, x_tp;  // pose maps [3,H,W]
    PoseSpec source_pose, target_pose;
    AppearanceSpec appearance;
    std::uint64_t appearance_stream = 0;
    std::uint64_t source_pose_stream = 0;
    std::uint64_t target_pose_stream = 0;
};

// Joint angles within anatomical ranges; every keypoint at least 0.05 from
// the canvas border (degenerate draws are rejected and redrawn).
PoseSpec sample_pose(Rng& rng);

// Palette colors with pairwise distance >= 0.35 so appearances stay
// identifiable by color histogram.
AppearanceSpec sample_appearance(Rng& rng);

// Anti-aliased skeleton map: distinct color per bone, joint disks on top,
// black (-1) background.
Tensor<float> render_pose(const PoseSpec& pose, std::size_t height, std::size_t width);

// Filled capsules per bone with the appearance colors/pattern over the
// background color.
Tensor<float> render_person(const PoseSpec& pose, const AppearanceSpec& appearance,
                            std::size_t height, std::size_t width);

// Deterministic in (seed, index). Train and test splits use disjoint index
// ranges: test indices live at kTestIndexBase + i.
inline constexpr std::uint64_t kTestIndexBase = 1u << 20;

SamplePair gen_pair(std::uint64_t seed, std::uint64_t index, std::size_t height,
                    std::size_t width);

// Single person image (for codec pretraining pools).
Tensor<float> gen_image(std::uint64_t seed, std::uint64_t index, std::size_t height,
                        std::size_t width);

// Recover keypoints from a rendered pose map via per-joint color matching
// (centroid of pixels nearest to each joint disk color). Returns pixel
// coordinates; used by the pose identifiability check.
std::array<std::array<double, 2>, skeleton::kJoints> recover_keypoints(
    const Tensor<float>& pose_map);

// 8x8x8 RGB histogram over all pixels, L1-normalized; the appearance
// identifiability check runs 1-NN matching on these.
std::vector<double> color_histogram(const Tensor<float>& image);

}  // namespace cfld
