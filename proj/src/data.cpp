#include "cfld/data.hpp"

#include <algorithm>
#include <cmath>

namespace cfld {

namespace {

constexpr double kMargin = 0.05;

// stream purposes inside gen_pair
constexpr std::uint64_t kStreamAppearance = 101;
constexpr std::uint64_t kStreamPose = 102;
constexpr std::uint64_t kStreamSingle = 103;

struct Vec2 {
    double x = 0, y = 0;
};

Vec2 polar(double angle, double len) { return {std::sin(angle) * len, std::cos(angle) * len}; }

// Fixed bone lengths of the skeleton template (normalized units).
constexpr double kNeckHead = 0.10;
constexpr double kNeckShoulder = 0.09;
constexpr double kUpperArm = 0.10;
constexpr double kForearm = 0.10;
constexpr double kSpine = 0.18;
constexpr double kLegs = 0.22;

PoseSpec try_pose(Rng& rng) {
    PoseSpec p;
    p.facing_back = rng.uniform() < 0.5;

    const double neck_x = 0.35 + 0.30 * rng.uniform();
    const double neck_y = 0.28 + 0.14 * rng.uniform();

    // angles measured from straight down (y grows downward)
    const double torso_a = (rng.uniform() - 0.5) * 0.6;
    const double head_a = torso_a + (rng.uniform() - 0.5) * 0.5;
    const double lsho_a = torso_a + std::numbers::pi / 2 + (rng.uniform() - 0.5) * 0.4;
    const double rsho_a = torso_a - std::numbers::pi / 2 - (rng.uniform() - 0.5) * 0.4;
    const double larm_a = torso_a + 0.15 + rng.uniform() * 1.5;
    const double rarm_a = torso_a - 0.15 - rng.uniform() * 1.5;
    const double lfore_a = larm_a + (rng.uniform() - 0.7) * 1.6;
    const double rfore_a = rarm_a - (rng.uniform() - 0.7) * 1.6;
    const double legs_a = torso_a + (rng.uniform() - 0.5) * 0.7;

    auto& j = p.joints;
    const Vec2 neck{neck_x, neck_y};
    auto place = [&](int idx, Vec2 base, double angle, double len, double dir = 1.0) {
        j[idx][0] = base.x + std::sin(angle) * len;
        j[idx][1] = base.y + dir * std::cos(angle) * len;
    };
    j[1] = {neck_x, neck_y};
    place(0, neck, head_a, kNeckHead, -1.0);  // head above neck
    place(2, neck, lsho_a, kNeckShoulder);
    place(3, neck, rsho_a, kNeckShoulder);
    place(4, {j[2][0], j[2][1]}, larm_a, kUpperArm);
    place(5, {j[3][0], j[3][1]}, rarm_a, kUpperArm);
    place(6, {j[4][0], j[4][1]}, lfore_a, kForearm);
    place(7, {j[5][0], j[5][1]}, rfore_a, kForearm);
    place(8, neck, torso_a, kSpine);
    place(9, {j[8][0], j[8][1]}, legs_a, kLegs);
    return p;
}

bool pose_in_bounds(const PoseSpec& p) {
    for (const auto& pt : p.joints) {
        if (pt[0] < kMargin || pt[0] > 1.0 - kMargin || pt[1] < kMargin || pt[1] > 1.0 - kMargin) {
            return false;
        }
    }
    // near-coincident keypoints are degenerate (joint markers become
    // unreadable); reject and redraw
    for (int a = 0; a < skeleton::kJoints; ++a) {
        for (int b = a + 1; b < skeleton::kJoints; ++b) {
            const double dx = p.joints[a][0] - p.joints[b][0];
            const double dy = p.joints[a][1] - p.joints[b][1];
            if (dx * dx + dy * dy < kMargin * kMargin) return false;
        }
    }
    return true;
}

double color_dist(const Rgb& a, const Rgb& b) {
    return std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b);
}

Rgb hsv(double h, double s, double v) {
    const double c = v * s;
    const double hh = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hh < 1) {
        r = c, g = x;
    } else if (hh < 2) {
        r = x, g = c;
    } else if (hh < 3) {
        g = c, b = x;
    } else if (hh < 4) {
        g = x, b = c;
    } else if (hh < 5) {
        r = x, b = c;
    } else {
        r = c, b = x;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

Rgb random_color(Rng& rng) {
    return hsv(rng.uniform(), 0.55 + 0.45 * rng.uniform(), 0.55 + 0.45 * rng.uniform());
}

// Distinct fixed colors for bones and joints of the pose maps.
Rgb wheel_color(int i, int total) { return hsv(double(i) / total, 1.0, 1.0); }

struct Canvas {
    std::size_t h, w;
    std::vector<double> rgb;  // [3,h,w] in [0,1]

    Canvas(std::size_t h_, std::size_t w_, const Rgb& fill) : h(h_), w(w_), rgb(3 * h_ * w_) {
        for (std::size_t i = 0; i < h * w; ++i) {
            rgb[i] = fill.r;
            rgb[h * w + i] = fill.g;
            rgb[2 * h * w + i] = fill.b;
        }
    }

    void blend(std::size_t x, std::size_t y, const Rgb& c, double coverage) {
        if (coverage <= 0.0) return;
        const double a = std::min(coverage, 1.0);
        const std::size_t i = y * w + x;
        rgb[i] += (c.r - rgb[i]) * a;
        rgb[h * w + i] += (c.g - rgb[h * w + i]) * a;
        rgb[2 * h * w + i] += (c.b - rgb[2 * h * w + i]) * a;
    }

    Tensor<float> to_tensor() const {
        Tensor<float> out = Tensor<float>::zeros({3, h, w});
        float* p = out.mutable_data();
        for (std::size_t i = 0; i < rgb.size(); ++i) {
            p[i] = static_cast<float>(rgb[i] * 2.0 - 1.0);
        }
        return out;
    }
};

// Distance from point to segment.
double segment_dist(double px, double py, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = x0 + t * dx, cy = y0 + t * dy;
    return std::hypot(px - cx, py - cy);
}

// Capsule with 1px linear anti-aliasing. Color may vary per pixel via fn.
template <typename ColorFn>
void draw_capsule_fn(Canvas& cv, double x0, double y0, double x1, double y1, double radius,
                     ColorFn color_at) {
    const double pad = radius + 1.5;
    const long xmin = std::max(0L, static_cast<long>(std::floor(std::min(x0, x1) - pad)));
    const long xmax = std::min(static_cast<long>(cv.w) - 1,
                               static_cast<long>(std::ceil(std::max(x0, x1) + pad)));
    const long ymin = std::max(0L, static_cast<long>(std::floor(std::min(y0, y1) - pad)));
    const long ymax = std::min(static_cast<long>(cv.h) - 1,
                               static_cast<long>(std::ceil(std::max(y0, y1) + pad)));
    for (long y = ymin; y <= ymax; ++y) {
        for (long x = xmin; x <= xmax; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double d = segment_dist(px, py, x0, y0, x1, y1);
            const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
            if (coverage > 0.0) {
                cv.blend(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                         color_at(px, py), coverage);
            }
        }
    }
}

void draw_capsule(Canvas& cv, double x0, double y0, double x1, double y1, double radius,
                  const Rgb& color) {
    draw_capsule_fn(cv, x0, y0, x1, y1, radius, [&](double, double) { return color; });
}

void draw_disk(Canvas& cv, double cx, double cy, double radius, const Rgb& color) {
    draw_capsule(cv, cx, cy, cx, cy, radius, color);
}

Rgb pattern_color(const AppearanceSpec& a) {
    return {a.torso.r * 0.35, a.torso.g * 0.35, a.torso.b * 0.35};
}

}  // namespace

PoseSpec sample_pose(Rng& rng) {
    for (int attempt = 0; attempt < 256; ++attempt) {
        PoseSpec p = try_pose(rng);
        if (pose_in_bounds(p)) return p;
    }
    throw std::runtime_error("sample_pose: could not satisfy margin invariant");
}

AppearanceSpec sample_appearance(Rng& rng) {
    AppearanceSpec a;
    for (int attempt = 0; attempt < 256; ++attempt) {
        a.torso = random_color(rng);
        a.limb = random_color(rng);
        a.head = random_color(rng);
        a.background = random_color(rng);
        const double min_dist =
            std::min({color_dist(a.torso, a.limb), color_dist(a.torso, a.head),
                      color_dist(a.torso, a.background), color_dist(a.limb, a.head),
                      color_dist(a.limb, a.background), color_dist(a.head, a.background)});
        if (min_dist >= 0.35) break;
        if (attempt == 255) throw std::runtime_error("sample_appearance: palette rejection failed");
    }
    const double r = rng.uniform();
    a.pattern = r < 1.0 / 3 ? TorsoPattern::kSolid
                            : (r < 2.0 / 3 ? TorsoPattern::kStripes : TorsoPattern::kDots);
    a.phase = rng.uniform();
    return a;
}

Tensor<float> render_pose(const PoseSpec& pose, std::size_t height, std::size_t width) {
    Canvas cv(height, width, Rgb{0, 0, 0});
    const double W = static_cast<double>(width), H = static_cast<double>(height);
    const int total = skeleton::kBones + skeleton::kJoints;
    for (int b = 0; b < skeleton::kBones; ++b) {
        const auto [pa, pb] = skeleton::kBonePairs[b];
        draw_capsule(cv, pose.joints[pa][0] * W, pose.joints[pa][1] * H, pose.joints[pb][0] * W,
                     pose.joints[pb][1] * H, 0.9, wheel_color(b, total));
    }
    // joint disks on top so each keypoint has a recoverable pure-color blob
    for (int j = 0; j < skeleton::kJoints; ++j) {
        draw_disk(cv, pose.joints[j][0] * W, pose.joints[j][1] * H, 1.6,
                  wheel_color(skeleton::kBones + j, total));
    }
    return cv.to_tensor();
}

Tensor<float> render_person(const PoseSpec& pose, const AppearanceSpec& appearance,
                            std::size_t height, std::size_t width) {
    Canvas cv(height, width, appearance.background);
    const double W = static_cast<double>(width), H = static_cast<double>(height);
    auto px = [&](int j) { return pose.joints[j][0] * W; };
    auto py = [&](int j) { return pose.joints[j][1] * H; };

    const double limb_r = 0.022 * W;
    // legs, then arms, then torso, then head (torso occludes limb roots)
    draw_capsule(cv, px(8), py(8), px(9), py(9), limb_r * 1.6, appearance.limb);
    for (auto [a, b] : {std::array<int, 2>{2, 4}, {4, 6}, {3, 5}, {5, 7}}) {
        draw_capsule(cv, px(a), py(a), px(b), py(b), limb_r, appearance.limb);
    }

    // torso: thick capsule from neck to hip, patterned in torso-local coords
    {
        const double x0 = px(1), y0 = py(1), x1 = px(8), y1 = py(8);
        const double axis_x = x1 - x0, axis_y = y1 - y0;
        const double axis_len = std::hypot(axis_x, axis_y);
        const double ux = axis_x / axis_len, uy = axis_y / axis_len;
        const AppearanceSpec& a = appearance;
        const Rgb pat = pattern_color(a);
        // back side: pattern shifted by half a period (the "turn-around" cue)
        const double phase = a.phase + (pose.facing_back ? 0.5 : 0.0);
        const double stripe_period = 0.055 * W;
        const double dot_period = 0.07 * W;
        auto torso_color = [&](double sx, double sy) -> Rgb {
            if (a.pattern == TorsoPattern::kSolid) return a.torso;
            const double along = (sx - x0) * ux + (sy - y0) * uy;
            const double across = -(sx - x0) * uy + (sy - y0) * ux;
            if (a.pattern == TorsoPattern::kStripes) {
                const double s = along / stripe_period + phase;
                const long k = static_cast<long>(std::floor(s));
                return (k % 2 == 0) ? a.torso : pat;
            }
            const double gx = along / dot_period + phase;
            const double gy = across / dot_period + phase;
            const double fx = gx - std::floor(gx) - 0.5;
            const double fy = gy - std::floor(gy) - 0.5;
            return (fx * fx + fy * fy < 0.09) ? pat : a.torso;
        };
        draw_capsule_fn(cv, x0, y0, x1, y1, 0.075 * W, torso_color);
    }

    draw_disk(cv, px(0), py(0), 0.048 * W, appearance.head);
    return cv.to_tensor();
}

SamplePair gen_pair(std::uint64_t seed, std::uint64_t index, std::size_t height,
                    std::size_t width) {
    SamplePair pair;
    pair.appearance_stream = Rng::key(kStreamAppearance, index);
    pair.source_pose_stream = Rng::key(kStreamPose, index, 0);
    pair.target_pose_stream = Rng::key(kStreamPose, index, 1);

    Rng rng_app = Rng(seed).stream(pair.appearance_stream);
    Rng rng_src = Rng(seed).stream(pair.source_pose_stream);
    Rng rng_tgt = Rng(seed).stream(pair.target_pose_stream);

    pair.appearance = sample_appearance(rng_app);
    pair.source_pose = sample_pose(rng_src);
    pair.target_pose = sample_pose(rng_tgt);

    pair.x_s = render_person(pair.source_pose, pair.appearance, height, width);
    pair.x_g = render_person(pair.target_pose, pair.appearance, height, width);
    pair.x_sp = render_pose(pair.source_pose, height, width);
    pair.x_tp = render_pose(pair.target_pose, height, width);
    return pair;
}

Tensor<float> gen_image(std::uint64_t seed, std::uint64_t index, std::size_t height,
                        std::size_t width) {
    Rng rng = Rng(seed).stream(Rng::key(kStreamSingle, index));
    const AppearanceSpec app = sample_appearance(rng);
    const PoseSpec pose = sample_pose(rng);
    return render_person(pose, app, height, width);
}

std::array<std::array<double, 2>, skeleton::kJoints> recover_keypoints(
    const Tensor<float>& pose_map) {
    const std::size_t h = pose_map.dim(1), w = pose_map.dim(2);
    const float* p = pose_map.data();
    const int total = skeleton::kBones + skeleton::kJoints;

    // assign each bright pixel to its nearest palette entry; only clean
    // assignments to a joint color contribute to that joint's centroid
    std::array<double, skeleton::kJoints> wsum{}, xs{}, ys{};
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = y * w + x;
            const double r = (p[i] + 1.0) / 2.0;
            const double g = (p[h * w + i] + 1.0) / 2.0;
            const double b = (p[2 * h * w + i] + 1.0) / 2.0;
            if (r + g + b < 0.5) continue;  // background / faint AA fringe
            int best = -1;
            double best_dist = 1e18;
            for (int k = 0; k < total; ++k) {
                const Rgb c = wheel_color(k, total);
                const double d =
                    std::abs(r - c.r) + std::abs(g - c.g) + std::abs(b - c.b);
                if (d < best_dist) {
                    best_dist = d;
                    best = k;
                }
            }
            if (best >= skeleton::kBones && best_dist < 0.15) {
                const int j = best - skeleton::kBones;
                xs[j] += x + 0.5;
                ys[j] += y + 0.5;
                wsum[j] += 1.0;
            }
        }
    }
    std::array<std::array<double, 2>, skeleton::kJoints> out{};
    for (int j = 0; j < skeleton::kJoints; ++j) {
        out[j] = wsum[j] > 0 ? std::array<double, 2>{xs[j] / wsum[j], ys[j] / wsum[j]}
                             : std::array<double, 2>{-1.0, -1.0};
    }
    return out;
}

std::vector<double> color_histogram(const Tensor<float>& image) {
    constexpr int kBins = 8;
    std::vector<double> hist(kBins * kBins * kBins, 0.0);
    const std::size_t hw = image.dim(1) * image.dim(2);
    const float* p = image.data();
    auto bin = [&](float v) {
        const double u = (v + 1.0) / 2.0;
        return std::clamp(static_cast<int>(u * kBins), 0, kBins - 1);
    };
    for (std::size_t i = 0; i < hw; ++i) {
        const int r = bin(p[i]), g = bin(p[hw + i]), b = bin(p[2 * hw + i]);
        hist[(r * kBins + g) * kBins + b] += 1.0;
    }
    for (double& v : hist) v /= double(hw);
    return hist;
}

}  // namespace cfld
