#include "vmedit/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "vmedit/rng.hpp"
#include "json.hpp"

namespace vmedit {

const std::vector<std::string>& joint_names() {
    static const std::vector<std::string> names = {
        "head",    "neck",    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
        "r_wrist", "pelvis",  "l_knee",     "r_knee",     "l_ankle", "r_ankle"};
    return names;
}

const std::vector<std::pair<int, int>>& bone_edges() {
    static const std::vector<std::pair<int, int>> bones = {
        {0, 1},  {1, 2},  {1, 3},  {2, 4}, {4, 6},  {3, 5},
        {5, 7},  {1, 8},  {8, 9},  {9, 11}, {8, 10}, {10, 12}};
    return bones;
}

void SkeletonSequence::validate() const {
    if (frames.empty()) throw ContractError("skeleton sequence: no frames");
    std::size_t j = frames[0].joints.size();
    for (const Skeleton& s : frames) {
        if (s.joints.size() != j)
            throw ContractError("skeleton sequence: joint count varies across frames");
        for (const Joint& p : s.joints)
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw NumericError("skeleton sequence: non-finite joint coordinate");
    }
}

namespace {

struct Bbox {
    double min_x, max_x, min_y, max_y;
    int visible;
};

Bbox global_bbox(const SkeletonSequence& seq) {
    seq.validate();
    Bbox b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
           std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0};
    for (const Skeleton& s : seq.frames)
        for (const Joint& p : s.joints) {
            if (!p.visible) continue;
            b.min_x = std::min(b.min_x, p.x);
            b.max_x = std::max(b.max_x, p.x);
            b.min_y = std::min(b.min_y, p.y);
            b.max_y = std::max(b.max_y, p.y);
            ++b.visible;
        }
    if (b.visible < 2) throw ContractError("skeleton sequence: fewer than 2 visible joints");
    return b;
}

}  // namespace

std::pair<double, double> get_center(const SkeletonSequence& seq, CenterMode mode) {
    if (mode == CenterMode::joint_mean) {
        seq.validate();
        double sx = 0, sy = 0;
        int n = 0;
        for (const Skeleton& s : seq.frames)
            for (const Joint& p : s.joints) {
                if (!p.visible) continue;
                sx += p.x;
                sy += p.y;
                ++n;
            }
        if (n < 2) throw ContractError("skeleton sequence: fewer than 2 visible joints");
        return {sx / n, sy / n};
    }
    Bbox b = global_bbox(seq);
    return {(b.min_x + b.max_x) / 2.0, (b.min_y + b.max_y) / 2.0};
}

std::pair<double, double> get_hw(const SkeletonSequence& seq) {
    Bbox b = global_bbox(seq);
    return {b.max_y - b.min_y, b.max_x - b.min_x};
}

SkeletonSequence offset_skeletons(const SkeletonSequence& source, const SkeletonSequence& reference,
                                  CenterMode mode) {
    auto [sx, sy] = get_center(source, mode);
    auto [rx, ry] = get_center(reference, mode);
    auto [sh, sw] = get_hw(source);
    auto [rh, rw] = get_hw(reference);
    if (rh <= 0.0 || rw <= 0.0)
        throw ContractError("offset_skeletons: degenerate reference extents");
    if (sh <= 0.0 || sw <= 0.0)
        throw ContractError("offset_skeletons: degenerate source extents");
    double dis_x = rx - sx, dis_y = ry - sy;
    double scale_h = sh / rh, scale_w = sw / rw;

    SkeletonSequence out = reference;
    out.height_px = source.height_px;
    out.width_px = source.width_px;
    for (Skeleton& s : out.frames)
        for (Joint& p : s.joints) {
            p.x = rx + (p.x - rx) * scale_w - dis_x;
            p.y = ry + (p.y - ry) * scale_h - dis_y;
        }
    return out;
}

SkeletonSequence scale_sequence(const SkeletonSequence& seq, std::int64_t out_h, std::int64_t out_w) {
    if (seq.height_px <= 0 || seq.width_px <= 0)
        throw ContractError("scale_sequence: sequence has no canvas size");
    SkeletonSequence out = seq;
    double fx = static_cast<double>(out_w) / static_cast<double>(seq.width_px);
    double fy = static_cast<double>(out_h) / static_cast<double>(seq.height_px);
    out.height_px = out_h;
    out.width_px = out_w;
    for (Skeleton& s : out.frames)
        for (Joint& p : s.joints) {
            p.x *= fx;
            p.y *= fy;
        }
    return out;
}

namespace {

// One fixed color per bone; all channels kept above 0.3 so figure pixels
// never vanish against the black raster background.
const float kPalette[12][3] = {
    {1.00f, 0.30f, 0.30f}, {0.30f, 1.00f, 0.30f}, {0.30f, 0.40f, 1.00f}, {1.00f, 1.00f, 0.30f},
    {1.00f, 0.30f, 1.00f}, {0.30f, 1.00f, 1.00f}, {1.00f, 0.60f, 0.30f}, {0.60f, 0.30f, 1.00f},
    {0.30f, 0.70f, 0.50f}, {0.90f, 0.90f, 0.90f}, {0.70f, 0.50f, 0.30f}, {0.50f, 0.80f, 1.00f}};

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

void put_rgb(std::span<float> px, std::int64_t h, std::int64_t w, int x, int y, const float* rgb) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    for (int c = 0; c < 3; ++c) px[c * h * w + y * w + x] = rgb[c];
}

// Integer midpoint (Bresenham) line; visits each pixel once via callback.
template <typename F>
void midpoint_line(int x0, int y0, int x1, int y1, F&& visit) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        visit(x0, y0);
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

inline int roundc(double v, int hi) { return clampi(static_cast<int>(std::lround(v)), 0, hi); }

}  // namespace

Tensor rasterize(const Skeleton& skel, std::int64_t h, std::int64_t w) {
    if (skel.joints.size() != joint_names().size())
        throw ContractError("rasterize: expected " + std::to_string(joint_names().size()) +
                            " joints, got " + std::to_string(skel.joints.size()));
    Tensor out = Tensor::zeros({3, h, w});
    std::span<float> px = out.raw();

    const auto& bones = bone_edges();
    for (std::size_t b = 0; b < bones.size(); ++b) {
        const Joint& a = skel.joints[bones[b].first];
        const Joint& c = skel.joints[bones[b].second];
        if (!a.visible || !c.visible) continue;
        int x0 = roundc(a.x, static_cast<int>(w) - 1), y0 = roundc(a.y, static_cast<int>(h) - 1);
        int x1 = roundc(c.x, static_cast<int>(w) - 1), y1 = roundc(c.y, static_cast<int>(h) - 1);
        midpoint_line(x0, y0, x1, y1, [&](int x, int y) {
            // 3 px stroke: a 3x3 stamp around each line pixel
            for (int oy = -1; oy <= 1; ++oy)
                for (int ox = -1; ox <= 1; ++ox)
                    put_rgb(px, h, w, x + ox, y + oy, kPalette[b]);
        });
    }
    static const float kJoint[3] = {1.0f, 1.0f, 1.0f};
    for (const Joint& p : skel.joints) {
        if (!p.visible) continue;
        int cx = roundc(p.x, static_cast<int>(w) - 1), cy = roundc(p.y, static_cast<int>(h) - 1);
        for (int oy = -2; oy <= 2; ++oy)
            for (int ox = -2; ox <= 2; ++ox)
                if (ox * ox + oy * oy <= 4) put_rgb(px, h, w, cx + ox, cy + oy, kJoint);
    }
    return out;
}

Tensor rasterize_sequence(const SkeletonSequence& seq, std::int64_t h, std::int64_t w) {
    seq.validate();
    std::int64_t f = static_cast<std::int64_t>(seq.frames.size());
    Tensor out = Tensor::zeros({f, 3, h, w});
    std::span<float> dst = out.raw();
    for (std::int64_t i = 0; i < f; ++i) {
        Tensor r = rasterize(seq.frames[i], h, w);
        std::copy(r.data().begin(), r.data().end(), dst.begin() + i * 3 * h * w);
    }
    return out;
}

Tensor make_mask(const Skeleton& skel, std::int64_t h, std::int64_t w) {
    if (skel.joints.size() != joint_names().size())
        throw ContractError("make_mask: expected " + std::to_string(joint_names().size()) +
                            " joints, got " + std::to_string(skel.joints.size()));
    Tensor out = Tensor::zeros({1, h, w});
    std::span<float> px = out.raw();
    auto seg_dist = [](double qx, double qy, double ax, double ay, double bx, double by) {
        double vx = bx - ax, vy = by - ay;
        double len2 = vx * vx + vy * vy;
        double t = len2 > 0 ? ((qx - ax) * vx + (qy - ay) * vy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        double dx = qx - (ax + t * vx), dy = qy - (ay + t * vy);
        return dx * dx + dy * dy;
    };
    const auto& bones = bone_edges();
    const Joint& head = skel.joints[0];
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& bone : bones) {
                const Joint& a = skel.joints[bone.first];
                const Joint& c = skel.joints[bone.second];
                if (!a.visible || !c.visible) continue;
                best = std::min(best, seg_dist(static_cast<double>(x), static_cast<double>(y),
                                               a.x, a.y, c.x, c.y));
            }
            bool in = best <= 4.0;  // radius-2 capsule around each bone
            if (!in && head.visible)
                in = seg_dist(static_cast<double>(x), static_cast<double>(y), head.x, head.y,
                              head.x, head.y) <= 9.0;  // radius-3 head disc
            if (in) px[y * w + x] = 1.0f;
        }
    // widen by the drawn stroke so the mask always covers the raster; the
    // integer stamps can poke a corner pixel past the continuous capsule
    Tensor r = rasterize(skel, h, w);
    for (std::int64_t i = 0; i < h * w; ++i)
        if (r.data()[i] > 0.0f || r.data()[h * w + i] > 0.0f || r.data()[2 * h * w + i] > 0.0f)
            px[i] = 1.0f;
    return out;
}

Tensor make_mask_sequence(const SkeletonSequence& seq, std::int64_t h, std::int64_t w) {
    seq.validate();
    std::int64_t f = static_cast<std::int64_t>(seq.frames.size());
    Tensor out = Tensor::zeros({f, 1, h, w});
    std::span<float> dst = out.raw();
    for (std::int64_t i = 0; i < f; ++i) {
        Tensor m = make_mask(seq.frames[i], h, w);
        std::copy(m.data().begin(), m.data().end(), dst.begin() + i * h * w);
    }
    return out;
}

MotionProgram motion_from_name(const std::string& name) {
    if (name == "stand") return MotionProgram::stand;
    if (name == "shift_right") return MotionProgram::shift_right;
    if (name == "walk") return MotionProgram::walk;
    if (name == "wave") return MotionProgram::wave;
    throw ConfigError("unknown motion program: " + name);
}

const char* motion_name(MotionProgram m) {
    switch (m) {
        case MotionProgram::stand: return "stand";
        case MotionProgram::shift_right: return "shift_right";
        case MotionProgram::walk: return "walk";
        case MotionProgram::wave: return "wave";
    }
    return "?";
}

namespace {

// Canonical standing pose, unit height, origin at figure center; x right,
// y down.
const double kBasePose[13][2] = {
    {0.00, -0.42},                    // head
    {0.00, -0.30},                    // neck
    {-0.14, -0.26}, {0.14, -0.26},    // shoulders
    {-0.20, -0.10}, {0.20, -0.10},    // elbows
    {-0.23, 0.04},  {0.23, 0.04},     // wrists
    {0.00, 0.04},                     // pelvis
    {-0.08, 0.26},  {0.08, 0.26},     // knees
    {-0.10, 0.46},  {0.10, 0.46}};    // ankles

Skeleton pose_at(const SceneSpec& spec, std::int64_t t) {
    double fh = spec.figure_height;
    double phase = 2.0 * 3.14159265358979323846 * static_cast<double>(t) /
                   static_cast<double>(std::max<std::int64_t>(spec.frames, 1));
    double cx = spec.start_x, cy = spec.start_y;
    Skeleton s;
    s.joints.resize(13);
    for (int j = 0; j < 13; ++j) {
        s.joints[j].x = cx + kBasePose[j][0] * fh;
        s.joints[j].y = cy + kBasePose[j][1] * fh;
    }
    auto shift_all = [&](double dx) {
        for (Joint& p : s.joints) p.x += dx;
    };
    switch (spec.motion) {
        case MotionProgram::stand:
            break;
        case MotionProgram::shift_right:
            shift_all(0.08 * fh * static_cast<double>(t));
            break;
        case MotionProgram::walk: {
            shift_all(0.08 * fh * static_cast<double>(t));
            double swing = 0.06 * fh * std::sin(2.0 * phase);
            s.joints[9].x += swing;   // l_knee
            s.joints[11].x += 1.5 * swing;
            s.joints[10].x -= swing;  // r_knee
            s.joints[12].x -= 1.5 * swing;
            s.joints[6].x -= swing;   // arms counter-swing
            s.joints[7].x += swing;
            break;
        }
        case MotionProgram::wave: {
            // right forearm sweeps about the elbow, hand above shoulder
            double ang = -2.0 + 0.8 * std::sin(2.0 * phase);
            double len = 0.16 * fh;
            s.joints[5].y -= 0.08 * fh;  // raised elbow
            s.joints[7].x = s.joints[5].x + len * std::cos(ang);
            s.joints[7].y = s.joints[5].y + len * std::sin(ang);
            break;
        }
    }
    return s;
}

}  // namespace

SceneData gen_scene(const SceneSpec& spec) {
    if (spec.frames < 1 || spec.height < 4 || spec.width < 4 || spec.figure_height <= 0.0)
        throw ConfigError("gen_scene: invalid spec");
    SceneData out;
    out.skeletons.height_px = spec.height;
    out.skeletons.width_px = spec.width;
    for (std::int64_t t = 0; t < spec.frames; ++t) {
        Skeleton s = pose_at(spec, t);
        for (const Joint& p : s.joints)
            if (p.x < 0.0 || p.y < 0.0 || p.x > static_cast<double>(spec.width - 1) ||
                p.y > static_cast<double>(spec.height - 1))
                throw ConfigError("gen_scene: figure leaves the frame at t=" + std::to_string(t));
        out.skeletons.frames.push_back(std::move(s));
    }

    // smooth seeded background, kept darker than any figure color
    CounterRng rng(spec.seed);
    double kx[3], ky[3], ph[3], base[3], amp[3];
    for (int c = 0; c < 3; ++c) {
        kx[c] = 1.0 + rng.below(2);
        ky[c] = 1.0 + rng.below(2);
        ph[c] = rng.uniform() * 6.2831853;
        base[c] = 0.18 + 0.08 * rng.uniform();
        amp[c] = 0.05 + 0.05 * rng.uniform();
    }

    std::int64_t h = spec.height, w = spec.width, f = spec.frames;
    out.frames = Tensor::zeros({f, 3, h, w});
    out.masks = make_mask_sequence(out.skeletons, h, w);
    Tensor raster = rasterize_sequence(out.skeletons, h, w);
    std::span<float> fr = out.frames.raw();
    std::span<const float> mk = out.masks.data();
    std::span<const float> ra = raster.data();
    const float body[3] = {0.85f, 0.75f, 0.35f};  // dilation ring not covered by the raster
    for (std::int64_t t = 0; t < f; ++t)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                std::int64_t mi = t * h * w + y * w + x;
                for (int c = 0; c < 3; ++c) {
                    std::int64_t pi = (t * 3 + c) * h * w + y * w + x;
                    float v;
                    if (mk[mi] > 0.5f) {
                        bool drawn = ra[(t * 3 + 0) * h * w + y * w + x] > 0.0f ||
                                     ra[(t * 3 + 1) * h * w + y * w + x] > 0.0f ||
                                     ra[(t * 3 + 2) * h * w + y * w + x] > 0.0f;
                        v = drawn ? ra[pi] : body[c];
                    } else {
                        double u = std::sin(6.2831853 * (kx[c] * x / static_cast<double>(w) +
                                                         ky[c] * y / static_cast<double>(h)) +
                                            ph[c]);
                        v = static_cast<float>(base[c] + amp[c] * u);
                    }
                    fr[pi] = v;
                }
            }

    switch (spec.motion) {
        case MotionProgram::stand: out.prompt = "a stick figure standing"; break;
        case MotionProgram::shift_right: out.prompt = "a stick figure shifting right"; break;
        case MotionProgram::walk: out.prompt = "a stick figure walking right"; break;
        case MotionProgram::wave: out.prompt = "a stick figure waving"; break;
    }
    return out;
}

void save_skeletons(const SkeletonSequence& seq, const std::string& path) {
    seq.validate();
    nlohmann::json j;
    j["image_size"] = {seq.height_px, seq.width_px};
    j["joint_names"] = joint_names();
    nlohmann::json bones = nlohmann::json::array();
    for (const auto& b : bone_edges()) bones.push_back({b.first, b.second});
    j["bones"] = bones;
    nlohmann::json frames = nlohmann::json::array();
    for (const Skeleton& s : seq.frames) {
        nlohmann::json fr = nlohmann::json::array();
        for (const Joint& p : s.joints) fr.push_back({p.x, p.y, p.visible});
        frames.push_back(fr);
    }
    j["frames"] = frames;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write skeleton file: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + path);
}

SkeletonSequence load_skeletons(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read skeleton file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptDataError("skeleton file " + path + ": " + e.what());
    }
    try {
        SkeletonSequence seq;
        seq.height_px = j.at("image_size").at(0).get<std::int64_t>();
        seq.width_px = j.at("image_size").at(1).get<std::int64_t>();
        auto names = j.at("joint_names").get<std::vector<std::string>>();
        if (names != joint_names())
            throw CorruptDataError("skeleton file " + path + ": unexpected joint names");
        auto bones = j.at("bones");
        if (bones.size() != bone_edges().size())
            throw CorruptDataError("skeleton file " + path + ": unexpected bone count");
        for (std::size_t b = 0; b < bones.size(); ++b)
            if (bones[b].at(0).get<int>() != bone_edges()[b].first ||
                bones[b].at(1).get<int>() != bone_edges()[b].second)
                throw CorruptDataError("skeleton file " + path + ": unexpected bone topology");
        for (const auto& fr : j.at("frames")) {
            Skeleton s;
            for (const auto& jp : fr) {
                if (jp.size() != 3)
                    throw CorruptDataError("skeleton file " + path + ": joint entry is not [x,y,visible]");
                Joint p;
                p.x = jp.at(0).get<double>();
                p.y = jp.at(1).get<double>();
                p.visible = jp.at(2).get<bool>();
                s.joints.push_back(p);
            }
            if (s.joints.size() != names.size())
                throw CorruptDataError("skeleton file " + path + ": frame joint count mismatch");
            seq.frames.push_back(std::move(s));
        }
        seq.validate();
        return seq;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptDataError("skeleton file " + path + ": " + e.what());
    }
}

}  // namespace vmedit
