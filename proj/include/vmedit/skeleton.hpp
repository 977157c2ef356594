#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vmedit/tensor.hpp"

namespace vmedit {

struct Joint {
    double x = 0.0, y = 0.0;  // pixels; x = column, y = row
    bool visible = true;
};

// 13 named joints (hips merged into a single pelvis), 12 bones forming a tree.
const std::vector<std::string>& joint_names();
const std::vector<std::pair<int, int>>& bone_edges();

struct Skeleton {
    std::vector<Joint> joints;  // joint_names() order
};

struct SkeletonSequence {
    std::vector<Skeleton> frames;
    std::int64_t height_px = 0, width_px = 0;

    std::size_t frame_count() const { return frames.size(); }
    void validate() const;  // constant joint count, finite coordinates
};

// Sequence-global statistics over visible joints. The bounding-box mode is
// the default; joint-mean center is available for sensitivity checks.
enum class CenterMode { bbox_midpoint, joint_mean };

std::pair<double, double> get_center(const SkeletonSequence& seq,
                                     CenterMode mode = CenterMode::bbox_midpoint);
// (height, width) of the global bounding box.
std::pair<double, double> get_hw(const SkeletonSequence& seq);

// Remaps every reference joint so the output sequence's global center and
// extents coincide with the source's, preserving the reference motion.
SkeletonSequence offset_skeletons(const SkeletonSequence& source, const SkeletonSequence& reference,
                                  CenterMode mode = CenterMode::bbox_midpoint);

// Rescale coordinates onto a different canvas (used to rasterize at latent
// resolution).
SkeletonSequence scale_sequence(const SkeletonSequence& seq, std::int64_t out_h, std::int64_t out_w);

// Color control map: bones as 3 px solid segments, one fixed palette color
// per bone; visible joints as radius-2 discs; black background.
Tensor rasterize(const Skeleton& skel, std::int64_t h, std::int64_t w);
Tensor rasterize_sequence(const SkeletonSequence& seq, std::int64_t h, std::int64_t w);

// Binary foreground: union of radius-2 capsules around the bones and a
// radius-3 head disc, widened to cover every drawn stroke pixel, so the
// mask is always a superset of the raster's nonzero support.
Tensor make_mask(const Skeleton& skel, std::int64_t h, std::int64_t w);
Tensor make_mask_sequence(const SkeletonSequence& seq, std::int64_t h, std::int64_t w);

enum class MotionProgram { stand, shift_right, walk, wave };
MotionProgram motion_from_name(const std::string& name);
const char* motion_name(MotionProgram m);

struct SceneSpec {
    std::int64_t frames = 8;
    std::int64_t height = 16, width = 16;
    std::uint64_t seed = 1;
    double figure_height = 12.0;  // pixels
    double start_x = 5.0, start_y = 8.0;  // figure center
    MotionProgram motion = MotionProgram::walk;
};

struct SceneData {
    Tensor frames;  // [F,3,H,W] in [0,1]
    Tensor masks;   // [F,1,H,W] in {0,1}
    SkeletonSequence skeletons;
    std::string prompt;
};

// Seeded low-frequency background plus a stick figure following the motion
// program; masks and skeletons aligned with the drawn figure.
SceneData gen_scene(const SceneSpec& spec);

// Skeleton sequence file round trip (JSON schema with image_size,
// joint_names, bones, frames).
void save_skeletons(const SkeletonSequence& seq, const std::string& path);
SkeletonSequence load_skeletons(const std::string& path);

}  // namespace vmedit
