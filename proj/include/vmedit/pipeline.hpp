#pragma once

#include <map>
#include <string>
#include <vector>

#include "vmedit/backbone.hpp"
#include "vmedit/codec.hpp"
#include "vmedit/schedule.hpp"
#include "vmedit/skeleton.hpp"
#include "vmedit/training.hpp"

namespace vmedit {

// ---- frame I/O (binary PPM/PGM, 8-bit) ----

Tensor read_ppm(const std::string& path);                     // [3,H,W] in [0,1]
void write_ppm(const std::string& path, const Tensor& img);   // clamps, rounds to 8-bit
Tensor read_pgm(const std::string& path);                     // [1,H,W] in [0,1]
void write_pgm(const std::string& path, const Tensor& img);

// Clip directory convention: frame_000.ppm, frame_001.ppm, ...
Tensor read_clip(const std::string& dir);                     // [F,3,H,W]
void write_clip(const std::string& dir, const Tensor& clip);
std::string frame_filename(int index, const char* ext = "ppm");

Tensor repeat_image_to_clip(const Tensor& image, std::int64_t n);  // [3,H,W] -> [N,3,H,W]

// ---- reconstruction metrics ----

struct FrameMetrics {
    double l1 = 0.0;    // mean abs diff on the [0,1] scale
    double psnr = 0.0;  // dB on the 8-bit scale; +inf when images match
    double ssim = 0.0;
};

struct MetricsReport {
    std::vector<FrameMetrics> frames;
    FrameMetrics mean;
};

double metric_l1(const Tensor& a, const Tensor& b);
double metric_psnr(const Tensor& a, const Tensor& b);
// Uniform non-overlapping 8x8 windows per channel, population moments,
// C1=(0.01*255)^2, C2=(0.03*255)^2 on the 8-bit scale.
double metric_ssim(const Tensor& a, const Tensor& b);

MetricsReport compute_metrics(const Tensor& clip_a, const Tensor& clip_b);
// One "frame_index,l1,psnr,ssim" line per frame plus a "mean,..." footer.
std::string format_report(const MetricsReport& r);

// ---- configuration (flat key=value with [section] headers) ----

class KvConfig {
public:
    static KvConfig parse(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const;  // key is "section.name"
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_num(const std::string& key, double fallback) const;
    void set(const std::string& key, const std::string& value);

    std::string serialize() const;  // grouped by section, sorted keys

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Everything a run needs; every field has a default and round-trips
// through KvConfig so the effective settings can be echoed to disk.
struct RunConfig {
    SceneSpec scene;
    UNetConfig unet;
    std::uint64_t init_seed = 7;
    CodecKind codec = CodecKind::identity;
    int schedule_T = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    TrainConfig train;
    int ddim_steps = 50;

    static RunConfig from_kv(const KvConfig& kv);
    KvConfig to_kv() const;

    ModelConfig model_config() const;
    NoiseSchedule schedule() const;
    Codec make_codec() const { return Codec{codec}; }
    void validate() const;  // scene and unet geometry must agree via the codec
};

// ---- the edit pipeline ----

struct EditRequest {
    std::string source;               // clip directory or single .ppm image
    std::string source_skeletons;     // skeleton file; required when apply_offset
    std::string reference_skeletons;  // skeleton file driving the edit
    std::string prompt;
    std::string invert_prompt;        // empty: reuse `prompt` for inversion
    int steps = 50;
    bool apply_offset = true;
};

struct EditResult {
    Tensor frames;                  // decoded [F,3,H,W] in [0,1]
    SkeletonSequence conditioning;  // skeletons the sampler was conditioned on
    Tensor raster;                  // [F,3,Hl,Wl] control map fed to the adapter
};

// load -> (optional) skeleton offset -> encode -> DDIM inversion ->
// conditioned sampling -> decode. Deterministic per (model weights, request).
EditResult run_edit(EditModel& model, const NoiseSchedule& sched, const Codec& codec,
                    const EditRequest& req);

// Weights-only checkpoint read for inference (optimizer records skipped).
void load_model_weights(EditModel& model, const std::string& path);

}  // namespace vmedit
