#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vmedit/backbone.hpp"
#include "vmedit/codec.hpp"
#include "vmedit/schedule.hpp"

namespace vmedit {

struct TrainConfig {
    float lr = 3e-5f;
    int iters_stage1 = 300;
    int iters_stage2 = 300;
    std::uint64_t seed = 123;
    float beta1 = 0.9f, beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float clip_norm = 1.0f;
    bool train_control = true;  // control encoder learns in both stages

    void validate() const;
    std::set<ParamGroup> stage1_groups() const;
    std::set<ParamGroup> stage2_groups() const;
};

// Scales trainable gradients in place so their global L2 norm is at most
// `max_norm`; returns the pre-clip norm. NaN gradients abort, naming the
// offending tensor.
double clip_gradients(ParamRegistry& reg, float max_norm);

class Adam {
public:
    Adam(float lr, float beta1, float beta2, float eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    // One update over every trainable parameter carrying a gradient.
    // Clips by global norm first; NaN gradients abort naming the tensor.
    void step(ParamRegistry& reg, float clip_norm);

    struct Slot {
        std::vector<float> m, v;
    };
    std::int64_t t() const { return t_; }
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_t(std::int64_t t) { t_ = t; }

private:
    float lr_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

// One clip of supervision: pixel frames in [0,1], per-frame binary
// foreground mask, skeleton raster at latent resolution, prompt text.
struct TrainSample {
    Tensor frames;  // [F,3,Hp,Wp]
    Tensor mask;    // [F,1,Hp,Wp], values in {0,1}
    Tensor raster;  // [F,3,Hl,Wl]
    std::string prompt;
};

Tensor apply_mask(const Tensor& frames, const Tensor& mask);

// Two-stage fine-tuning driver. Stage 1 trains temporal+adapter groups on
// the background-masked clip, stage 2 trains inter-frame spatial attention
// +adapter on the full clip.
class Trainer {
public:
    Trainer(EditModel& model, NoiseSchedule sched, Codec codec, TrainConfig cfg);

    float stage1_step(const TrainSample& s);
    float stage2_step(const TrainSample& s);

    // Runs from the current (stage, step) position to the end of stage 2,
    // appending one "stage,step,loss" line per step. A non-negative
    // `max_steps` stops after that many steps (for interrupt/resume runs).
    void train(const TrainSample& s, std::ostream& log, int max_steps = -1);

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    int stage() const { return stage_; }
    int step() const { return step_; }
    Adam& optimizer() { return opt_; }
    CounterRng& rng() { return rng_; }

private:
    float run_step(const TrainSample& s, bool masked);

    EditModel& model_;
    NoiseSchedule sched_;
    Codec codec_;
    TrainConfig cfg_;
    Adam opt_;
    CounterRng rng_;
    int stage_ = 1;
    int step_ = 0;  // completed steps within the current stage
};

}  // namespace vmedit
