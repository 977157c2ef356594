#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vmedit/adapter.hpp"
#include "vmedit/attention.hpp"
#include "vmedit/params.hpp"

namespace vmedit {

struct UNetConfig {
    std::int64_t base_channels = 32;
    std::vector<std::int64_t> channel_mult = {1, 2, 4};
    std::int64_t frames = 8;
    std::int64_t height = 16, width = 16;
    std::int64_t latent_channels = 3;
    std::int64_t prompt_width = 32;
    int heads = 4;
    std::int64_t norm_groups = 8;
    bool rca_literal_eq9 = false;
    // Fixed multiplier on the trainable residual branches (inter-frame,
    // temporal, control injection). Out-projections are initialized 1/gain
    // smaller so the initial function is unchanged, but every optimizer step
    // then moves the network output gain times further. Fine-tuning freezes
    // the conv trunk, so at the small pinned learning rate the trainable
    // branches need this leverage to move the output at all.
    float branch_gain = 128.0f;

    std::int64_t levels() const { return static_cast<std::int64_t>(channel_mult.size()); }
    std::int64_t time_width() const { return base_channels * 4; }
    void validate() const;  // H, W divisible by 2^(levels-1); F >= 1
};

// Closed toy vocabulary; whitespace tokenizer; unknown words share row 0.
class PromptEmbedding {
public:
    PromptEmbedding(ParamRegistry& reg, std::vector<std::string> vocab, std::int64_t width);

    std::vector<std::int64_t> tokenize(const std::string& prompt) const;
    Tensor embed(const std::string& prompt) const;  // [M, width], M >= 1

    const std::vector<std::string>& vocab() const { return vocab_; }

private:
    std::vector<std::string> vocab_;
    Tensor table_;  // [vocab+1, width], row 0 reserved for unknowns
};

std::vector<std::string> default_vocab();

struct ResBlock {
    Tensor gn1_g, gn1_b, conv1_w, conv1_b, time_w;
    Tensor gn2_g, gn2_b, conv2_w, conv2_b;
    Tensor skip_w;  // 1x1, only when channel count changes
    std::int64_t cin = 0, cout = 0, groups = 1;

    static ResBlock create(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                           std::int64_t cout, std::int64_t time_width, std::int64_t norm_groups);
    Tensor apply(const Tensor& x, const Tensor& t_embed) const;
};

// Pre-norm residual stack: inter-frame attention, prompt cross attention,
// temporal attention, feed-forward. Optionally hosts one adapter site,
// applied to the token stream before the attention stack.
struct TransformerBlock {
    Tensor ln1_g, ln1_b;
    AttentionWeights rca;
    Tensor ln2_g, ln2_b;
    AttentionWeights cross;
    Tensor ln3_g, ln3_b;
    AttentionWeights temp;
    Tensor pos;  // [F, d]
    Tensor ln4_g, ln4_b, ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor tgate_rca, tgate_temp;  // [time_width, d], zero at init
    int site = -1;
    bool literal_eq9 = false;
    float gain = 1.0f;

    static TransformerBlock create(ParamRegistry& reg, const std::string& name, std::int64_t d,
                                   std::int64_t d_ctx, std::int64_t frames, int heads, int site,
                                   bool literal_eq9, float gain = 1.0f, std::int64_t time_width = 0);
    // te: time embedding [1, time_width]; pass an empty tensor to run ungated.
    Tensor apply(const Tensor& x, const Tensor& prompt_ctx, AdapterHook* hook,
                 const Tensor& te = Tensor()) const;
};

// Noise-prediction U-Net over latent clips [F, C, H, W]. Adapter sites sit
// on each encoder level's transformer block and the bottleneck's, outermost
// first, so a hook must expose levels() sites (or 0 for passthrough).
class Backbone {
public:
    Backbone(ParamRegistry& reg, UNetConfig cfg);

    Tensor forward(const Tensor& z, int t, const Tensor& prompt_ctx, AdapterHook* hook) const;

    const UNetConfig& config() const { return cfg_; }

private:
    UNetConfig cfg_;
    Tensor stem_w, stem_b;
    Tensor tmlp_w1, tmlp_b1, tmlp_w2, tmlp_b2;
    std::vector<ResBlock> enc_res;
    std::vector<TransformerBlock> enc_tf;
    std::vector<Tensor> down_w, down_b;
    ResBlock mid_res1, mid_res2;
    TransformerBlock mid_tf;
    std::vector<Tensor> up_w, up_b;
    std::vector<ResBlock> dec_res;
    std::vector<TransformerBlock> dec_tf;
    Tensor out_gn_g, out_gn_b, out_w, out_b;
};

AdapterConfig derive_adapter_config(const UNetConfig& u);

struct ModelConfig {
    UNetConfig unet;
    std::vector<std::string> vocab = default_vocab();
    std::uint64_t init_seed = 7;
    bool use_adapter = true;
};

// Registry + prompt table + U-Net + control branch, wired together.
class EditModel {
public:
    explicit EditModel(ModelConfig cfg);

    // raster == nullptr runs the plain unconditioned-on-skeleton model.
    Tensor eps_predict(const Tensor& z, int t, const std::string& prompt, const Tensor* raster);

    ParamRegistry& registry() { return reg_; }
    MotionAdapter* adapter() { return adapter_.get(); }
    PromptEmbedding& prompt_embedding() { return *prompt_; }
    Backbone& backbone() { return *backbone_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    std::unique_ptr<PromptEmbedding> prompt_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<MotionAdapter> adapter_;
};

}  // namespace vmedit
