#include "vmedit/backbone.hpp"

#include <algorithm>
#include <sstream>

namespace vmedit {

void UNetConfig::validate() const {
    if (frames < 1) throw ConfigError("unet: frames must be >= 1");
    if (channel_mult.empty()) throw ConfigError("unet: empty channel multipliers");
    if (!(branch_gain > 0.0f)) throw ConfigError("unet: branch gain must be positive");
    std::int64_t div = std::int64_t{1} << (levels() - 1);
    if (height % div != 0 || width % div != 0)
        throw ConfigError("unet: latent " + std::to_string(height) + "x" + std::to_string(width) +
                          " not divisible by 2^" + std::to_string(levels() - 1));
    for (std::int64_t m : channel_mult)
        if (base_channels * m % heads != 0 || base_channels * m % norm_groups != 0)
            throw ConfigError("unet: level width not divisible by heads/norm groups");
}

std::vector<std::string> default_vocab() {
    return {"a", "stick", "figure", "on", "textured", "background", "walking", "waving",
            "shifting", "standing", "left", "right"};
}

PromptEmbedding::PromptEmbedding(ParamRegistry& reg, std::vector<std::string> vocab,
                                 std::int64_t width)
    : vocab_(std::move(vocab)) {
    std::int64_t rows = static_cast<std::int64_t>(vocab_.size()) + 1;
    table_ = reg.create_normal("prompt.table", ParamGroup::embed, {rows, width}, 0.5f);
}

std::vector<std::int64_t> PromptEmbedding::tokenize(const std::string& prompt) const {
    std::vector<std::int64_t> ids;
    std::istringstream in(prompt);
    std::string word;
    while (in >> word) {
        std::int64_t id = 0;  // unknown
        for (std::size_t i = 0; i < vocab_.size(); ++i)
            if (vocab_[i] == word) {
                id = static_cast<std::int64_t>(i) + 1;
                break;
            }
        ids.push_back(id);
    }
    if (ids.empty()) ids.push_back(0);
    return ids;
}

Tensor PromptEmbedding::embed(const std::string& prompt) const {
    return embedding(table_, tokenize(prompt));
}

ResBlock ResBlock::create(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                          std::int64_t cout, std::int64_t time_width, std::int64_t norm_groups) {
    ParamRegistry::Scope scope(reg, name);
    ResBlock b;
    b.cin = cin;
    b.cout = cout;
    b.groups = norm_groups;
    b.gn1_g = reg.create_const("gn1.g", ParamGroup::conv, {cin}, 1.0f);
    b.gn1_b = reg.create_const("gn1.b", ParamGroup::conv, {cin}, 0.0f);
    b.conv1_w = reg.create_xavier("conv1.w", ParamGroup::conv, {cout, cin, 3, 3}, cin * 9, cout * 9);
    b.conv1_b = reg.create_const("conv1.b", ParamGroup::conv, {cout}, 0.0f);
    b.time_w = reg.create_xavier("time.w", ParamGroup::conv, {time_width, cout}, time_width, cout);
    b.gn2_g = reg.create_const("gn2.g", ParamGroup::conv, {cout}, 1.0f);
    b.gn2_b = reg.create_const("gn2.b", ParamGroup::conv, {cout}, 0.0f);
    b.conv2_w = reg.create_xavier("conv2.w", ParamGroup::conv, {cout, cout, 3, 3}, cout * 9, cout * 9);
    b.conv2_b = reg.create_const("conv2.b", ParamGroup::conv, {cout}, 0.0f);
    if (cin != cout)
        b.skip_w = reg.create_xavier("skip.w", ParamGroup::conv, {cout, cin, 1, 1}, cin, cout);
    return b;
}

Tensor ResBlock::apply(const Tensor& x, const Tensor& t_embed) const {
    Tensor h = conv2d(silu(group_norm(x, static_cast<int>(groups), gn1_g, gn1_b)), conv1_w, conv1_b,
                      1, 1);
    Tensor tb = reshape(linear(t_embed, time_w, Tensor()), {cout});
    h = add_channel_bias(h, tb);
    h = conv2d(silu(group_norm(h, static_cast<int>(groups), gn2_g, gn2_b)), conv2_w, conv2_b, 1, 1);
    Tensor skip = (cin == cout) ? x : conv2d(x, skip_w, Tensor(), 1, 0);
    return add(skip, h);
}

TransformerBlock TransformerBlock::create(ParamRegistry& reg, const std::string& name,
                                          std::int64_t d, std::int64_t d_ctx, std::int64_t frames,
                                          int heads, int site, bool literal_eq9, float gain,
                                          std::int64_t time_width) {
    ParamRegistry::Scope scope(reg, name);
    TransformerBlock b;
    b.site = site;
    b.literal_eq9 = literal_eq9;
    b.gain = gain;
    b.ln1_g = reg.create_const("ln1.g", ParamGroup::spatial_rca, {d}, 1.0f);
    b.ln1_b = reg.create_const("ln1.b", ParamGroup::spatial_rca, {d}, 0.0f);
    b.rca = AttentionWeights::create(reg, "rca", ParamGroup::spatial_rca, d, d, heads);
    b.ln2_g = reg.create_const("ln2.g", ParamGroup::cross, {d}, 1.0f);
    b.ln2_b = reg.create_const("ln2.b", ParamGroup::cross, {d}, 0.0f);
    b.cross = AttentionWeights::create(reg, "cross", ParamGroup::cross, d, d_ctx, heads);
    b.ln3_g = reg.create_const("ln3.g", ParamGroup::temporal, {d}, 1.0f);
    b.ln3_b = reg.create_const("ln3.b", ParamGroup::temporal, {d}, 0.0f);
    b.temp = AttentionWeights::create(reg, "temporal", ParamGroup::temporal, d, d, heads);
    b.pos = reg.create_const("temporal.pos", ParamGroup::temporal, {frames, d}, 0.0f);
    b.ln4_g = reg.create_const("ln4.g", ParamGroup::conv, {d}, 1.0f);
    b.ln4_b = reg.create_const("ln4.b", ParamGroup::conv, {d}, 0.0f);
    b.ff_w1 = reg.create_xavier("ff.w1", ParamGroup::conv, {d, 4 * d}, d, 4 * d);
    b.ff_b1 = reg.create_const("ff.b1", ParamGroup::conv, {4 * d}, 0.0f);
    b.ff_w2 = reg.create_xavier("ff.w2", ParamGroup::conv, {4 * d, d}, 4 * d, d);
    b.ff_b2 = reg.create_const("ff.b2", ParamGroup::conv, {d}, 0.0f);
    if (time_width > 0) {
        // zero-init timestep gates: each attention branch gets a per-channel
        // multiplier 1 + W·te so fine-tuning can vary branch strength with
        // the noise level without touching the (frozen) conv time paths
        b.tgate_rca = reg.create_const("tgate.rca", ParamGroup::spatial_rca, {time_width, d}, 0.0f);
        b.tgate_temp = reg.create_const("tgate.temporal", ParamGroup::temporal, {time_width, d},
                                        0.0f);
    }
    // compensate the branch gain so the initial function is unchanged
    for (float& v : b.rca.wo.raw()) v /= gain;
    for (float& v : b.temp.wo.raw()) v /= gain;
    // Tied query/key init makes self-type attention logits a Gram matrix,
    // hence diagonal-dominant: each token starts out attending mostly to
    // itself (or to its most similar neighbour), and fine-tuning only has to
    // learn the value path instead of first sharpening the softmax.
    std::copy(b.temp.wq.data().begin(), b.temp.wq.data().end(), b.temp.wk.raw().begin());
    std::copy(b.rca.wq.data().begin(), b.rca.wq.data().end(), b.rca.wk.raw().begin());
    return b;
}

namespace {

// x [F,N,d] * g [1,d], g broadcast over frames and positions
Tensor mul_by_channel(const Tensor& x, const Tensor& g) {
    Tensor ones = Tensor::full({x.dim(0), x.dim(1), 1}, 1.0f);
    return mul(x, matmul(ones, g));
}

constexpr float kGateMult = 4.0f;

}  // namespace

Tensor TransformerBlock::apply(const Tensor& x, const Tensor& prompt_ctx, AdapterHook* hook,
                               const Tensor& te) const {
    std::int64_t h = x.dim(2), w = x.dim(3);
    bool gated = te.defined() && tgate_rca.defined();
    FrameTokens t{chw_to_tokens(x)};
    if (hook && site >= 0 && hook->sites() > 0) t = hook->apply(site, t);
    Tensor rca_out = scale(recurrent_causal_attention({layer_norm(t.data, ln1_g, ln1_b)}, rca,
                                                      literal_eq9)
                               .data,
                           gain);
    if (gated)
        rca_out = mul_by_channel(rca_out, add_scalar(scale(linear(te, tgate_rca, Tensor()),
                                                           kGateMult),
                                                     1.0f));
    t.data = add(t.data, rca_out);
    t.data = add(t.data, cross_attention({layer_norm(t.data, ln2_g, ln2_b)}, prompt_ctx, cross).data);
    Tensor tmp_out = scale(temporal_attention({layer_norm(t.data, ln3_g, ln3_b)}, temp, pos).data,
                           gain);
    if (gated)
        tmp_out = mul_by_channel(tmp_out, add_scalar(scale(linear(te, tgate_temp, Tensor()),
                                                           kGateMult),
                                                     1.0f));
    t.data = add(t.data, tmp_out);
    Tensor ff = linear(silu(linear(layer_norm(t.data, ln4_g, ln4_b), ff_w1, ff_b1)), ff_w2, ff_b2);
    t.data = add(t.data, ff);
    return t.to_chw(h, w);
}

Backbone::Backbone(ParamRegistry& reg, UNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    ParamRegistry::Scope scope(reg, "unet");
    std::int64_t tw = cfg_.time_width();
    std::int64_t L = cfg_.levels();
    auto width = [&](std::int64_t level) { return cfg_.base_channels * cfg_.channel_mult[level]; };

    stem_w = reg.create_xavier("stem.w", ParamGroup::conv, {width(0), cfg_.latent_channels, 3, 3},
                               cfg_.latent_channels * 9, width(0) * 9);
    stem_b = reg.create_const("stem.b", ParamGroup::conv, {width(0)}, 0.0f);
    tmlp_w1 = reg.create_xavier("time.w1", ParamGroup::embed, {tw, tw}, tw, tw);
    tmlp_b1 = reg.create_const("time.b1", ParamGroup::embed, {tw}, 0.0f);
    tmlp_w2 = reg.create_xavier("time.w2", ParamGroup::embed, {tw, tw}, tw, tw);
    tmlp_b2 = reg.create_const("time.b2", ParamGroup::embed, {tw}, 0.0f);

    for (std::int64_t i = 0; i + 1 < L; ++i) {
        std::string tag = "enc" + std::to_string(i);
        enc_res.push_back(ResBlock::create(reg, tag + ".res", width(i), width(i), tw,
                                           cfg_.norm_groups));
        enc_tf.push_back(TransformerBlock::create(reg, tag + ".tf", width(i), cfg_.prompt_width,
                                                  cfg_.frames, cfg_.heads, static_cast<int>(i),
                                                  cfg_.rca_literal_eq9, cfg_.branch_gain, tw));
        down_w.push_back(reg.create_xavier(tag + ".down.w", ParamGroup::conv,
                                           {width(i + 1), width(i), 3, 3}, width(i) * 9,
                                           width(i + 1) * 9));
        down_b.push_back(reg.create_const(tag + ".down.b", ParamGroup::conv, {width(i + 1)}, 0.0f));
    }

    mid_res1 = ResBlock::create(reg, "mid.res1", width(L - 1), width(L - 1), tw, cfg_.norm_groups);
    mid_tf = TransformerBlock::create(reg, "mid.tf", width(L - 1), cfg_.prompt_width, cfg_.frames,
                                      cfg_.heads, static_cast<int>(L - 1), cfg_.rca_literal_eq9,
                                      cfg_.branch_gain, tw);
    mid_res2 = ResBlock::create(reg, "mid.res2", width(L - 1), width(L - 1), tw, cfg_.norm_groups);

    for (std::int64_t i = L - 2; i >= 0; --i) {
        std::string tag = "dec" + std::to_string(i);
        up_w.push_back(reg.create_xavier(tag + ".up.w", ParamGroup::conv,
                                         {width(i), width(i + 1), 3, 3}, width(i + 1) * 9,
                                         width(i) * 9));
        up_b.push_back(reg.create_const(tag + ".up.b", ParamGroup::conv, {width(i)}, 0.0f));
        dec_res.push_back(ResBlock::create(reg, tag + ".res", 2 * width(i), width(i), tw,
                                           cfg_.norm_groups));
        dec_tf.push_back(TransformerBlock::create(reg, tag + ".tf", width(i), cfg_.prompt_width,
                                                  cfg_.frames, cfg_.heads, -1,
                                                  cfg_.rca_literal_eq9, cfg_.branch_gain, tw));
    }

    out_gn_g = reg.create_const("out.gn.g", ParamGroup::conv, {width(0)}, 1.0f);
    out_gn_b = reg.create_const("out.gn.b", ParamGroup::conv, {width(0)}, 0.0f);
    // The conv group is frozen in both fine-tuning stages, so the head must
    // neither be zero (blocks all learning) nor tiny: the group norm above it
    // pins the trunk's scale, so the head weights alone set the reachable
    // output magnitude, and predicting unit-variance noise needs ~0.1 here.
    out_w = reg.create_normal("out.w", ParamGroup::conv, {cfg_.latent_channels, width(0), 3, 3},
                              0.1f);
    out_b = reg.create_const("out.b", ParamGroup::conv, {cfg_.latent_channels}, 0.0f);
}

Tensor Backbone::forward(const Tensor& z, int t, const Tensor& prompt_ctx, AdapterHook* hook) const {
    if (z.rank() != 4 || z.dim(0) != cfg_.frames || z.dim(1) != cfg_.latent_channels ||
        z.dim(2) != cfg_.height || z.dim(3) != cfg_.width)
        throw ShapeError("backbone: latent " + shape_str(z.shape()) + " does not match config");
    if (hook && hook->sites() != 0 && hook->sites() != cfg_.levels())
        throw ContractError("backbone: adapter exposes " + std::to_string(hook->sites()) +
                            " sites, config has " + std::to_string(cfg_.levels()));

    Tensor te = reshape(sinusoidal_timestep(t, cfg_.time_width()), {1, cfg_.time_width()});
    te = linear(silu(linear(te, tmlp_w1, tmlp_b1)), tmlp_w2, tmlp_b2);

    Tensor h = conv2d(z, stem_w, stem_b, 1, 1);
    std::vector<Tensor> skips;
    for (std::size_t i = 0; i < enc_res.size(); ++i) {
        h = enc_res[i].apply(h, te);
        h = enc_tf[i].apply(h, prompt_ctx, hook, te);
        skips.push_back(h);
        h = conv2d(h, down_w[i], down_b[i], 2, 1);
    }
    h = mid_res1.apply(h, te);
    h = mid_tf.apply(h, prompt_ctx, hook, te);
    h = mid_res2.apply(h, te);
    for (std::size_t i = 0; i < dec_res.size(); ++i) {
        h = conv2d(upsample_nearest2(h), up_w[i], up_b[i], 1, 1);
        h = concat(h, skips[skips.size() - 1 - i], 1);
        h = dec_res[i].apply(h, te);
        h = dec_tf[i].apply(h, prompt_ctx, nullptr, te);
    }
    return conv2d(silu(group_norm(h, static_cast<int>(cfg_.norm_groups), out_gn_g, out_gn_b)), out_w,
                  out_b, 1, 1);
}

AdapterConfig derive_adapter_config(const UNetConfig& u) {
    AdapterConfig a;
    a.frames = u.frames;
    a.height = u.height;
    a.width = u.width;
    a.site_channels.clear();
    for (std::int64_t m : u.channel_mult) a.site_channels.push_back(u.base_channels * m);
    a.heads = u.heads;
    a.prompt_width = u.prompt_width;
    a.time_width = u.time_width();
    a.gain = u.branch_gain;
    return a;
}

EditModel::EditModel(ModelConfig cfg) : cfg_(std::move(cfg)), reg_(cfg_.init_seed) {
    cfg_.unet.validate();
    prompt_ = std::make_unique<PromptEmbedding>(reg_, cfg_.vocab, cfg_.unet.prompt_width);
    backbone_ = std::make_unique<Backbone>(reg_, cfg_.unet);
    if (cfg_.use_adapter)
        adapter_ = std::make_unique<MotionAdapter>(reg_, derive_adapter_config(cfg_.unet));
}

Tensor EditModel::eps_predict(const Tensor& z, int t, const std::string& prompt,
                              const Tensor* raster) {
    Tensor ctx = prompt_->embed(prompt);
    AdapterHook* hook = nullptr;
    if (raster) {
        if (!adapter_) throw ContractError("eps_predict: raster given but model has no adapter");
        adapter_->begin_forward(*raster, t, ctx);
        hook = adapter_.get();
    } else if (adapter_) {
        adapter_->clear();
    }
    return backbone_->forward(z, t, ctx, hook);
}

}  // namespace vmedit
