#include "vmedit/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>

namespace vmedit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

void TrainConfig::validate() const {
    if (lr <= 0.0f) throw ConfigError("train: lr must be > 0");
    if (iters_stage1 < 0 || iters_stage2 < 0) throw ConfigError("train: negative iterations");
    if (clip_norm <= 0.0f) throw ConfigError("train: clip norm must be > 0");
}

std::set<ParamGroup> TrainConfig::stage1_groups() const {
    std::set<ParamGroup> g{ParamGroup::temporal, ParamGroup::motion_adapter};
    if (train_control) g.insert(ParamGroup::control);
    return g;
}

std::set<ParamGroup> TrainConfig::stage2_groups() const {
    std::set<ParamGroup> g{ParamGroup::spatial_rca, ParamGroup::motion_adapter};
    if (train_control) g.insert(ParamGroup::control);
    return g;
}

double clip_gradients(ParamRegistry& reg, float max_norm) {
    double sq = 0.0;
    for (auto& p : reg.params()) {
        if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
        for (float g : p.tensor.grad()) {
            if (std::isnan(g))
                throw NumericError("gradient clip: NaN gradient in parameter '" + p.name + "'");
            sq += static_cast<double>(g) * g;
        }
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        float s = static_cast<float>(max_norm / norm);
        for (auto& p : reg.params())
            if (p.tensor.requires_grad() && p.tensor.has_grad())
                for (float& g : p.tensor.grad_mut()) g *= s;
    }
    return norm;
}

void Adam::step(ParamRegistry& reg, float clip_norm) {
    clip_gradients(reg, clip_norm);
    std::vector<Parameter*> live;
    for (auto& p : reg.params())
        if (p.tensor.requires_grad() && p.tensor.has_grad()) live.push_back(&p);

    ++t_;
    double bc1 = 1.0 - std::pow(static_cast<double>(b1_), static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(static_cast<double>(b2_), static_cast<double>(t_));
    for (Parameter* p : live) {
        Slot& slot = slots_[p->name];
        std::size_t n = static_cast<std::size_t>(p->tensor.numel());
        if (slot.m.size() != n) {
            slot.m.assign(n, 0.0f);
            slot.v.assign(n, 0.0f);
        }
        std::span<const float> g = p->tensor.grad();
        std::span<float> w = p->tensor.raw();
        for (std::size_t i = 0; i < n; ++i) {
            float gi = g[i];
            slot.m[i] = b1_ * slot.m[i] + (1.0f - b1_) * gi;
            slot.v[i] = b2_ * slot.v[i] + (1.0f - b2_) * gi * gi;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            w[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

Tensor apply_mask(const Tensor& frames, const Tensor& mask) {
    if (frames.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 ||
        frames.dim(0) != mask.dim(0) || frames.dim(2) != mask.dim(2) ||
        frames.dim(3) != mask.dim(3))
        throw ShapeError("apply_mask: frames " + shape_str(frames.shape()) + " vs mask " +
                         shape_str(mask.shape()));
    std::int64_t F = frames.dim(0), C = frames.dim(1), hw = frames.dim(2) * frames.dim(3);
    std::vector<float> out(static_cast<std::size_t>(frames.numel()));
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
                out[(f * C + c) * hw + i] = frames.data()[(f * C + c) * hw + i] *
                                            mask.data()[f * hw + i];
    return Tensor::from_data(frames.shape(), std::move(out));
}

Trainer::Trainer(EditModel& model, NoiseSchedule sched, Codec codec, TrainConfig cfg)
    : model_(model), sched_(std::move(sched)), codec_(std::move(codec)), cfg_(cfg),
      opt_(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps), rng_(cfg.seed) {
    cfg_.validate();
}

float Trainer::run_step(const TrainSample& s, bool masked) {
    Tensor pixels = masked ? apply_mask(s.frames, s.mask) : s.frames;
    Tensor z0 = codec_.encode(pixels);
    EpsFn eps = [&](const Tensor& z, int t) {
        return model_.eps_predict(z, t, s.prompt, &s.raster);
    };
    model_.registry().zero_grads();
    Tensor loss = denoise_loss(eps, z0, sched_, rng_);
    backward(loss);
    opt_.step(model_.registry(), cfg_.clip_norm);
    return loss.item();
}

float Trainer::stage1_step(const TrainSample& s) {
    model_.registry().set_trainable(cfg_.stage1_groups());
    return run_step(s, true);
}

float Trainer::stage2_step(const TrainSample& s) {
    model_.registry().set_trainable(cfg_.stage2_groups());
    return run_step(s, false);
}

void Trainer::train(const TrainSample& s, std::ostream& log, int max_steps) {
    char line[64];
    int executed = 0;
    while (stage_ == 1 && step_ < cfg_.iters_stage1) {
        if (max_steps >= 0 && executed >= max_steps) return;
        float loss = stage1_step(s);
        ++step_;
        ++executed;
        std::snprintf(line, sizeof line, "1,%d,%.9g\n", step_, loss);
        log << line << std::flush;
    }
    if (stage_ == 1) {
        stage_ = 2;
        step_ = 0;
    }
    while (step_ < cfg_.iters_stage2) {
        if (max_steps >= 0 && executed >= max_steps) return;
        float loss = stage2_step(s);
        ++step_;
        ++executed;
        std::snprintf(line, sizeof line, "2,%d,%.9g\n", step_, loss);
        log << line << std::flush;
    }
}

namespace {

constexpr char kMagic[4] = {'V', 'M', 'E', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CorruptDataError("checkpoint: truncated file");
    return v;
}

void put_record(std::ostream& out, const std::string& name, const Shape& shape,
                std::span<const float> payload) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint32_t>(shape.size()));
    for (std::int64_t e : shape) put(out, e);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

struct Record {
    std::string name;
    Shape shape;
    std::vector<float> payload;
};

Record get_record(std::istream& in) {
    Record r;
    std::uint32_t name_len = get<std::uint32_t>(in);
    if (name_len > 4096) throw CorruptDataError("checkpoint: implausible record name length");
    r.name.resize(name_len);
    in.read(r.name.data(), name_len);
    std::uint32_t rank = get<std::uint32_t>(in);
    if (rank > 8) throw CorruptDataError("checkpoint: implausible record rank");
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::int64_t e = get<std::int64_t>(in);
        if (e <= 0 || e > (1 << 28)) throw CorruptDataError("checkpoint: implausible extent");
        r.shape.push_back(e);
        numel *= e;
    }
    r.payload.resize(static_cast<std::size_t>(numel));
    in.read(reinterpret_cast<char*>(r.payload.data()),
            static_cast<std::streamsize>(r.payload.size() * sizeof(float)));
    if (!in) throw CorruptDataError("checkpoint: truncated record payload");
    return r;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, static_cast<std::int32_t>(stage_));
    put(out, static_cast<std::int32_t>(step_));
    CounterRng::State rs = rng_.state();
    put(out, rs.seed);
    put(out, rs.counter);
    put(out, static_cast<std::uint8_t>(rs.has_spare ? 1 : 0));
    put(out, rs.spare);
    put(out, static_cast<std::uint64_t>(opt_.t()));

    const auto& params = model_.registry().params();
    std::uint32_t count = static_cast<std::uint32_t>(params.size());
    const auto& slots = opt_.slots();
    for (const auto& p : params)
        if (slots.count(p.name)) count += 2;
    put(out, count);
    for (const auto& p : params) {
        put_record(out, p.name, p.tensor.shape(), p.tensor.data());
        auto it = slots.find(p.name);
        if (it != slots.end()) {
            Shape flat{static_cast<std::int64_t>(it->second.m.size())};
            put_record(out, "m:" + p.name, flat, it->second.m);
            put_record(out, "v:" + p.name, flat, it->second.v);
        }
    }
    if (!out) throw IoError("checkpoint: write failure on '" + path + "'");
}

void Trainer::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CorruptDataError("checkpoint: bad magic bytes");
    std::uint32_t version = get<std::uint32_t>(in);
    if (version != kVersion)
        throw CorruptDataError("checkpoint: unsupported schema version " + std::to_string(version));
    int stage = get<std::int32_t>(in);
    int step = get<std::int32_t>(in);
    if (stage != 1 && stage != 2) throw CorruptDataError("checkpoint: invalid stage tag");
    CounterRng::State rs;
    rs.seed = get<std::uint64_t>(in);
    rs.counter = get<std::uint64_t>(in);
    rs.has_spare = get<std::uint8_t>(in) != 0;
    rs.spare = get<double>(in);
    std::uint64_t adam_t = get<std::uint64_t>(in);
    std::uint32_t count = get<std::uint32_t>(in);

    auto& params = model_.registry().params();
    std::map<std::string, Adam::Slot> slots;
    std::size_t matched = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        Record r = get_record(in);
        if (r.name.rfind("m:", 0) == 0) {
            slots[r.name.substr(2)].m = std::move(r.payload);
        } else if (r.name.rfind("v:", 0) == 0) {
            slots[r.name.substr(2)].v = std::move(r.payload);
        } else {
            bool found = false;
            for (auto& p : params)
                if (p.name == r.name) {
                    if (p.tensor.shape() != r.shape)
                        throw CorruptDataError("checkpoint: shape mismatch for '" + r.name + "'");
                    std::memcpy(p.tensor.raw().data(), r.payload.data(),
                                r.payload.size() * sizeof(float));
                    found = true;
                    ++matched;
                    break;
                }
            if (!found) throw CorruptDataError("checkpoint: unknown parameter '" + r.name + "'");
        }
    }
    if (matched != params.size())
        throw CorruptDataError("checkpoint: missing parameters (" + std::to_string(matched) + "/" +
                               std::to_string(params.size()) + ")");
    for (auto& [name, s] : slots)
        if (s.m.size() != s.v.size())
            throw CorruptDataError("checkpoint: unpaired moment buffers for '" + name + "'");

    stage_ = stage;
    step_ = step;
    rng_.set_state(rs);
    opt_.set_t(static_cast<std::int64_t>(adam_t));
    opt_.slots() = std::move(slots);
}

}  // namespace vmedit
