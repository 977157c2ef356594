#include "vmedit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;

namespace vmedit {

namespace {

void require_image(const Tensor& img, std::int64_t channels, const char* who) {
    if (!img.defined() || img.rank() != 3 || img.dim(0) != channels)
        throw ShapeError(std::string(who) + ": expected [" + std::to_string(channels) +
                         ",H,W], got " + (img.defined() ? shape_str(img.shape()) : "<empty>"));
}

// PNM header: magic, whitespace/comments, width, height, maxval.
void read_pnm_header(std::ifstream& in, const char* magic, const std::string& path,
                     std::int64_t& w, std::int64_t& h) {
    std::string m;
    in >> m;
    if (m != magic)
        throw CorruptDataError(path + ": expected " + magic + " header, got '" + m + "'");
    auto next_int = [&]() -> std::int64_t {
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        std::int64_t v = -1;
        in >> v;
        if (!in) throw CorruptDataError(path + ": truncated header");
        return v;
    };
    w = next_int();
    h = next_int();
    std::int64_t maxval = next_int();
    if (w <= 0 || h <= 0) throw CorruptDataError(path + ": non-positive image size");
    if (maxval != 255) throw CorruptDataError(path + ": only maxval 255 supported");
    in.get();  // single whitespace before payload
}

std::uint8_t to_byte(float v) {
    float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::int64_t w, h;
    read_pnm_header(in, "P6", path, w, h);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(3 * w * h));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw CorruptDataError(path + ": truncated pixel payload");
    Tensor img = Tensor::zeros({3, h, w});
    std::span<float> px = img.raw();
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                px[c * h * w + y * w + x] = raw[(y * w + x) * 3 + c] / 255.0f;
    return img;
}

void write_ppm(const std::string& path, const Tensor& img) {
    require_image(img, 3, "write_ppm");
    std::int64_t h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(3 * w * h));
    std::span<const float> px = img.data();
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                raw[(y * w + x) * 3 + c] = to_byte(px[c * h * w + y * w + x]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("short write: " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::int64_t w, h;
    read_pnm_header(in, "P5", path, w, h);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w * h));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw CorruptDataError(path + ": truncated pixel payload");
    Tensor img = Tensor::zeros({1, h, w});
    std::span<float> px = img.raw();
    for (std::int64_t i = 0; i < w * h; ++i) px[i] = raw[i] / 255.0f;
    return img;
}

void write_pgm(const std::string& path, const Tensor& img) {
    require_image(img, 1, "write_pgm");
    std::int64_t h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w * h));
    std::span<const float> px = img.data();
    for (std::int64_t i = 0; i < w * h; ++i) raw[i] = to_byte(px[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("short write: " + path);
}

std::string frame_filename(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%03d.%s", index, ext);
    return buf;
}

Tensor read_clip(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a clip directory: " + dir);
    std::vector<Tensor> frames;
    for (int i = 0;; ++i) {
        fs::path p = fs::path(dir) / frame_filename(i);
        if (!fs::exists(p)) break;
        frames.push_back(read_ppm(p.string()));
    }
    if (frames.empty()) throw IoError("no frame_###.ppm files in: " + dir);
    std::int64_t h = frames[0].dim(1), w = frames[0].dim(2);
    Tensor clip = Tensor::zeros({static_cast<std::int64_t>(frames.size()), 3, h, w});
    std::span<float> dst = clip.raw();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].dim(1) != h || frames[i].dim(2) != w)
            throw ShapeError("clip frames disagree on size in: " + dir);
        std::copy(frames[i].data().begin(), frames[i].data().end(),
                  dst.begin() + static_cast<std::int64_t>(i) * 3 * h * w);
    }
    return clip;
}

void write_clip(const std::string& dir, const Tensor& clip) {
    if (!clip.defined() || clip.rank() != 4 || clip.dim(1) != 3)
        throw ShapeError("write_clip: expected [F,3,H,W]");
    fs::create_directories(dir);
    std::int64_t f = clip.dim(0), h = clip.dim(2), w = clip.dim(3);
    for (std::int64_t i = 0; i < f; ++i) {
        Tensor frame = Tensor::zeros({3, h, w});
        std::copy_n(clip.data().begin() + i * 3 * h * w, 3 * h * w, frame.raw().begin());
        write_ppm((fs::path(dir) / frame_filename(static_cast<int>(i))).string(), frame);
    }
}

Tensor repeat_image_to_clip(const Tensor& image, std::int64_t n) {
    require_image(image, 3, "repeat_image_to_clip");
    if (n < 1) throw ContractError("repeat_image_to_clip: n must be >= 1");
    Tensor clip = Tensor::zeros({n, 3, image.dim(1), image.dim(2)});
    std::span<float> dst = clip.raw();
    for (std::int64_t i = 0; i < n; ++i)
        std::copy(image.data().begin(), image.data().end(), dst.begin() + i * image.numel());
    return clip;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.defined() || !b.defined() || a.shape() != b.shape())
        throw ShapeError(std::string(who) + ": shape mismatch");
}

}  // namespace

double metric_l1(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "metric_l1");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        acc += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
    return acc / static_cast<double>(a.numel());
}

double metric_psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "metric_psnr");
    double mse = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = (static_cast<double>(a.data()[i]) - b.data()[i]) * 255.0;
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double metric_ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "metric_ssim");
    require_image(a, a.dim(0), "metric_ssim");
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    std::int64_t ch = a.dim(0), h = a.dim(1), w = a.dim(2);
    const std::int64_t win = 8;
    std::int64_t wy = h / win, wx = w / win;
    if (wy == 0 || wx == 0)
        throw ShapeError("metric_ssim: image smaller than the 8x8 window");
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t by = 0; by < wy; ++by)
            for (std::int64_t bx = 0; bx < wx; ++bx) {
                double ma = 0, mb = 0;
                for (std::int64_t y = 0; y < win; ++y)
                    for (std::int64_t x = 0; x < win; ++x) {
                        std::int64_t i = c * h * w + (by * win + y) * w + bx * win + x;
                        ma += a.data()[i] * 255.0;
                        mb += b.data()[i] * 255.0;
                    }
                double n = static_cast<double>(win * win);
                ma /= n;
                mb /= n;
                double va = 0, vb = 0, cov = 0;
                for (std::int64_t y = 0; y < win; ++y)
                    for (std::int64_t x = 0; x < win; ++x) {
                        std::int64_t i = c * h * w + (by * win + y) * w + bx * win + x;
                        double da = a.data()[i] * 255.0 - ma;
                        double db = b.data()[i] * 255.0 - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

MetricsReport compute_metrics(const Tensor& clip_a, const Tensor& clip_b) {
    require_same_shape(clip_a, clip_b, "compute_metrics");
    if (clip_a.rank() != 4) throw ShapeError("compute_metrics: expected [F,C,H,W] clips");
    std::int64_t f = clip_a.dim(0), per = clip_a.numel() / f;
    Shape fshape{clip_a.dim(1), clip_a.dim(2), clip_a.dim(3)};
    MetricsReport r;
    bool any_inf = false;
    for (std::int64_t i = 0; i < f; ++i) {
        Tensor a = Tensor::zeros(fshape), b = Tensor::zeros(fshape);
        std::copy_n(clip_a.data().begin() + i * per, per, a.raw().begin());
        std::copy_n(clip_b.data().begin() + i * per, per, b.raw().begin());
        FrameMetrics m;
        m.l1 = metric_l1(a, b);
        m.psnr = metric_psnr(a, b);
        m.ssim = metric_ssim(a, b);
        any_inf = any_inf || std::isinf(m.psnr);
        r.mean.l1 += m.l1;
        r.mean.psnr += std::isinf(m.psnr) ? 0.0 : m.psnr;
        r.mean.ssim += m.ssim;
        r.frames.push_back(m);
    }
    r.mean.l1 /= static_cast<double>(f);
    r.mean.ssim /= static_cast<double>(f);
    r.mean.psnr = any_inf ? std::numeric_limits<double>::infinity()
                          : r.mean.psnr / static_cast<double>(f);
    return r;
}

std::string format_report(const MetricsReport& r) {
    std::ostringstream out;
    auto line = [&](const std::string& tag, const FrameMetrics& m) {
        char buf[128];
        if (std::isinf(m.psnr))
            std::snprintf(buf, sizeof buf, "%s,%.6g,inf,%.6g\n", tag.c_str(), m.l1, m.ssim);
        else
            std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g,%.6g\n", tag.c_str(), m.l1, m.psnr, m.ssim);
        out << buf;
    };
    for (std::size_t i = 0; i < r.frames.size(); ++i) line(std::to_string(i), r.frames[i]);
    line("mean", r.mean);
    return out.str();
}

KvConfig KvConfig::parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) +
                                                   ": empty section name");
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_num(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + it->second + "'");
    }
}

void KvConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string KvConfig::serialize() const {
    std::ostringstream out;
    // global keys first: once a [section] opens there is no way back
    for (const auto& [key, value] : values_)
        if (key.rfind('.') == std::string::npos) out << key << "=" << value << "\n";
    std::string section;
    for (const auto& [key, value] : values_) {
        std::size_t dot = key.rfind('.');
        if (dot == std::string::npos) continue;
        std::string sec = key.substr(0, dot);
        if (sec != section) {
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << "=" << value << "\n";
    }
    return out.str();
}

namespace {

std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::vector<std::int64_t> parse_int_list(const std::string& s) {
    std::vector<std::int64_t> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw ConfigError("expected comma-separated integers, got '" + s + "'");
        }
    return out;
}

}  // namespace

RunConfig RunConfig::from_kv(const KvConfig& kv) {
    RunConfig c;
    c.scene.frames = static_cast<std::int64_t>(kv.get_num("scene.frames", c.scene.frames));
    c.scene.height = static_cast<std::int64_t>(kv.get_num("scene.height", c.scene.height));
    c.scene.width = static_cast<std::int64_t>(kv.get_num("scene.width", c.scene.width));
    c.scene.seed = static_cast<std::uint64_t>(kv.get_num("scene.seed", c.scene.seed));
    c.scene.figure_height = kv.get_num("scene.figure_height", c.scene.figure_height);
    c.scene.start_x = kv.get_num("scene.start_x", c.scene.start_x);
    c.scene.start_y = kv.get_num("scene.start_y", c.scene.start_y);
    c.scene.motion = motion_from_name(kv.get("scene.motion", motion_name(c.scene.motion)));

    c.unet.base_channels = static_cast<std::int64_t>(kv.get_num("model.base_channels", c.unet.base_channels));
    if (kv.has("model.channel_mult")) c.unet.channel_mult = parse_int_list(kv.get("model.channel_mult", ""));
    c.unet.heads = static_cast<int>(kv.get_num("model.heads", c.unet.heads));
    c.unet.norm_groups = static_cast<std::int64_t>(kv.get_num("model.norm_groups", c.unet.norm_groups));
    c.unet.prompt_width = static_cast<std::int64_t>(kv.get_num("model.prompt_width", c.unet.prompt_width));
    c.unet.rca_literal_eq9 = kv.get("model.rca_literal_eq9", "false") == "true";
    c.unet.branch_gain = static_cast<float>(kv.get_num("model.branch_gain", c.unet.branch_gain));
    c.init_seed = static_cast<std::uint64_t>(kv.get_num("model.init_seed", c.init_seed));
    c.codec = codec_from_name(kv.get("model.codec", codec_name(c.codec)));

    c.schedule_T = static_cast<int>(kv.get_num("schedule.T", c.schedule_T));
    c.beta_start = kv.get_num("schedule.beta_start", c.beta_start);
    c.beta_end = kv.get_num("schedule.beta_end", c.beta_end);

    c.train.lr = static_cast<float>(kv.get_num("train.lr", c.train.lr));
    c.train.iters_stage1 = static_cast<int>(kv.get_num("train.iters_stage1", c.train.iters_stage1));
    c.train.iters_stage2 = static_cast<int>(kv.get_num("train.iters_stage2", c.train.iters_stage2));
    c.train.seed = static_cast<std::uint64_t>(kv.get_num("train.seed", c.train.seed));
    c.train.clip_norm = static_cast<float>(kv.get_num("train.clip_norm", c.train.clip_norm));
    c.train.train_control = kv.get("train.train_control", c.train.train_control ? "true" : "false") == "true";

    c.ddim_steps = static_cast<int>(kv.get_num("sample.ddim_steps", c.ddim_steps));

    // latent geometry follows the scene through the codec
    Codec codec = c.make_codec();
    c.unet.frames = c.scene.frames;
    c.unet.height = codec.latent_height(c.scene.height);
    c.unet.width = codec.latent_width(c.scene.width);
    c.validate();
    return c;
}

KvConfig RunConfig::to_kv() const {
    KvConfig kv;
    kv.set("scene.frames", fmt_num(static_cast<double>(scene.frames)));
    kv.set("scene.height", fmt_num(static_cast<double>(scene.height)));
    kv.set("scene.width", fmt_num(static_cast<double>(scene.width)));
    kv.set("scene.seed", fmt_num(static_cast<double>(scene.seed)));
    kv.set("scene.figure_height", fmt_num(scene.figure_height));
    kv.set("scene.start_x", fmt_num(scene.start_x));
    kv.set("scene.start_y", fmt_num(scene.start_y));
    kv.set("scene.motion", motion_name(scene.motion));
    kv.set("model.base_channels", fmt_num(static_cast<double>(unet.base_channels)));
    std::string mult;
    for (std::size_t i = 0; i < unet.channel_mult.size(); ++i)
        mult += (i ? "," : "") + std::to_string(unet.channel_mult[i]);
    kv.set("model.channel_mult", mult);
    kv.set("model.heads", fmt_num(unet.heads));
    kv.set("model.norm_groups", fmt_num(static_cast<double>(unet.norm_groups)));
    kv.set("model.prompt_width", fmt_num(static_cast<double>(unet.prompt_width)));
    kv.set("model.rca_literal_eq9", unet.rca_literal_eq9 ? "true" : "false");
    kv.set("model.branch_gain", fmt_num(unet.branch_gain));
    kv.set("model.init_seed", fmt_num(static_cast<double>(init_seed)));
    kv.set("model.codec", codec_name(codec));
    kv.set("schedule.T", fmt_num(schedule_T));
    kv.set("schedule.beta_start", fmt_num(beta_start));
    kv.set("schedule.beta_end", fmt_num(beta_end));
    kv.set("train.lr", fmt_num(train.lr));
    kv.set("train.iters_stage1", fmt_num(train.iters_stage1));
    kv.set("train.iters_stage2", fmt_num(train.iters_stage2));
    kv.set("train.seed", fmt_num(static_cast<double>(train.seed)));
    kv.set("train.clip_norm", fmt_num(train.clip_norm));
    kv.set("train.train_control", train.train_control ? "true" : "false");
    kv.set("sample.ddim_steps", fmt_num(ddim_steps));
    return kv;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.unet = unet;
    m.init_seed = init_seed;
    return m;
}

NoiseSchedule RunConfig::schedule() const {
    return make_linear_schedule(schedule_T, beta_start, beta_end);
}

void RunConfig::validate() const {
    Codec cd = make_codec();
    if (unet.frames != scene.frames || unet.height != cd.latent_height(scene.height) ||
        unet.width != cd.latent_width(scene.width))
        throw ConfigError("config: model latent geometry disagrees with scene/codec");
    if (ddim_steps < 1 || ddim_steps > schedule_T)
        throw ConfigError("config: sample.ddim_steps out of range");
    unet.validate();
    train.validate();
}

EditResult run_edit(EditModel& model, const NoiseSchedule& sched, const Codec& codec,
                    const EditRequest& req) {
    if (req.steps < 1) throw ContractError("edit: steps must be >= 1");
    const UNetConfig& u = model.backbone().config();

    Tensor clip;
    if (fs::is_directory(req.source)) {
        clip = read_clip(req.source);
        if (clip.dim(0) != u.frames)
            throw ContractError("edit: clip has " + std::to_string(clip.dim(0)) +
                                " frames, model expects " + std::to_string(u.frames));
    } else {
        clip = repeat_image_to_clip(read_ppm(req.source), u.frames);
    }
    if (codec.latent_height(clip.dim(2)) != u.height || codec.latent_width(clip.dim(3)) != u.width)
        throw ContractError("edit: clip size " + std::to_string(clip.dim(2)) + "x" +
                            std::to_string(clip.dim(3)) + " does not map onto the model latent");

    SkeletonSequence reference = load_skeletons(req.reference_skeletons);
    SkeletonSequence source_sk;
    bool have_source_sk = !req.source_skeletons.empty();
    if (have_source_sk) source_sk = load_skeletons(req.source_skeletons);
    SkeletonSequence conditioning;
    if (req.apply_offset) {
        if (!have_source_sk)
            throw ContractError("edit: apply_offset requires source skeletons");
        conditioning = offset_skeletons(source_sk, reference);
    } else {
        conditioning = reference;
    }
    if (static_cast<std::int64_t>(conditioning.frame_count()) != u.frames)
        throw ContractError("edit: skeleton sequence length " +
                            std::to_string(conditioning.frame_count()) + " != clip length " +
                            std::to_string(u.frames));
    conditioning.height_px = clip.dim(2);
    conditioning.width_px = clip.dim(3);

    Tensor raster = rasterize_sequence(scale_sequence(conditioning, u.height, u.width),
                                       u.height, u.width);
    // inversion is conditioned on the source's own skeletons when known, so
    // the recovered noise encodes the unedited clip
    Tensor invert_raster = raster;
    if (have_source_sk) {
        SkeletonSequence s = source_sk;
        s.height_px = clip.dim(2);
        s.width_px = clip.dim(3);
        invert_raster = rasterize_sequence(scale_sequence(s, u.height, u.width), u.height, u.width);
    }

    const std::string& inv_prompt = req.invert_prompt.empty() ? req.prompt : req.invert_prompt;

    NoGradGuard ng;
    DdimStepPlan plan = DdimStepPlan::uniform(sched, req.steps);
    Tensor z0 = codec.encode(clip);
    Tensor z_star = invert_loop(
        z0, [&](const Tensor& z, int t) { return model.eps_predict(z, t, inv_prompt, &invert_raster); },
        plan, sched);
    Tensor z_out = sample_loop(
        z_star, [&](const Tensor& z, int t) { return model.eps_predict(z, t, req.prompt, &raster); },
        plan, sched);

    EditResult res;
    res.frames = codec.decode(z_out);
    res.conditioning = std::move(conditioning);
    res.raster = std::move(raster);
    return res;
}

void load_model_weights(EditModel& model, const std::string& path) {
    // reads the trainer checkpoint format but only applies parameter
    // records; optimizer moments and counters are skipped
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "VMED", 4) != 0)
        throw CorruptDataError("checkpoint: bad magic bytes");
    auto get_u32 = [&in]() {
        std::uint32_t v;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw CorruptDataError("checkpoint: truncated file");
        return v;
    };
    std::uint32_t version = get_u32();
    if (version != 1)
        throw CorruptDataError("checkpoint: unsupported schema version " + std::to_string(version));
    in.ignore(4 + 4 + 8 + 8 + 1 + 8 + 8);  // stage, step, rng state, adam step count
    if (!in) throw CorruptDataError("checkpoint: truncated file");
    std::uint32_t count = get_u32();

    auto& params = model.registry().params();
    std::size_t matched = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = get_u32();
        if (name_len > 4096) throw CorruptDataError("checkpoint: implausible record name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = get_u32();
        if (rank > 8) throw CorruptDataError("checkpoint: implausible record rank");
        Shape shape;
        std::int64_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::int64_t e;
            in.read(reinterpret_cast<char*>(&e), sizeof e);
            if (!in || e <= 0 || e > (1 << 28))
                throw CorruptDataError("checkpoint: implausible extent");
            shape.push_back(e);
            numel *= e;
        }
        std::vector<float> payload(static_cast<std::size_t>(numel));
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!in) throw CorruptDataError("checkpoint: truncated record payload");
        if (name.rfind("m:", 0) == 0 || name.rfind("v:", 0) == 0) continue;
        bool found = false;
        for (auto& p : params)
            if (p.name == name) {
                if (p.tensor.shape() != shape)
                    throw CorruptDataError("checkpoint: shape mismatch for '" + name + "'");
                std::memcpy(p.tensor.raw().data(), payload.data(), payload.size() * sizeof(float));
                found = true;
                ++matched;
                break;
            }
        if (!found) throw CorruptDataError("checkpoint: unknown parameter '" + name + "'");
    }
    if (matched != params.size())
        throw CorruptDataError("checkpoint: missing parameters (" + std::to_string(matched) + "/" +
                               std::to_string(params.size()) + ")");
}

}  // namespace vmedit
