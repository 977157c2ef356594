// vmedit: one-shot video motion editing on synthetic stick-figure clips.
//
// Exit codes: 0 success, 2 usage/flag errors, 3 missing or unreadable
// files, 4 schema/config violations, 5 numeric failures, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "vmedit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vmedit;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitSchema = 4;
constexpr int kExitNumeric = 5;

RunConfig load_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return RunConfig::from_kv(KvConfig::parse_file(path));
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.txt");
    out << cfg.to_kv().serialize();
    if (!out) throw IoError("cannot write config echo in " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text;
}

struct SceneDir {
    Tensor frames, masks;
    SkeletonSequence skeletons;
    std::string prompt;
};

void write_scene(const SceneData& scene, const fs::path& dir) {
    write_clip((dir / "frames").string(), scene.frames);
    fs::create_directories(dir / "masks");
    std::int64_t f = scene.masks.dim(0), h = scene.masks.dim(2), w = scene.masks.dim(3);
    for (std::int64_t i = 0; i < f; ++i) {
        Tensor m = Tensor::zeros({1, h, w});
        std::copy_n(scene.masks.data().begin() + i * h * w, h * w, m.raw().begin());
        write_pgm((dir / "masks" / frame_filename(static_cast<int>(i), "pgm")).string(), m);
    }
    save_skeletons(scene.skeletons, (dir / "skeletons.json").string());
    write_text(dir / "prompt.txt", scene.prompt + "\n");
}

SceneDir read_scene(const fs::path& dir) {
    SceneDir s;
    s.frames = read_clip((dir / "frames").string());
    std::int64_t f = s.frames.dim(0), h = s.frames.dim(2), w = s.frames.dim(3);
    s.masks = Tensor::zeros({f, 1, h, w});
    for (std::int64_t i = 0; i < f; ++i) {
        Tensor m = read_pgm((dir / "masks" / frame_filename(static_cast<int>(i), "pgm")).string());
        if (m.dim(1) != h || m.dim(2) != w)
            throw CorruptDataError("mask size disagrees with frames in " + dir.string());
        std::copy(m.data().begin(), m.data().end(), s.masks.raw().begin() + i * h * w);
    }
    s.skeletons = load_skeletons((dir / "skeletons.json").string());
    s.prompt = read_text(dir / "prompt.txt");
    return s;
}

Tensor control_raster(const SkeletonSequence& sk, const UNetConfig& u) {
    return rasterize_sequence(scale_sequence(sk, u.height, u.width), u.height, u.width);
}

int run(int argc, char** argv) {
    CLI::App app{"video motion editing via diffusion inversion and skeleton control"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "key=value config file")->configurable(false);

    // gen-scene
    auto* gen = app.add_subcommand("gen-scene", "generate a synthetic stick-figure clip");
    std::string gen_out, gen_motion;
    std::uint64_t gen_seed = 0;
    bool gen_seed_set = false, gen_motion_set = false;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "override scene seed")->each([&](const std::string&) {
        gen_seed_set = true;
    });
    gen->add_option("--motion", gen_motion, "stand|shift_right|walk|wave")->each(
        [&](const std::string&) { gen_motion_set = true; });

    // train
    auto* train = app.add_subcommand("train", "two-stage fine-tune on one scene");
    std::string train_scene, train_out, train_resume;
    int train_max_steps = -1;
    train->add_option("--scene", train_scene, "scene directory from gen-scene")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to continue from");
    train->add_option("--max-steps", train_max_steps, "stop after N steps (for resume tests)");

    // invert
    auto* invert = app.add_subcommand("invert", "DDIM-invert a clip to its noise latent");
    std::string inv_source, inv_skel, inv_ckpt, inv_prompt, inv_out;
    int inv_steps = 0;
    invert->add_option("--source", inv_source, "clip directory or single .ppm")->required();
    invert->add_option("--skeletons", inv_skel, "skeleton file for conditioning")->required();
    invert->add_option("--checkpoint", inv_ckpt, "trained checkpoint")->required();
    invert->add_option("--prompt", inv_prompt, "conditioning prompt")->required();
    invert->add_option("--out", inv_out, "output latent file")->required();
    invert->add_option("--steps", inv_steps, "DDIM steps (default from config)");

    // edit
    auto* edit = app.add_subcommand("edit", "invert a clip and resample with new motion");
    EditRequest req;
    std::string edit_ckpt, edit_out;
    bool no_offset = false;
    int edit_steps = 0;
    edit->add_option("--source", req.source, "clip directory or single .ppm")->required();
    edit->add_option("--source-skel", req.source_skeletons, "source skeleton file");
    edit->add_option("--reference-skel", req.reference_skeletons, "reference skeleton file")
        ->required();
    edit->add_option("--checkpoint", edit_ckpt, "trained checkpoint")->required();
    edit->add_option("--prompt", req.prompt, "conditioning prompt")->required();
    edit->add_option("--invert-prompt", req.invert_prompt, "prompt for inversion (default: --prompt)");
    edit->add_option("--out", edit_out, "output directory")->required();
    edit->add_option("--steps", edit_steps, "DDIM steps (default from config)");
    edit->add_flag("--no-offset", no_offset, "condition on raw reference skeletons");

    // offset-skel
    auto* offset = app.add_subcommand("offset-skel", "remap reference joints onto the source");
    std::string off_source, off_reference, off_out;
    offset->add_option("--source", off_source, "source skeleton file")->required();
    offset->add_option("--reference", off_reference, "reference skeleton file")->required();
    offset->add_option("--out", off_out, "output skeleton file")->required();

    // render-skel
    auto* render = app.add_subcommand("render-skel", "rasterize a skeleton file to frames");
    std::string ren_skel, ren_out;
    std::int64_t ren_h = 0, ren_w = 0;
    render->add_option("--skeletons", ren_skel, "skeleton file")->required();
    render->add_option("--out", ren_out, "output directory")->required();
    render->add_option("--height", ren_h, "canvas height (default: file image_size)");
    render->add_option("--width", ren_w, "canvas width (default: file image_size)");

    // metrics
    auto* metrics = app.add_subcommand("metrics", "L1/PSNR/SSIM between two clips");
    std::string met_a, met_b, met_out;
    metrics->add_option("--a", met_a, "first clip directory")->required();
    metrics->add_option("--b", met_b, "second clip directory")->required();
    metrics->add_option("--out", met_out, "also write the report here");

    // dump-schedule
    auto* dump = app.add_subcommand("dump-schedule", "print the variance schedule table");
    std::string dump_out;
    dump->add_option("--out", dump_out, "write the table here instead of stdout");

    // let the global --config appear after the subcommand name
    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();

    app.parse(argc, argv);

    RunConfig cfg = load_config(config_path);

    if (gen->parsed()) {
        if (gen_seed_set) cfg.scene.seed = gen_seed;
        if (gen_motion_set) cfg.scene.motion = motion_from_name(gen_motion);
        SceneData scene = gen_scene(cfg.scene);
        fs::path out(gen_out);
        write_scene(scene, out);
        echo_config(cfg, out);
        std::printf("wrote %lld frames to %s\n", static_cast<long long>(scene.frames.dim(0)),
                    gen_out.c_str());
        return 0;
    }

    if (train->parsed()) {
        SceneDir scene = read_scene(train_scene);
        if (scene.frames.dim(0) != cfg.unet.frames ||
            cfg.make_codec().latent_height(scene.frames.dim(2)) != cfg.unet.height)
            throw ConfigError("scene geometry disagrees with the model config");
        EditModel model(cfg.model_config());
        Trainer trainer(model, cfg.schedule(), cfg.make_codec(), cfg.train);
        TrainSample sample{scene.frames, scene.masks, control_raster(scene.skeletons, cfg.unet),
                           scene.prompt};
        fs::create_directories(train_out);
        bool resuming = !train_resume.empty();
        if (resuming) trainer.load_checkpoint(train_resume);
        std::ofstream log(fs::path(train_out) / "loss.csv",
                          resuming ? std::ios::app : std::ios::trunc);
        if (!log) throw IoError("cannot open loss log in " + train_out);
        trainer.train(sample, log, train_max_steps);
        trainer.save_checkpoint((fs::path(train_out) / "model.ckpt").string());
        echo_config(cfg, train_out);
        std::printf("checkpoint at %s/model.ckpt (stage %d, step %d)\n", train_out.c_str(),
                    trainer.stage(), trainer.step());
        return 0;
    }

    if (invert->parsed()) {
        EditModel model(cfg.model_config());
        load_model_weights(model, inv_ckpt);
        Codec codec = cfg.make_codec();
        const UNetConfig& u = cfg.unet;
        Tensor clip = fs::is_directory(inv_source)
                          ? read_clip(inv_source)
                          : repeat_image_to_clip(read_ppm(inv_source), u.frames);
        SkeletonSequence sk = load_skeletons(inv_skel);
        sk.height_px = clip.dim(2);
        sk.width_px = clip.dim(3);
        Tensor raster = control_raster(sk, u);
        NoGradGuard ng;
        NoiseSchedule sched = cfg.schedule();
        DdimStepPlan plan = DdimStepPlan::uniform(sched, inv_steps > 0 ? inv_steps : cfg.ddim_steps);
        Tensor z_star = invert_loop(
            codec.encode(clip),
            [&](const Tensor& z, int t) { return model.eps_predict(z, t, inv_prompt, &raster); },
            plan, sched);
        std::ofstream out(inv_out, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write latent file: " + inv_out);
        out.write("VMLT", 4);
        std::uint32_t rank = static_cast<std::uint32_t>(z_star.rank());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        for (std::int64_t e : z_star.shape()) out.write(reinterpret_cast<const char*>(&e), 8);
        out.write(reinterpret_cast<const char*>(z_star.data().data()),
                  static_cast<std::streamsize>(z_star.numel() * sizeof(float)));
        if (!out) throw IoError("short write: " + inv_out);
        std::printf("wrote latent %s %s\n", shape_str(z_star.shape()).c_str(), inv_out.c_str());
        return 0;
    }

    if (edit->parsed()) {
        req.apply_offset = !no_offset;
        req.steps = edit_steps > 0 ? edit_steps : cfg.ddim_steps;
        EditModel model(cfg.model_config());
        load_model_weights(model, edit_ckpt);
        NoiseSchedule sched = cfg.schedule();
        EditResult res = run_edit(model, sched, cfg.make_codec(), req);
        write_clip(edit_out, res.frames);
        save_skeletons(res.conditioning, (fs::path(edit_out) / "conditioning.json").string());
        echo_config(cfg, edit_out);
        std::printf("wrote %lld edited frames to %s\n", static_cast<long long>(res.frames.dim(0)),
                    edit_out.c_str());
        return 0;
    }

    if (offset->parsed()) {
        SkeletonSequence src = load_skeletons(off_source);
        SkeletonSequence ref = load_skeletons(off_reference);
        save_skeletons(offset_skeletons(src, ref), off_out);
        std::printf("wrote %s\n", off_out.c_str());
        return 0;
    }

    if (render->parsed()) {
        SkeletonSequence sk = load_skeletons(ren_skel);
        std::int64_t h = ren_h > 0 ? ren_h : sk.height_px;
        std::int64_t w = ren_w > 0 ? ren_w : sk.width_px;
        if (h <= 0 || w <= 0)
            throw ConfigError("render-skel: no canvas size in the file; pass --height/--width");
        write_clip(ren_out, rasterize_sequence(sk, h, w));
        std::printf("wrote %zu rasters to %s\n", sk.frame_count(), ren_out.c_str());
        return 0;
    }

    if (metrics->parsed()) {
        std::string report = format_report(compute_metrics(read_clip(met_a), read_clip(met_b)));
        std::fputs(report.c_str(), stdout);
        if (!met_out.empty()) write_text(met_out, report);
        return 0;
    }

    if (dump->parsed()) {
        std::string table = dump_schedule(cfg.schedule());
        if (dump_out.empty())
            std::fputs(table.c_str(), stdout);
        else
            write_text(dump_out, table);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return 0;  // --help and friends
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return kExitUsage;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: io: %s\n", e.what());
        return kExitMissingFile;
    } catch (const CorruptDataError& e) {
        std::fprintf(stderr, "error: schema: %s\n", e.what());
        return kExitSchema;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: schema: %s\n", e.what());
        return kExitSchema;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: schema: %s\n", e.what());
        return kExitSchema;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: schema: %s\n", e.what());
        return kExitSchema;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: numeric: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
}
