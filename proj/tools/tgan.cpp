/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "tgan/archive.hpp"
#include "tgan/checkpoint.hpp"
#include "tgan/datagen.hpp"
#include "tgan/image_io.hpp"
#include "tgan/infer.hpp"
#include "tgan/service.hpp"
#include "tgan/synthetic.hpp"
#include "tgan/train.hpp"

namespace {

using namespace tgan;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

/// "<payload>:x,y,w,h", split at the last colon.
std::pair<std::string, Rect> split_placement(const std::string& arg) {
    const auto colon = arg.rfind(':');
    if (colon == std::string::npos) {
        throw CLI::ValidationError("placement", "'" + arg + "' is missing ':x,y,w,h'");
    }
    Rect r;
    char tail = 0;
    if (std::sscanf(arg.c_str() + colon + 1, "%d,%d,%d,%d%c", &r.x, &r.y, &r.w, &r.h, &tail) != 4) {
        throw CLI::ValidationError("placement", "'" + arg + "' must end in ':x,y,w,h'");
    }
    return {arg.substr(0, colon), r};
}

int cmd_datagen(const datagen::DatagenJob& job) {
    const auto summary = datagen::run_datagen(job);
    std::cout << "examples " << summary.examples << ", rejected " << summary.rejected << ", textures "
              << summary.textures << ", shards " << summary.shards.size() << '\n';
    return 0;
}

int cmd_train(const std::string& config, const std::string& init, const std::string& resume,
              train::Stage expected) {
    train::TrainConfig cfg = train::load_config(config);
    if (cfg.stage != expected) {
        throw ConfigError("config stage is '" + std::string(train::to_string(cfg.stage)) + "' but the command is '" +
                          std::string(train::to_string(expected)) + "'");
    }
    train::RunOptions opts;
    if (!init.empty()) {
        opts.init = init;
    }
    if (!resume.empty()) {
        opts.resume = resume;
    }
    const std::int64_t every = std::max<std::int64_t>(1, cfg.iterations / 20);
    opts.on_step = [every](const train::StepRecord& rec) {
        if (rec.iteration % every == 0) {
            spdlog::info("it {} [{}] total {:.4f}", rec.iteration, rec.kind, rec.report.total);
        }
    };
    const auto last = train::run(cfg, opts);
    std::cout << last.string() << '\n';
    return 0;
}

struct InferArgs {
    std::string checkpoint;
    std::string sketch;
    std::vector<std::string> textures;
    std::vector<std::string> colors;
    std::string out;
    int resolution = 0;
};

int cmd_infer(const InferArgs& a) {
    const auto synth = infer::Synthesizer::from_file(a.checkpoint);
    infer::SynthesisRequest req;
    req.resolution = a.resolution > 0 ? a.resolution : synth->native_resolution();
    req.sketch = io::sketch_from_image(io::read_image(a.sketch));
    for (const auto& t : a.textures) {
        auto [file, rect] = split_placement(t);
        req.textures.push_back({io::read_image(file), rect});
    }
    for (const auto& c : a.colors) {
        auto [hex, rect] = split_placement(c);
        req.colors.push_back({infer::parse_hex_color(hex), rect});
    }
    const auto result = synth->synthesize(req);
    io::write_png(a.out, result.image);
    std::cout << a.out << " (" << result.image.width << "x" << result.image.height << ", internal "
              << result.internal_resolution << ", " << result.latency_ms << " ms)\n";
    return 0;
}

struct ServeArgs {
    std::string checkpoint;
    service::ServiceConfig cfg;
    bool stub = false;
    int stub_resolution = 128;
};

int cmd_serve(const ServeArgs& a) {
    service::Server server(a.cfg);
    std::thread loader;
    if (a.stub) {
        server.handler().set_backend(std::make_shared<infer::StubBackend>(a.stub_resolution));
    } else {
        service::load_in_background(server.handler(), a.checkpoint, loader);
    }
    const int port = server.start();
    std::cout << "serving on http://" << a.cfg.host << ":" << port << std::endl;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
    if (loader.joinable()) {
        loader.join();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sketch, texture and color conditioned image synthesis"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")->capture_default_str();

    datagen::DatagenJob job;
    std::string sketch_method = "mask_canny";
    std::string mask_mode = "white_background";
    auto* dg = app.add_subcommand("datagen", "Build training shards from a photo collection");
    dg->add_option("--root", job.root, "Collection root with photos/ (masks/, textures/ optional)")->required();
    dg->add_option("--out", job.out, "Output directory")->required();
    dg->add_option("--resolution", job.resolution)->capture_default_str()->check(CLI::Range(16, 1024));
    dg->add_option("--sketch", sketch_method)->capture_default_str()->check(
        CLI::IsMember({"mask_canny", "xdog", "learned_edges"}));
    dg->add_option("--mask", mask_mode)->capture_default_str()->check(
        CLI::IsMember({"white_background", "provided", "sketch_fill"}));
    dg->add_option("--patches", job.patches)->capture_default_str()->check(CLI::IsMember({1, 2}));
    dg->add_option("--seed", job.seed)->capture_default_str();
    dg->add_option("--texture-crops", job.texture_crops)->capture_default_str()->check(CLI::PositiveNumber);

    std::string samples_out;
    int sample_photos = 16;
    int sample_textures = 8;
    int sample_res = 128;
    std::uint64_t sample_seed = 0;
    auto* sm = app.add_subcommand("samples", "Write a procedural photo and texture collection");
    sm->add_option("--out", samples_out)->required();
    sm->add_option("--photos", sample_photos)->capture_default_str()->check(CLI::NonNegativeNumber);
    sm->add_option("--textures", sample_textures)->capture_default_str()->check(CLI::NonNegativeNumber);
    sm->add_option("--resolution", sample_res)->capture_default_str()->check(CLI::Range(16, 1024));
    sm->add_option("--seed", sample_seed)->capture_default_str();

    std::string config;
    std::string init;
    std::string resume;
    auto* pt = app.add_subcommand("pretrain", "Ground-truth pre-training");
    pt->add_option("--config", config, "JSON training config")->required()->check(CLI::ExistingFile);
    pt->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    auto* ft = app.add_subcommand("finetune", "External texture fine-tuning");
    ft->add_option("--config", config, "JSON training config")->required()->check(CLI::ExistingFile);
    ft->add_option("--init", init, "Pre-trained checkpoint")->check(CLI::ExistingFile);
    ft->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

    InferArgs ia;
    auto* inf = app.add_subcommand("infer", "Synthesize one image");
    inf->add_option("--checkpoint", ia.checkpoint)->required()->check(CLI::ExistingFile);
    inf->add_option("--sketch", ia.sketch, "Sketch image, dark strokes on white")->required()->check(CLI::ExistingFile);
    inf->add_option("--texture", ia.textures, "tex.png:x,y,w,h (repeatable)");
    inf->add_option("--color", ia.colors, "'#rrggbb':x,y,w,h (repeatable)");
    inf->add_option("--resolution", ia.resolution, "Output side; defaults to the trained resolution");
    inf->add_option("--out", ia.out)->required();

    ServeArgs sa;
    auto* sv = app.add_subcommand("serve", "HTTP synthesis service");
    sv->add_option("--checkpoint", sa.checkpoint)->check(CLI::ExistingFile);
    sv->add_option("--host", sa.cfg.host)->capture_default_str();
    sv->add_option("--port", sa.cfg.port)->capture_default_str()->check(CLI::Range(0, 65535));
    sv->add_flag("--stub", sa.stub, "Serve the non-learned renderer");
    sv->add_option("--stub-resolution", sa.stub_resolution)->capture_default_str();
    sv->add_option("--max-inflight", sa.cfg.max_inflight)->capture_default_str()->check(CLI::PositiveNumber);
    sv->add_option("--cors-origin", sa.cfg.cors_origin)->capture_default_str();

    app.add_subcommand("schema", "Print the JSON schema of the synthesize request");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (dg->parsed()) {
            job.sketch = datagen::parse_sketch_method(sketch_method);
            job.mask_mode = datagen::parse_mask_mode(mask_mode);
            return cmd_datagen(job);
        }
        if (sm->parsed()) {
            synthetic::write_sample_collection(samples_out, sample_photos, sample_textures, sample_res, sample_seed);
            std::cout << samples_out << '\n';
            return 0;
        }
        if (pt->parsed()) {
            return cmd_train(config, "", resume, train::Stage::pretrain);
        }
        if (ft->parsed()) {
            return cmd_train(config, init, resume, train::Stage::finetune);
        }
        if (inf->parsed()) {
            return cmd_infer(ia);
        }
        if (sv->parsed()) {
            if (!sa.stub && sa.checkpoint.empty()) {
                throw ConfigError("serve needs --checkpoint or --stub");
            }
            return cmd_serve(sa);
        }
        std::cout << service::synthesize_schema().dump(2) << '\n';
        return 0;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
