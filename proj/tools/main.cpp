#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "polarfuse/pipeline.hpp"

using namespace polarfuse;

namespace {

struct CommonArgs {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
};

CLI::App* add_command(CLI::App& app, CommonArgs& args, const char* name, const char* desc) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    cmd->add_option("--config", args.config, "key-value config file");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out, "override the output directory");
    return cmd;
}

pipeline::PipelineConfig resolve(const CLI::App* cmd, const CommonArgs& args) {
    pipeline::PipelineConfig cfg;
    if (!args.config.empty()) cfg = pipeline::PipelineConfig::load(args.config);
    if (cmd->count("--seed") > 0) cfg.seed = args.seed;
    if (!args.out.empty()) cfg.out_dir = args.out;
    const std::string warning = cfg.validate();
    if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polarfuse: radar-camera fusion on polar grids"};
    app.require_subcommand(1);
    CommonArgs args;
    CLI::App* gen = add_command(app, args, "gen", "generate a synthetic dataset");
    CLI::App* train = add_command(app, args, "train", "train a model on a dataset");
    CLI::App* infer = add_command(app, args, "infer", "run a checkpoint and write detections");
    CLI::App* eval = add_command(app, args, "eval", "score a checkpoint against ground truth");
    CLI::App* bench = add_command(app, args, "bench", "measure FPS, parameters, and model size");
    CLI::App* warp = add_command(app, args, "warp", "export camera, BEV, and polar views");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) {
            const pipeline::PipelineConfig cfg = resolve(gen, args);
            if (cfg.out_dir.empty())
                throw std::invalid_argument("gen: an output directory is required");
            const auto m = pipeline::generate_synthetic_dataset(cfg, cfg.n_frames, cfg.out_dir);
            std::cout << "wrote " << m.n_frames << " frames to " << cfg.out_dir << "\n";
        } else if (train->parsed()) {
            const auto sum = pipeline::train_model(resolve(train, args));
            std::cout << "trained " << sum.epochs << " epochs (" << sum.steps
                      << " steps), final loss " << sum.final_loss << "\n"
                      << "checkpoint: " << sum.checkpoint_path << "\n";
        } else if (infer->parsed()) {
            std::cout << "detections: " << pipeline::run_infer(resolve(infer, args)) << "\n";
        } else if (eval->parsed()) {
            std::cout << pipeline::run_eval(resolve(eval, args)).table();
        } else if (bench->parsed()) {
            std::cout << pipeline::run_bench(resolve(bench, args)).table();
        } else if (warp->parsed()) {
            const pipeline::PipelineConfig cfg = resolve(warp, args);
            pipeline::run_warp(cfg);
            std::cout << "wrote camera.ppm, bev.ppm, polar.ppm to " << cfg.out_dir << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
