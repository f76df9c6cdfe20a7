#include "cosplat/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

using namespace cosplat;

namespace {

struct Overrides {
    std::string config;
    std::vector<std::string> sets;
    std::string workdir;
    std::vector<std::pair<std::string, std::string>> flags;
};

// Registers `--name` so that, when given, it assigns `key`.
void flag(CLI::App *cmd, Overrides &o, const std::string &name, const std::string &key, const std::string &help) {
    cmd->add_option_function<std::string>(
        name, [&o, key](const std::string &v) { o.flags.emplace_back(key, v); }, help);
}

void common(CLI::App *cmd, Overrides &o) {
    cmd->add_option("--config", o.config, "key=value config file");
    cmd->add_option("--workdir", o.workdir, "working directory (default: $FREEGEN_WORKDIR or .)");
    cmd->add_option("--set", o.sets, "override a config key, e.g. --set fit.steps=200")->allow_extra_args(false);
    flag(cmd, o, "--seed", "seed", "global seed");
    flag(cmd, o, "--tile-size", "render.tile_size", "rasterizer tile size");
}

RunConfig resolve(const Overrides &o) {
    RunConfig cfg;
    if (const char *env = std::getenv("FREEGEN_WORKDIR"); env && *env) cfg.workdir = env;
    if (!o.config.empty()) load_config_file(cfg, o.config);
    if (!o.workdir.empty()) cfg.workdir = o.workdir;
    for (const auto &[k, v] : o.flags) set_config_value(cfg, k, v);
    for (const auto &s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--set expects key=value, got '" + s + "'");
        set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

void print_report(const nlohmann::json &summary) {
    if (summary.contains("dataset"))
        std::printf("dataset   preset=%s frames=%d\n", summary["dataset"]["preset"].get<std::string>().c_str(),
                    summary["dataset"]["frames"].get<int>());
    if (summary.contains("fit")) std::printf("fit       train_psnr=%s\n", summary["fit"]["train_psnr"].dump().c_str());
    if (summary.contains("refine_train"))
        std::printf("refiner   loss first10=%s last10=%s\n", summary["refine_train"]["first10_mean"].dump().c_str(),
                    summary["refine_train"]["last10_mean"].dump().c_str());
    if (summary.contains("cotrain")) {
        const auto &b = summary["cotrain"]["baseline"];
        std::printf("cotrain   before      psnr 0m=%s 1m=%s 2m=%s\n", b["psnr_0m"].dump().c_str(),
                    b["psnr_1m"].dump().c_str(), b["psnr_2m"].dump().c_str());
        for (const auto &r : summary["cotrain"]["rounds"])
            std::printf("cotrain   round %d     psnr 0m=%s 1m=%s 2m=%s\n", r["round"].get<int>(),
                        r["psnr_0m"].dump().c_str(), r["psnr_1m"].dump().c_str(), r["psnr_2m"].dump().c_str());
    }
    if (summary.contains("eval"))
        for (const auto &row : summary["eval"]["shifts"])
            std::printf("eval      shift %+5.1f m raw %s refined %s\n", row["shift_m"].get<double>(),
                        row["raw"].dump().c_str(), row.value("refined", nlohmann::json()).dump().c_str());
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"cosplat: synthetic driving scenes, Gaussian reconstruction, diffusion refinement"};
    app.require_subcommand(1);
    Overrides o;

    auto *scenegen = app.add_subcommand("scenegen", "generate a scene and its ground-truth drive");
    common(scenegen, o);
    flag(scenegen, o, "--preset", "scenegen.preset", "street | corridor | open");
    flag(scenegen, o, "--frames", "scenegen.frames", "number of frames");
    flag(scenegen, o, "--width", "scenegen.width", "image width");
    flag(scenegen, o, "--height", "scenegen.height", "image height");

    auto *fit = app.add_subcommand("fit", "stage-one Gaussian reconstruction");
    common(fit, o);
    flag(fit, o, "--steps", "fit.steps", "optimization steps");

    auto *refine_train = app.add_subcommand("refine-train", "stage-one refiner training");
    common(refine_train, o);
    flag(refine_train, o, "--steps", "refine.steps", "training steps");

    auto *cotrain = app.add_subcommand("cotrain", "alternating co-training");
    common(cotrain, o);
    flag(cotrain, o, "--rounds", "cotrain.rounds", "co-training rounds");

    auto *eval = app.add_subcommand("eval", "shifted-trajectory evaluation");
    common(eval, o);
    flag(eval, o, "--shifts", "eval.shifts", "comma-separated lateral shifts in meters");
    flag(eval, o, "--steps", "sample.steps", "sampling steps");
    flag(eval, o, "--checkpoint", "eval.checkpoint", "auto | fit | cotrain");

    auto *report = app.add_subcommand("report", "summarize the workdir");
    common(report, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = resolve(o);
        nlohmann::json out;
        if (app.got_subcommand(scenegen)) out = cmd_scenegen(cfg);
        else if (app.got_subcommand(fit)) out = cmd_fit(cfg);
        else if (app.got_subcommand(refine_train)) out = cmd_refine_train(cfg);
        else if (app.got_subcommand(cotrain)) out = cmd_cotrain(cfg);
        else if (app.got_subcommand(eval)) out = cmd_eval(cfg);
        else {
            print_report(cmd_report(cfg));
            return 0;
        }
        for (const char *key : {"train_psnr", "last10_mean", "checkpoint_hash", "scene_checkpoint_hash"})
            if (out.contains(key)) std::printf("%s=%s\n", key, out[key].dump().c_str());
        if (out.contains("hashes")) std::printf("files=%zu\n", out["hashes"].size());
        if (out.contains("raw"))
            for (const auto &r : out["raw"])
                std::printf("shift=%+.1f raw_psnr=%s\n", r["shift_m"].get<double>(), r["mean"]["psnr"].dump().c_str());
        return 0;
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
