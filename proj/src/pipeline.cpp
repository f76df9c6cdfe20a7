#include "cosplat/pipeline.hpp"

#include "cosplat/error.hpp"
#include "cosplat/hash.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace fs = std::filesystem;

namespace cosplat {

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::string unquote(std::string s) {
    s = trim(std::move(s));
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

[[noreturn]] void bad_value(const std::string &key, const std::string &value, const char *kind) {
    throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': expected " + kind + ", got '" + value + "'");
}

long long parse_int(const std::string &key, const std::string &raw) {
    const std::string v = unquote(raw);
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, raw, "an integer");
    return out;
}

std::uint64_t parse_u64(const std::string &key, const std::string &raw) {
    const std::string v = unquote(raw);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, raw, "an unsigned integer");
    return out;
}

double parse_double(const std::string &key, const std::string &raw) {
    const std::string v = unquote(raw);
    char *end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) bad_value(key, raw, "a finite number");
    return out;
}

bool parse_bool(const std::string &key, const std::string &raw) {
    const std::string v = unquote(raw);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, raw, "a boolean");
}

std::vector<std::string> split_list(std::string v) {
    v = trim(v);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') throw Error(ErrorCode::InvalidArgument, "unterminated array '" + v + "'");
        v = v.substr(1, v.size() - 2);
    }
    std::vector<std::string> items;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

using Setter = std::function<void(RunConfig &, const std::string &key, const std::string &value)>;

template <class T> Setter int_field(T RunConfig::*f) {
    return [f](RunConfig &c, const std::string &k, const std::string &v) { c.*f = T(parse_int(k, v)); };
}
Setter double_field(double RunConfig::*f) {
    return [f](RunConfig &c, const std::string &k, const std::string &v) { c.*f = parse_double(k, v); };
}
Setter bool_field(bool RunConfig::*f) {
    return [f](RunConfig &c, const std::string &k, const std::string &v) { c.*f = parse_bool(k, v); };
}
Setter string_field(std::string RunConfig::*f) {
    return [f](RunConfig &c, const std::string &, const std::string &v) { c.*f = unquote(v); };
}
Setter lr_field(double LearningRates::*f) {
    return [f](RunConfig &c, const std::string &k, const std::string &v) { c.lr.*f = parse_double(k, v); };
}

const std::map<std::string, Setter> &setters() {
    static const std::map<std::string, Setter> table = {
        {"workdir", string_field(&RunConfig::workdir)},
        {"seed", [](RunConfig &c, const std::string &k, const std::string &v) { c.seed = parse_u64(k, v); }},
        {"scenegen.preset", string_field(&RunConfig::preset)},
        {"scenegen.frames", int_field(&RunConfig::frames)},
        {"scenegen.width", int_field(&RunConfig::width)},
        {"scenegen.height", int_field(&RunConfig::height)},
        {"scenegen.spacing", double_field(&RunConfig::spacing)},
        {"scenegen.focal_scale", double_field(&RunConfig::focal_scale)},
        {"scenegen.depth_noise", double_field(&RunConfig::depth_noise)},
        {"fit.steps", int_field(&RunConfig::fit_steps)},
        {"fit.init_stride", int_field(&RunConfig::init_stride)},
        {"loss.lambda1", double_field(&RunConfig::lambda1)},
        {"loss.lambda2", double_field(&RunConfig::lambda2)},
        {"lr.position", lr_field(&LearningRates::position)},
        {"lr.opacity", lr_field(&LearningRates::opacity)},
        {"lr.scale", lr_field(&LearningRates::scale)},
        {"lr.rotation", lr_field(&LearningRates::rotation)},
        {"lr.color", lr_field(&LearningRates::color)},
        {"refine.steps", int_field(&RunConfig::refine_steps)},
        {"refine.batch", int_field(&RunConfig::refine_batch)},
        {"refine.crop", int_field(&RunConfig::refine_crop)},
        {"refine.lr", double_field(&RunConfig::refine_lr)},
        {"refine.schedule_steps", int_field(&RunConfig::schedule_steps)},
        {"refine.condition_channels", int_field(&RunConfig::condition_channels)},
        {"refine.degrade_every", int_field(&RunConfig::degrade_every)},
        {"refine.degrade_steps",
         [](RunConfig &c, const std::string &k, const std::string &v) {
             c.degrade_steps.clear();
             for (const auto &item : split_list(v)) c.degrade_steps.push_back(int(parse_int(k, item)));
         }},
        {"sample.steps", int_field(&RunConfig::sample_steps)},
        {"cotrain.rounds", int_field(&RunConfig::rounds)},
        {"cotrain.viewpoints", int_field(&RunConfig::viewpoints)},
        {"cotrain.recon_steps", int_field(&RunConfig::recon_steps)},
        {"cotrain.gen_steps", int_field(&RunConfig::gen_steps)},
        {"cotrain.lateral_range", double_field(&RunConfig::lateral_range)},
        {"cotrain.yaw_jitter", double_field(&RunConfig::yaw_jitter)},
        {"cotrain.anchor_every", int_field(&RunConfig::anchor_every)},
        {"cotrain.oracle_depth", bool_field(&RunConfig::oracle_depth)},
        {"cotrain.dump_pseudo_labels", bool_field(&RunConfig::dump_pseudo_labels)},
        {"eval.shifts",
         [](RunConfig &c, const std::string &k, const std::string &v) {
             c.shifts.clear();
             for (const auto &item : split_list(v)) c.shifts.push_back(parse_double(k, item));
         }},
        {"eval.stride", int_field(&RunConfig::eval_stride)},
        {"eval.checkpoint", string_field(&RunConfig::eval_checkpoint)},
        {"eval.dump_frames", bool_field(&RunConfig::dump_frames)},
        {"render.tile_size", int_field(&RunConfig::tile_size)},
    };
    return table;
}

void require(bool ok, const std::string &what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

std::string join(const std::string &dir, const std::string &rel) { return (fs::path(dir) / rel).string(); }

void require_workdir(const std::string &dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::IoError, "workdir does not exist: " + dir);
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

void write_json(const std::string &path, const nlohmann::json &j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, "malformed JSON in " + path + ": " + e.what());
    }
}

void make_dir(const std::string &path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create directory " + path + ": " + ec.message());
}

char frame_name_buf[64];
std::string frame_file(const char *prefix, int index, const char *ext) {
    std::snprintf(frame_name_buf, sizeof frame_name_buf, "frames/%s_%04d.%s", prefix, index, ext);
    return frame_name_buf;
}

nlohmann::json vec_json(const Eigen::Vector3d &v) { return {v[0], v[1], v[2]}; }

void check_finite(const std::vector<double> &curve, const char *what) {
    for (double v : curve)
        if (!std::isfinite(v)) throw Error(ErrorCode::NumericalError, std::string("non-finite loss in ") + what);
}

double mean_train_psnr(const GaussianScene &scene, const std::vector<GroundTruthFrame> &frames,
                       const TileConfig &tiles, const Eigen::Vector3d &bg) {
    double sum = 0.0;
    for (const auto &f : frames) sum += psnr(composite(rasterize(scene, f.view, tiles), bg), f.image);
    return sum / double(frames.size());
}

double mean_of(const std::vector<double> &v, std::size_t first, std::size_t count) {
    if (v.empty()) return std::nan("");
    first = std::min(first, v.size() - 1);
    count = std::min(count, v.size() - first);
    double s = 0.0;
    for (std::size_t i = first; i < first + count; ++i) s += v[i];
    return s / double(count);
}

nlohmann::json curve_summary(const std::vector<double> &curve) {
    nlohmann::json j;
    j["loss"] = curve;
    if (!curve.empty()) {
        j["first10_mean"] = mean_of(curve, 0, 10);
        j["last10_mean"] = mean_of(curve, curve.size() >= 10 ? curve.size() - 10 : 0, 10);
    }
    return j;
}

} // namespace

TileConfig tiles_for(const RunConfig &cfg) {
    TileConfig t;
    t.tile_size = cfg.tile_size;
    return t;
}

NoiseSchedule schedule_for(const RunConfig &cfg) { return NoiseSchedule::cosine(cfg.schedule_steps); }

CoTrainConfig cotrain_config(const RunConfig &cfg, const Eigen::Vector3d &bg) {
    CoTrainConfig c;
    c.rounds = cfg.rounds;
    c.step1_viewpoints_per_round = cfg.viewpoints;
    c.lateral_range = cfg.lateral_range;
    c.yaw_jitter = cfg.yaw_jitter;
    c.lambda1 = cfg.lambda1;
    c.lambda2 = cfg.lambda2;
    c.recon_steps_per_round = cfg.recon_steps;
    c.gen_steps_per_round = cfg.gen_steps;
    c.anchor_every = cfg.anchor_every;
    c.gen_batch_size = cfg.refine_batch;
    c.gen_crop = cfg.refine_crop;
    c.gen_lr = cfg.refine_lr;
    c.refine_sample_steps = cfg.sample_steps;
    c.seed = derive_seed(cfg.seed, "cotrain");
    c.background = bg;
    c.recon_lr = cfg.lr;
    c.tiles = tiles_for(cfg);
    return c;
}

void RunConfig::validate() const {
    require(frames >= 1, "scenegen.frames must be >= 1");
    require(width >= 8 && height >= 8, "resolution must be at least 8x8");
    require(tile_size >= 1, "render.tile_size must be >= 1");
    require(spacing > 0 && focal_scale > 0, "scenegen.spacing and focal_scale must be > 0");
    require(depth_noise >= 0, "scenegen.depth_noise must be >= 0");
    require(fit_steps >= 0 && init_stride >= 1, "fit.steps must be >= 0 and fit.init_stride >= 1");
    require(lambda1 >= 0 && lambda2 >= 0, "loss weights must be >= 0");
    require(refine_steps >= 0 && refine_batch >= 1 && refine_crop >= 0, "refine.* counts out of range");
    require(refine_lr > 0, "refine.lr must be > 0");
    require(schedule_steps >= 1, "refine.schedule_steps must be >= 1");
    require(condition_channels >= 1 && condition_channels <= 64, "refine.condition_channels must be in [1, 64]");
    require(degrade_every >= 1, "refine.degrade_every must be >= 1");
    for (int k : degrade_steps) require(k >= 0, "refine.degrade_steps must be >= 0");
    require(sample_steps >= 1 && sample_steps <= schedule_steps, "sample.steps must be in [1, schedule_steps]");
    require(rounds >= 0 && viewpoints >= 1 && recon_steps >= 0 && gen_steps >= 0, "cotrain.* counts out of range");
    require(lateral_range >= 0 && yaw_jitter >= 0, "cotrain sampling ranges must be >= 0");
    require(anchor_every >= 0, "cotrain.anchor_every must be >= 0");
    require(!shifts.empty(), "eval.shifts must not be empty");
    require(eval_stride >= 1, "eval.stride must be >= 1");
    require(eval_checkpoint == "auto" || eval_checkpoint == "fit" || eval_checkpoint == "cotrain",
            "eval.checkpoint must be auto, fit or cotrain");
}

nlohmann::json RunConfig::to_json() const {
    return {{"seed", seed},
            {"scenegen",
             {{"preset", preset}, {"frames", frames}, {"width", width}, {"height", height}, {"spacing", spacing},
              {"focal_scale", focal_scale}, {"depth_noise", depth_noise}}},
            {"fit", {{"steps", fit_steps}, {"init_stride", init_stride}}},
            {"loss", {{"lambda1", lambda1}, {"lambda2", lambda2}}},
            {"lr",
             {{"position", lr.position}, {"opacity", lr.opacity}, {"scale", lr.scale}, {"rotation", lr.rotation},
              {"color", lr.color}}},
            {"refine",
             {{"steps", refine_steps}, {"batch", refine_batch}, {"crop", refine_crop}, {"lr", refine_lr},
              {"schedule_steps", schedule_steps}, {"condition_channels", condition_channels},
              {"degrade_every", degrade_every}, {"degrade_steps", degrade_steps}}},
            {"sample", {{"steps", sample_steps}}},
            {"cotrain",
             {{"rounds", rounds}, {"viewpoints", viewpoints}, {"recon_steps", recon_steps}, {"gen_steps", gen_steps},
              {"lateral_range", lateral_range}, {"yaw_jitter", yaw_jitter}, {"anchor_every", anchor_every},
              {"oracle_depth", oracle_depth}}},
            {"eval", {{"shifts", shifts}, {"stride", eval_stride}, {"checkpoint", eval_checkpoint}}},
            {"render", {{"tile_size", tile_size}}}};
}

void set_config_value(RunConfig &cfg, const std::string &key, const std::string &value) {
    const auto &table = setters();
    const auto it = table.find(trim(key));
    if (it == table.end()) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    it->second(cfg, it->first, trim(value));
}

void load_config_file(RunConfig &cfg, const std::string &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::InvalidArgument, path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        set_config_value(cfg, section.empty() ? key : section + "." + key, line.substr(eq + 1));
    }
}

std::uint64_t file_hash(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    std::uint64_t h = kFnvOffset;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) h = fnv1a(buf, std::size_t(in.gcount()), h);
    return h;
}

Dataset load_dataset(const std::string &workdir) {
    require_workdir(workdir);
    Dataset ds;
    ds.manifest = read_json(join(workdir, paths::kManifest));
    try {
        for (const auto &[rel, expected] : ds.manifest.at("hashes").items()) {
            const std::string want = expected.get<std::string>();
            const std::string got = hex64(file_hash(join(workdir, rel)));
            if (got != want)
                throw Error(ErrorCode::IoError,
                            "hash mismatch for " + rel + ": manifest lists " + want + ", file hashes to " + got);
        }
        ds.scene = load_scene(join(workdir, ds.manifest.at("scene").get<std::string>()));
        ds.trajectory = load_trajectory(join(workdir, ds.manifest.at("trajectory").get<std::string>()));
        const auto &entries = ds.manifest.at("frames");
        if (entries.size() != ds.trajectory.size())
            throw Error(ErrorCode::IoError, "manifest frame count does not match trajectory");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            GroundTruthFrame f;
            f.image = read_ppm(join(workdir, entries[i].at("rgb").get<std::string>()));
            f.depth = read_fgdp(join(workdir, entries[i].at("depth").get<std::string>()));
            // Escaping rays are stored as 0.
            for (Eigen::Index k = 0; k < f.depth.size(); ++k)
                if (!(f.depth.data[k] > 0)) f.depth.data[k] = kInf;
            f.view = ds.trajectory.views[i];
            if (f.image.width != f.view.intrinsics.width || f.image.height != f.view.intrinsics.height ||
                !f.depth.same_shape(Image(1, f.image.height, f.image.width)))
                throw Error(ErrorCode::IoError, "frame " + std::to_string(i) + " does not match its intrinsics");
            ds.frames.push_back(std::move(f));
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, std::string("malformed manifest: ") + e.what());
    }
    return ds;
}

std::vector<TrainingPair> build_refiner_pairs(const std::vector<GroundTruthFrame> &frames,
                                              const GaussianScene *fitted, const RunConfig &cfg,
                                              const Eigen::Vector3d &background, std::uint64_t seed) {
    const TileConfig tiles = tiles_for(cfg);
    std::vector<TrainingPair> pairs;
    if (fitted)
        for (const auto &f : frames) pairs.push_back({rasterize(*fitted, f.view, tiles), f.image});

    std::vector<int> counts = cfg.degrade_steps;
    std::sort(counts.begin(), counts.end());
    if (counts.empty()) return pairs;

    std::vector<GroundTruthFrame> sparse;
    for (std::size_t i = 0; i < frames.size(); i += std::size_t(cfg.degrade_every)) sparse.push_back(frames[i]);
    GaussianScene scene = unproject_init(sparse, cfg.init_stride);
    AdamState adam;
    std::mt19937_64 rng(seed);
    int done = 0;
    for (int k : counts) {
        check_finite(fit_scene(scene, adam, sparse, k - done, cfg.lr, cfg.lambda1, cfg.lambda2, tiles, background,
                               rng),
                     "degraded fit");
        done = k;
        for (const auto &f : frames) pairs.push_back({rasterize(scene, f.view, tiles), f.image});
    }
    return pairs;
}

nlohmann::json cmd_scenegen(const RunConfig &cfg) {
    cfg.validate();
    require_workdir(cfg.workdir);
    const std::uint64_t scene_seed = derive_seed(cfg.seed, "scenegen");
    const std::uint64_t noise_seed = derive_seed(cfg.seed, "raytrace");
    const SceneSpec scene = generate_scene(scene_seed, cfg.preset);
    const Trajectory traj =
        make_drive_trajectory(cfg.frames, Intrinsics::centered(cfg.width, cfg.height, cfg.focal_scale), cfg.spacing);
    const auto frames = render_dataset(scene, traj, {cfg.depth_noise, noise_seed});

    make_dir(join(cfg.workdir, "frames"));
    save_scene(join(cfg.workdir, paths::kScene), scene);
    save_trajectory(join(cfg.workdir, paths::kTrajectory), traj);

    nlohmann::json manifest;
    manifest["format"] = "cosplat-dataset";
    manifest["version"] = 1;
    manifest["preset"] = cfg.preset;
    manifest["seed"] = cfg.seed;
    manifest["seeds"] = {{"scenegen", scene_seed}, {"raytrace", noise_seed}};
    manifest["width"] = cfg.width;
    manifest["height"] = cfg.height;
    manifest["depth_noise"] = cfg.depth_noise;
    manifest["scene"] = paths::kScene;
    manifest["trajectory"] = paths::kTrajectory;
    nlohmann::json hashes = nlohmann::json::object();
    hashes[paths::kScene] = hex64(file_hash(join(cfg.workdir, paths::kScene)));
    hashes[paths::kTrajectory] = hex64(file_hash(join(cfg.workdir, paths::kTrajectory)));
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string rgb = frame_file("rgb", int(i), "ppm");
        const std::string depth = frame_file("depth", int(i), "fgdp");
        write_ppm(join(cfg.workdir, rgb), frames[i].image);
        write_fgdp(join(cfg.workdir, depth), frames[i].depth);
        hashes[rgb] = hex64(file_hash(join(cfg.workdir, rgb)));
        hashes[depth] = hex64(file_hash(join(cfg.workdir, depth)));
        entries.push_back({{"index", traj.frames[i]}, {"rgb", rgb}, {"depth", depth}});
    }
    manifest["frames"] = entries;
    manifest["hashes"] = hashes;
    write_json(join(cfg.workdir, paths::kManifest), manifest);
    return manifest;
}

nlohmann::json cmd_fit(const RunConfig &cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg.workdir);
    const TileConfig tiles = tiles_for(cfg);
    const Eigen::Vector3d bg = estimate_background(ds.frames);
    GaussianScene scene = unproject_init(ds.frames, cfg.init_stride);
    const std::size_t initial = scene.size();
    AdamState adam;
    const std::uint64_t stage_seed = derive_seed(cfg.seed, "fit");
    std::mt19937_64 rng(stage_seed);
    const auto curve = fit_scene(scene, adam, ds.frames, cfg.fit_steps, cfg.lr, cfg.lambda1, cfg.lambda2, tiles, bg, rng);
    check_finite(curve, "fit");

    const std::string ckpt = join(cfg.workdir, paths::kGaussians);
    save_checkpoint(ckpt, scene);
    nlohmann::json report = curve_summary(curve);
    report["command"] = "fit";
    report["config"] = cfg.to_json();
    report["stage_seed"] = stage_seed;
    report["steps"] = cfg.fit_steps;
    report["gaussians"] = initial;
    report["background"] = vec_json(bg);
    report["train_psnr"] = metric_value(mean_train_psnr(scene, ds.frames, tiles, bg));
    report["checkpoint"] = paths::kGaussians;
    report["checkpoint_hash"] = hex64(file_hash(ckpt));
    write_json(join(cfg.workdir, paths::kFitReport), report);
    return report;
}

nlohmann::json cmd_refine_train(const RunConfig &cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg.workdir);
    const GaussianScene fitted = load_checkpoint(join(cfg.workdir, paths::kGaussians));
    const Eigen::Vector3d bg = estimate_background(ds.frames);
    const auto pairs = build_refiner_pairs(ds.frames, &fitted, cfg, bg, derive_seed(cfg.seed, "refine-pairs"));

    const NoiseSchedule sched = schedule_for(cfg);
    DenoiserParams params = DenoiserParams::random(derive_seed(cfg.seed, "refine-init"), cfg.condition_channels);
    DenoiserOptimizer opt;
    opt.lr = cfg.refine_lr;
    RefinerTrainConfig tc;
    tc.steps = cfg.refine_steps;
    tc.batch_size = cfg.refine_batch;
    tc.crop = cfg.refine_crop;
    tc.lr = cfg.refine_lr;
    tc.seed = derive_seed(cfg.seed, "refine-train");
    const auto curve = train_refiner(pairs, params, sched, opt, tc);
    check_finite(curve, "refine-train");

    const std::string ckpt = join(cfg.workdir, paths::kRefiner);
    save_denoiser(ckpt, params);
    nlohmann::json report = curve_summary(curve);
    report["command"] = "refine-train";
    report["config"] = cfg.to_json();
    report["stage_seed"] = tc.seed;
    report["steps"] = cfg.refine_steps;
    report["pairs"] = pairs.size();
    report["checkpoint"] = paths::kRefiner;
    report["checkpoint_hash"] = hex64(file_hash(ckpt));
    report["architecture_hash"] = params.architecture_hash();
    write_json(join(cfg.workdir, paths::kRefineReport), report);
    return report;
}

nlohmann::json cmd_cotrain(const RunConfig &cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg.workdir);
    const GaussianScene scene = load_checkpoint(join(cfg.workdir, paths::kGaussians));
    const DenoiserParams refiner = load_denoiser(join(cfg.workdir, paths::kRefiner));
    const NoiseSchedule sched = schedule_for(cfg);
    const Eigen::Vector3d bg = estimate_background(ds.frames);
    const CoTrainConfig cc = cotrain_config(cfg, bg);

    const double round_shifts[] = {0.0, 1.0, -1.0, 2.0, -2.0};
    const ShiftEvalSet eval = ShiftEvalSet::build(ds.scene, ds.trajectory, round_shifts, cfg.eval_stride);
    DepthOracle oracle;
    if (cfg.oracle_depth) oracle = [&ds](const CameraView &v) { return std::optional<Image>(raytrace(ds.scene, v).depth); };

    const CoTrainResult result = run_cotraining(scene, refiner, sched, ds.trajectory, ds.frames, cc, &eval, oracle);

    const std::string scene_ckpt = join(cfg.workdir, paths::kCoGaussians);
    const std::string refiner_ckpt = join(cfg.workdir, paths::kCoRefiner);
    save_checkpoint(scene_ckpt, result.scene);
    save_denoiser(refiner_ckpt, result.refiner);

    std::string lines;
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto &r : result.reports) {
        const nlohmann::json j = to_json(r);
        lines += j.dump() + "\n";
        rounds.push_back(j);
    }
    write_text(join(cfg.workdir, paths::kRounds), lines);

    if (cfg.dump_pseudo_labels) {
        make_dir(join(cfg.workdir, "pseudo_labels"));
        for (std::size_t i = 0; i < result.last_pseudo_labels.size(); ++i) {
            const auto &p = result.last_pseudo_labels[i];
            const std::string stem = "pseudo_labels/round" + std::to_string(p.round) + "_" + std::to_string(i);
            write_ppm(join(cfg.workdir, stem + ".ppm"), p.image);
            write_json(join(cfg.workdir, stem + ".json"),
                       {{"round", p.round}, {"refine_seed", p.refine_seed},
                        {"source_render_hash", hex64(p.source_render_hash)}, {"has_depth", p.has_depth},
                        {"view", to_json(Trajectory{{p.view}, {int(i)}}).at("views")[0]}});
        }
    }

    nlohmann::json report;
    report["command"] = "cotrain";
    report["config"] = cfg.to_json();
    report["stage_seed"] = cc.seed;
    report["baseline"] = {{"psnr_0m", metric_value(eval.mean_psnr(scene, 0.0, cc.tiles, bg))},
                          {"psnr_1m", metric_value(eval.mean_psnr(scene, 1.0, cc.tiles, bg))},
                          {"psnr_2m", metric_value(eval.mean_psnr(scene, 2.0, cc.tiles, bg))}};
    report["rounds"] = rounds;
    report["scene_checkpoint_hash"] = hex64(file_hash(scene_ckpt));
    report["refiner_checkpoint_hash"] = hex64(file_hash(refiner_ckpt));
    write_json(join(cfg.workdir, paths::kCoReport), report);
    return report;
}

nlohmann::json cmd_eval(const RunConfig &cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg.workdir);
    const auto exists = [&](const char *rel) { return fs::exists(join(cfg.workdir, rel)); };
    const bool use_cotrain =
        cfg.eval_checkpoint == "cotrain" || (cfg.eval_checkpoint == "auto" && exists(paths::kCoGaussians));
    const char *scene_rel = use_cotrain ? paths::kCoGaussians : paths::kGaussians;
    const char *refiner_rel = use_cotrain ? paths::kCoRefiner : paths::kRefiner;
    const GaussianScene scene = load_checkpoint(join(cfg.workdir, scene_rel));
    std::optional<DenoiserParams> refiner;
    if (use_cotrain || exists(refiner_rel)) refiner = load_denoiser(join(cfg.workdir, refiner_rel));

    const TileConfig tiles = tiles_for(cfg);
    const NoiseSchedule sched = schedule_for(cfg);
    const Eigen::Vector3d bg = estimate_background(ds.frames);
    const auto trajectories = build_eval_trajectories(ds.trajectory, cfg.shifts, cfg.eval_stride);
    if (cfg.dump_frames) make_dir(join(cfg.workdir, "eval"));

    std::vector<Image> raw, refined, oracle;
    std::vector<std::pair<double, int>> keys;
    for (std::size_t s = 0; s < trajectories.size(); ++s) {
        const auto &traj = trajectories[s];
        for (std::size_t i = 0; i < traj.size(); ++i) {
            const RenderOutput render = rasterize(scene, traj.views[i], tiles);
            raw.push_back(composite(render, bg));
            if (refiner) {
                char stage[64];
                std::snprintf(stage, sizeof stage, "eval/%+.3f/%d", cfg.shifts[s], traj.frames[i]);
                const std::uint64_t seed = derive_seed(cfg.seed, stage);
                refined.push_back(refine(render, *refiner, sched, cfg.sample_steps, seed));
            }
            oracle.push_back(raytrace(ds.scene, traj.views[i]).image);
            keys.emplace_back(cfg.shifts[s], traj.frames[i]);
            if (cfg.dump_frames) {
                char stem[96];
                std::snprintf(stem, sizeof stem, "eval/shift%+.2f_frame%04d", cfg.shifts[s], traj.frames[i]);
                write_ppm(join(cfg.workdir, std::string(stem) + "_raw.ppm"), raw.back());
                write_ppm(join(cfg.workdir, std::string(stem) + "_oracle.ppm"), oracle.back());
                if (refiner) write_ppm(join(cfg.workdir, std::string(stem) + "_refined.ppm"), refined.back());
            }
        }
    }

    const auto frames_of = [&](const std::vector<Image> &images) {
        std::vector<EvalFrame> out;
        for (std::size_t i = 0; i < images.size(); ++i) out.push_back({keys[i].first, keys[i].second, &images[i]});
        return out;
    };
    const auto oracle_frames = frames_of(oracle);

    nlohmann::json report;
    report["command"] = "eval";
    report["config"] = cfg.to_json();
    report["checkpoint"] = scene_rel;
    report["refiner"] = refiner ? nlohmann::json(refiner_rel) : nlohmann::json(nullptr);
    report["raw"] = to_json(evaluate_protocol(frames_of(raw), oracle_frames, cfg.shifts));
    report["refined"] = refiner ? to_json(evaluate_protocol(frames_of(refined), oracle_frames, cfg.shifts))
                                : nlohmann::json(nullptr);
    write_json(join(cfg.workdir, paths::kEvalReport), report);
    return report;
}

nlohmann::json cmd_report(const RunConfig &cfg) {
    require_workdir(cfg.workdir);
    const auto load = [&](const char *rel) -> std::optional<nlohmann::json> {
        if (!fs::exists(join(cfg.workdir, rel))) return std::nullopt;
        return read_json(join(cfg.workdir, rel));
    };
    nlohmann::json summary = nlohmann::json::object();
    if (const auto m = load(paths::kManifest))
        summary["dataset"] = {{"preset", m->value("preset", "")}, {"seed", m->value("seed", 0)},
                              {"frames", m->contains("frames") ? m->at("frames").size() : 0}};
    if (const auto f = load(paths::kFitReport))
        summary["fit"] = {{"steps", f->value("steps", 0)}, {"train_psnr", f->value("train_psnr", nlohmann::json())},
                          {"last10_mean", f->value("last10_mean", nlohmann::json())}};
    if (const auto r = load(paths::kRefineReport))
        summary["refine_train"] = {{"steps", r->value("steps", 0)},
                                   {"first10_mean", r->value("first10_mean", nlohmann::json())},
                                   {"last10_mean", r->value("last10_mean", nlohmann::json())}};
    if (const auto c = load(paths::kCoReport)) {
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto &r : c->at("rounds"))
            rounds.push_back({{"round", r.at("round")}, {"psnr_0m", r.at("psnr_0m")}, {"psnr_1m", r.at("psnr_1m")},
                              {"psnr_2m", r.at("psnr_2m")}});
        summary["cotrain"] = {{"baseline", c->at("baseline")}, {"rounds", rounds}};
    }
    if (const auto e = load(paths::kEvalReport)) {
        nlohmann::json rows = nlohmann::json::array();
        const auto &raw = e->at("raw");
        const auto &ref = e->at("refined");
        for (std::size_t i = 0; i < raw.size(); ++i) {
            nlohmann::json row = {{"shift_m", raw[i].at("shift_m")}, {"raw", raw[i].at("mean")}};
            if (!ref.is_null()) row["refined"] = ref[i].at("mean");
            rows.push_back(row);
        }
        summary["eval"] = {{"checkpoint", e->at("checkpoint")}, {"shifts", rows}};
    }
    write_json(join(cfg.workdir, paths::kSummary), summary);
    return summary;
}

int exit_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::NoValidPixels:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::LengthMismatch:
        return 3;
    case ErrorCode::NumericalError:
        return 4;
    default:
        return 2;
    }
}

} // namespace cosplat
