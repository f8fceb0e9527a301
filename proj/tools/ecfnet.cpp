// ecfnet command-line driver: train / infer / eval / degrade / inspect.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ecfnet/metrics.hpp"
#include "ecfnet/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ecfnet;

namespace {

// Exit codes (documented in --help):
//   0 success, 2 missing file, 3 bad config, 4 shape mismatch,
//   5 bad checkpoint, 6 bad arguments.
constexpr int kExitOk = 0;
constexpr int kExitMissingFile = 2;
constexpr int kExitBadConfig = 3;
constexpr int kExitShape = 4;
constexpr int kExitBadCheckpoint = 5;
constexpr int kExitBadArgs = 6;

struct CliFailure {
    int code;
    std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw CliFailure{code, message}; }

void require_file(const std::string& path) {
    if (!fs::exists(path)) fail(kExitMissingFile, "missing file: " + path);
}

// `ECFNET_THREADS` caps internal parallelism. The kernels are serial, so
// any positive value yields identical results; still validate the value so
// typos surface.
void check_thread_env() {
    const char* v = std::getenv("ECFNET_THREADS");
    if (!v) return;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1)
        fail(kExitBadArgs, "ECFNET_THREADS must be a positive integer, got '" + std::string(v) + "'");
}

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, _] : obj.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            fail(kExitBadConfig, "config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

ModelConfig parse_model_config(const json& j) {
    reject_unknown_keys(j, {"preset", "base_channels", "num_blocks", "fdam_k", "fdam_g",
                            "n_output_heads", "convs_single_conv"},
                        "model");
    ModelConfig cfg;
    if (j.contains("preset")) {
        const std::string p = j.at("preset").get<std::string>();
        if (p == "dehaze")
            cfg = ModelConfig::dehaze();
        else if (p == "deblur")
            cfg = ModelConfig::deblur();
        else if (p == "desnow")
            cfg = ModelConfig::desnow();
        else
            fail(kExitBadConfig, "config: unknown model preset '" + p + "'");
    }
    read_key(j, "base_channels", cfg.base_channels);
    read_key(j, "num_blocks", cfg.num_blocks);
    read_key(j, "fdam_k", cfg.fdam_k);
    read_key(j, "fdam_g", cfg.fdam_g);
    read_key(j, "n_output_heads", cfg.n_output_heads);
    read_key(j, "convs_single_conv", cfg.convs_single_conv);
    return cfg;
}

TrainConfig parse_train_config(const json& j) {
    reject_unknown_keys(j, {"beta1", "beta2", "lr_init", "lr_final", "total_steps", "batch",
                            "patch", "flips", "eval_interval", "seed", "loss"},
                        "train");
    TrainConfig cfg;
    read_key(j, "beta1", cfg.beta1);
    read_key(j, "beta2", cfg.beta2);
    read_key(j, "lr_init", cfg.lr_init);
    read_key(j, "lr_final", cfg.lr_final);
    read_key(j, "total_steps", cfg.total_steps);
    read_key(j, "batch", cfg.batch);
    read_key(j, "patch", cfg.patch);
    read_key(j, "flips", cfg.flips);
    read_key(j, "eval_interval", cfg.eval_interval);
    read_key(j, "seed", cfg.seed);
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown_keys(l, {"eps", "lambda", "delta"}, "train.loss");
        read_key(l, "eps", cfg.loss.eps);
        read_key(l, "lambda", cfg.loss.lambda);
        read_key(l, "delta", cfg.loss.delta);
    }
    return cfg;
}

DegradationSpec parse_degradation(const json& j, const std::vector<std::string>& extra_known,
                                  const std::string& where) {
    std::vector<std::string> known{"kind",        "haze_t",          "airlight",
                                   "blur_sigma",  "blur_kernel",     "snow_flakes",
                                   "snow_radius_min", "snow_radius_max", "snow_brightness"};
    known.insert(known.end(), extra_known.begin(), extra_known.end());
    reject_unknown_keys(j, known, where);
    DegradationSpec spec;
    if (j.contains("kind")) spec.kind = parse_kind(j.at("kind").get<std::string>());
    read_key(j, "haze_t", spec.haze_t);
    if (j.contains("airlight")) {
        const auto a = j.at("airlight").get<std::vector<double>>();
        if (a.size() != 3) fail(kExitBadConfig, "config: airlight needs exactly 3 components");
        std::copy(a.begin(), a.end(), spec.airlight.begin());
    }
    read_key(j, "blur_sigma", spec.blur_sigma);
    read_key(j, "blur_kernel", spec.blur_kernel);
    read_key(j, "snow_flakes", spec.snow_flakes);
    read_key(j, "snow_radius_min", spec.snow_radius_min);
    read_key(j, "snow_radius_max", spec.snow_radius_max);
    read_key(j, "snow_brightness", spec.snow_brightness);
    return spec;
}

// Pair directories hold NAME.input.ppm / NAME.target.ppm files.
std::vector<ImagePair> load_pair_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) fail(kExitMissingFile, "missing directory: " + dir);
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const std::string tail = ".input.ppm";
        if (name.size() > tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
            stems.push_back(name.substr(0, name.size() - tail.size()));
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) fail(kExitMissingFile, "no *.input.ppm files in " + dir);
    std::vector<ImagePair> pairs;
    for (const auto& stem : stems) {
        const std::string in = dir + "/" + stem + ".input.ppm";
        const std::string tg = dir + "/" + stem + ".target.ppm";
        require_file(tg);
        pairs.push_back(ImagePair{load_ppm(in), load_ppm(tg)});
        if (pairs.back().input.shape != pairs.back().target.shape)
            fail(kExitShape, "pair '" + stem + "': input and target sizes differ");
    }
    return pairs;
}

std::vector<ImagePair> make_synthetic_pairs(const DegradationSpec& spec, int count, int size,
                                            std::uint64_t seed) {
    std::vector<ImagePair> pairs;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        Tensor clean = make_synthetic_clean(size, size, rng);
        pairs.push_back(ImagePair{degrade(clean, spec, rng), clean});
    }
    return pairs;
}

std::string fmt_metric(double v) {
    if (std::isinf(v)) return "inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ------------------------------------------------------------------ train

int cmd_train(const std::string& config_path) {
    require_file(config_path);
    json doc;
    {
        std::ifstream f(config_path);
        try {
            doc = json::parse(f, nullptr, true, /*ignore_comments=*/false);
        } catch (const json::exception& e) {
            fail(kExitBadConfig, "config: " + std::string(e.what()));
        }
    }
    const fs::path base = fs::absolute(config_path).parent_path();
    try {
        reject_unknown_keys(doc, {"model", "train", "data", "out_dir"}, "config root");
        const ModelConfig mcfg = doc.contains("model") ? parse_model_config(doc.at("model")) : ModelConfig{};
        const TrainConfig tcfg = doc.contains("train") ? parse_train_config(doc.at("train")) : TrainConfig{};
        if (!doc.contains("out_dir")) fail(kExitBadConfig, "config: missing out_dir");
        const fs::path out_dir = base / doc.at("out_dir").get<std::string>();

        if (!doc.contains("data")) fail(kExitBadConfig, "config: missing data section");
        const json& data = doc.at("data");
        reject_unknown_keys(data, {"synthetic", "train_dir", "eval_dir"}, "data");
        std::vector<ImagePair> train_pairs, eval_pairs;
        if (data.contains("synthetic") == data.contains("train_dir"))
            fail(kExitBadConfig, "config: data needs exactly one of 'synthetic' or 'train_dir'");
        if (data.contains("synthetic")) {
            const json& s = data.at("synthetic");
            DegradationSpec spec = parse_degradation(s, {"count", "eval_count", "size", "seed"},
                                                     "data.synthetic");
            int count = 4, eval_count = 1, size = 64;
            std::uint64_t seed = 0;
            read_key(s, "count", count);
            read_key(s, "eval_count", eval_count);
            read_key(s, "size", size);
            read_key(s, "seed", seed);
            train_pairs = make_synthetic_pairs(spec, count, size, seed);
            eval_pairs = make_synthetic_pairs(spec, eval_count, size, seed + 1);
        } else {
            train_pairs = load_pair_dir((base / data.at("train_dir").get<std::string>()).string());
            if (data.contains("eval_dir"))
                eval_pairs = load_pair_dir((base / data.at("eval_dir").get<std::string>()).string());
        }

        fs::create_directories(out_dir);
        Model model(mcfg, tcfg.seed);
        const std::vector<TrainRecord> records = train_loop(model, train_pairs, eval_pairs, tcfg);
        model.save((out_dir / "model.ckpt").string());
        write_loss_csv(records, (out_dir / "loss.csv").string());

        // Sample triptych from the first evaluation (or training) pair.
        const ImagePair& sample = eval_pairs.empty() ? train_pairs.front() : eval_pairs.front();
        save_ppm(sample.input, (out_dir / "sample_input.ppm").string());
        save_ppm(sample.target, (out_dir / "sample_target.ppm").string());
        save_ppm(model.forward(sample.input)[0], (out_dir / "sample_restored.ppm").string());

        std::printf("trained %d steps; final loss %.6g; checkpoint %s\n",
                    static_cast<int>(records.size()),
                    records.empty() ? 0.0 : records.back().loss,
                    (out_dir / "model.ckpt").string().c_str());
        return kExitOk;
    } catch (const json::exception& e) {
        fail(kExitBadConfig, "config: " + std::string(e.what()));
    }
}

// ------------------------------------------------------------------ infer

int cmd_infer(const std::string& model_path, const std::string& input_path,
              const std::string& output_path) {
    require_file(model_path);
    require_file(input_path);
    Model model = Model::load(model_path);
    Tensor image = load_ppm(input_path);
    if (image.shape.h % 16 != 0 || image.shape.w % 16 != 0)
        fail(kExitShape, "input dimensions " + image.shape.str() + " must be divisible by 16");
    save_ppm(model.forward(image)[0], output_path);
    std::printf("wrote %s\n", output_path.c_str());
    return kExitOk;
}

// ------------------------------------------------------------------- eval

int cmd_eval(const std::string& model_path, const std::string& pairs_dir, const std::string& csv_path) {
    require_file(model_path);
    Model model = Model::load(model_path);
    const std::vector<ImagePair> pairs = load_pair_dir(pairs_dir);

    std::string csv = "pair,psnr,ssim,mae\n";
    double sum_psnr = 0, sum_ssim = 0, sum_mae = 0;
    std::printf("%-8s %10s %10s %10s\n", "pair", "psnr", "ssim", "mae");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Tensor out = model.forward(pairs[i].input)[0];
        const double p = psnr(out, pairs[i].target);
        const double s = ssim(out, pairs[i].target);
        const double m = mae(out, pairs[i].target);
        sum_psnr += p;
        sum_ssim += s;
        sum_mae += m;
        std::printf("%-8zu %10s %10s %10s\n", i, fmt_metric(p).c_str(), fmt_metric(s).c_str(),
                    fmt_metric(m).c_str());
        csv += std::to_string(i) + "," + fmt_metric(p) + "," + fmt_metric(s) + "," + fmt_metric(m) + "\n";
    }
    const double n = static_cast<double>(pairs.size());
    std::printf("%-8s %10s %10s %10s\n", "mean", fmt_metric(sum_psnr / n).c_str(),
                fmt_metric(sum_ssim / n).c_str(), fmt_metric(sum_mae / n).c_str());
    csv += "mean," + fmt_metric(sum_psnr / n) + "," + fmt_metric(sum_ssim / n) + "," +
           fmt_metric(sum_mae / n) + "\n";

    if (!csv_path.empty()) {
        std::ofstream f(csv_path, std::ios::trunc);
        if (!f) fail(kExitBadArgs, "cannot open " + csv_path);
        f << csv;
    }
    return kExitOk;
}

// ---------------------------------------------------------------- degrade

int cmd_degrade(const DegradationSpec& spec, const std::string& input_path,
                const std::string& output_path, std::uint64_t seed) {
    require_file(input_path);
    Tensor clean = load_ppm(input_path);
    Rng rng(seed);
    save_ppm(degrade(clean, spec, rng), output_path);
    std::printf("wrote %s\n", output_path.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- inspect

int cmd_inspect(const std::string& model_path, int probe_hw) {
    require_file(model_path);
    Model model = Model::load(model_path);
    const ModelConfig& c = model.config();
    std::printf("base_channels %d, num_blocks %d, fdam_k %d, fdam_g %d, heads %d, convs_single_conv %d\n",
                c.base_channels, c.num_blocks, c.fdam_k, c.fdam_g, c.n_output_heads,
                c.convs_single_conv ? 1 : 0);
    for (Param* p : model.params())
        std::printf("%-24s (%d,%d,%d,%d)\n", p->name.c_str(), p->value.shape.n, p->value.shape.c,
                    p->value.shape.h, p->value.shape.w);
    std::printf("parameters: %lld\n", static_cast<long long>(model.param_count()));
    std::printf("flops @ %dx%d: %lld\n", probe_hw, probe_hw,
                static_cast<long long>(model.flops(probe_hw, probe_hw)));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "ecfnet: multi-scale image restoration\n"
        "Exit codes: 0 success, 2 missing file, 3 bad config, 4 shape mismatch,\n"
        "5 bad checkpoint, 6 bad arguments.\n"
        "Env: ECFNET_THREADS caps internal parallelism (never affects results)."};
    app.require_subcommand(1);

    std::string config_path, model_path, input_path, output_path, pairs_dir, csv_path;
    std::uint64_t seed = 0;
    int probe_hw = 64;
    std::string kind = "haze";
    DegradationSpec spec;
    std::vector<double> airlight;

    CLI::App* train = app.add_subcommand("train", "Train from a JSON run config");
    train->add_option("--config", config_path, "Run config path (JSON)")->required();

    CLI::App* infer = app.add_subcommand("infer", "Restore one image with a checkpoint");
    infer->add_option("--model", model_path, "Checkpoint path")->required();
    infer->add_option("--input", input_path, "Degraded image (PPM P6)")->required();
    infer->add_option("--output", output_path, "Restored image destination")->required();

    CLI::App* eval = app.add_subcommand("eval", "Metrics over a directory of image pairs");
    eval->add_option("--model", model_path, "Checkpoint path")->required();
    eval->add_option("--pairs", pairs_dir, "Directory of NAME.input.ppm / NAME.target.ppm")->required();
    eval->add_option("--csv", csv_path, "Also write the metric table to this CSV");

    CLI::App* degrade_cmd = app.add_subcommand("degrade", "Synthesize a degraded image");
    degrade_cmd->add_option("--kind", kind, "haze|blur|snow")->required();
    degrade_cmd->add_option("--input", input_path, "Clean image (PPM P6)")->required();
    degrade_cmd->add_option("--output", output_path, "Degraded image destination")->required();
    degrade_cmd->add_option("--seed", seed, "Random seed");
    degrade_cmd->add_option("--haze-t", spec.haze_t, "Haze transmission in (0,1]");
    degrade_cmd->add_option("--airlight", airlight, "Haze airlight r g b")->expected(3);
    degrade_cmd->add_option("--blur-sigma", spec.blur_sigma, "Gaussian blur sigma");
    degrade_cmd->add_option("--blur-kernel", spec.blur_kernel, "Gaussian kernel size (odd)");
    degrade_cmd->add_option("--snow-flakes", spec.snow_flakes, "Flake count");
    degrade_cmd->add_option("--snow-radius-min", spec.snow_radius_min, "Min flake radius");
    degrade_cmd->add_option("--snow-radius-max", spec.snow_radius_max, "Max flake radius");
    degrade_cmd->add_option("--snow-brightness", spec.snow_brightness, "Flake brightness");

    CLI::App* inspect = app.add_subcommand("inspect", "Describe a checkpoint");
    inspect->add_option("--model", model_path, "Checkpoint path")->required();
    inspect->add_option("--probe-size", probe_hw, "Square input size for the FLOPs estimate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // exits 0 with help text
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadArgs;
    }

    try {
        check_thread_env();
        if (train->parsed()) return cmd_train(config_path);
        if (infer->parsed()) return cmd_infer(model_path, input_path, output_path);
        if (eval->parsed()) return cmd_eval(model_path, pairs_dir, csv_path);
        if (degrade_cmd->parsed()) {
            spec.kind = parse_kind(kind);
            if (!airlight.empty()) std::copy(airlight.begin(), airlight.end(), spec.airlight.begin());
            return cmd_degrade(spec, input_path, output_path, seed);
        }
        if (inspect->parsed()) return cmd_inspect(model_path, probe_hw);
        std::cerr << "error: no subcommand\n";
        return kExitBadArgs;
    } catch (const CliFailure& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitShape;
    } catch (const ChecksumError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadCheckpoint;
    } catch (const VersionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadCheckpoint;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadArgs;
    }
}
