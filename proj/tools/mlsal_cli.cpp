// mlsal command-line driver.
#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mlsal/dataset_io.hpp"
#include "mlsal/image_io.hpp"
#include "mlsal/mlsal.hpp"
#include "mlsal/plot.hpp"

namespace fs = std::filesystem;
using namespace mlsal;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

int exit_code_for(const Error& e) {
    const std::string c = e.category();
    if (c == "configuration" || c == "parse") return kUsage;
    if (c == "divergence") return kDiverged;
    return kData;
}

/// Relative output paths land under $MLSAL_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
    const char* root = std::getenv("MLSAL_OUTPUT_ROOT");
    fs::path path(p);
    if (root && *root && path.is_relative()) return fs::path(root) / path;
    return path;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void ensure_dir(const fs::path& d) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec || !fs::is_directory(d)) throw StorageError("cannot create directory '" + d.string() + "'");
}

class Manifest {
public:
    Manifest(std::string command, fs::path file) : file_(std::move(file)) {
        j_["command"] = std::move(command);
        j_["started"] = utc_now();
    }
    json& operator[](const char* k) { return j_[k]; }
    void write() {
        j_["written"] = utc_now();
        std::ofstream out(file_);
        if (!out) throw StorageError("cannot write manifest '" + file_.string() + "'");
        out << j_.dump(2) << '\n';
    }

private:
    json j_;
    fs::path file_;
};

int cmd_gen_synthetic(const std::string& spec_file, const std::string& out_arg) {
    SyntheticSpec spec;
    if (!spec_file.empty()) spec = synthetic_spec_from_json(read_json_file(spec_file));
    spec.validate();
    const fs::path out = output_path(out_arg);
    ensure_dir(out);
    Manifest m("gen-synthetic", out / "manifest.json");
    m["config_path"] = spec_file;
    m["seed"] = spec.seed;
    m["output_dir"] = out.string();
    m["config"] = to_json(spec);
    m.write();
    write_synthetic(generate_synthetic(spec), out);
    std::cout << "wrote " << spec.count << " saliency and " << spec.count << " edge samples to " << out << '\n';
    return kOk;
}

int cmd_extract_contours(const std::string& mask_dir, const std::string& out_arg) {
    if (!fs::is_directory(mask_dir)) throw IngestionError("mask directory '" + mask_dir + "' does not exist");
    std::vector<fs::path> masks;
    for (const auto& e : fs::directory_iterator(mask_dir)) {
        if (e.is_regular_file() && detail::is_image_file(e.path())) masks.push_back(e.path());
    }
    if (masks.empty()) throw IngestionError("no masks found in '" + mask_dir + "'");
    std::sort(masks.begin(), masks.end());

    const fs::path out = output_path(out_arg);
    ensure_dir(out);
    Manifest m("extract-contours", out / "manifest.json");
    m["config_path"] = mask_dir;
    m["output_dir"] = out.string();
    m["config"] = {{"canny_low", CannyThresholds{}.low}, {"canny_high", CannyThresholds{}.high}};
    m.write();

    std::size_t written = 0;
    for (const auto& p : masks) {
        Tensor mask;
        try {
            mask = io::read_map(p);
        } catch (const Error& e) {
            std::cerr << "warning: " << e.what() << ", skipped\n";
            continue;
        }
        if (!is_binary(mask)) {
            std::cerr << "warning: '" << p.string() << "' is not a binary mask, skipped\n";
            continue;
        }
        io::write_map(out / (p.stem().string() + ".png"), extract_foreground_contour(mask));
        ++written;
    }
    std::cout << "wrote " << written << " of " << masks.size() << " contour maps to " << out << '\n';
    if (written == 0) {
        std::cerr << "error: every mask was skipped\n";
        return kData;
    }
    return kOk;
}

int cmd_train(const std::string& config_file, const std::string& resume) {
    RunConfig rc = run_config_from_json(read_json_file(config_file));
    rc.train.validate();
    for (const auto* d : {&rc.saliency_dir, &rc.edge_dir}) {
        if (d->empty()) throw ConfigError("config needs data.saliency_dir and data.edge_dir");
        if (!fs::is_directory(*d)) throw ConfigError("dataset path '" + *d + "' does not exist");
    }
    const fs::path out = output_path(rc.output_dir);
    ensure_dir(out);
    Manifest m("train", out / "manifest.json");
    m["config_path"] = config_file;
    m["seed"] = rc.train.seed;
    m["output_dir"] = out.string();
    m["config"] = to_json(rc);
    m["resolved_model"] = to_json(rc.train.effective_model());
    m.write();

    const int size = rc.train.effective_model().backbone.input_size;
    const auto sal = load_dataset(rc.saliency_dir, SampleKind::saliency, size);
    const auto edge = load_dataset(rc.edge_dir, SampleKind::edge, size);

    FitOptions opts;
    opts.checkpoint_dir = out;
    if (!resume.empty()) opts.resume = Archive::load(resume);
    std::ofstream log(out / "loss.log", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw StorageError("cannot write '" + (out / "loss.log").string() + "'");
    if (resume.empty()) log << "# step l_s l_e l_mimicry l_dec total\n";
    opts.log = &log;

    const auto t0 = std::chrono::steady_clock::now();
    FitResult r = fit(rc.train, sal, edge, std::move(opts));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained " << r.log.size() << " steps in " << std::fixed << std::setprecision(1) << secs << " s";
    if (!r.log.empty()) std::cout << ", final total loss " << std::setprecision(6) << r.log.back().total;
    std::cout << "\ncheckpoint: " << (out / "final.ckpt").string() << '\n';
    return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& task, const std::string& out_arg) {
    if (task != "saliency" && task != "edge") throw ConfigError("--task must be saliency or edge");
    TrainState state = TrainState::load(Archive::load(ckpt));
    const Model& model = state.model();
    if (task == "edge" && !model.edges_enabled()) {
        throw LoadError("checkpoint '" + ckpt + "' has no edge modules; cannot evaluate edges");
    }
    const fs::path out = output_path(out_arg);
    ensure_dir(out);
    Manifest m("eval", out / "manifest.json");
    m["config_path"] = ckpt;
    m["seed"] = state.config().seed;
    m["output_dir"] = out.string();
    m["config"] = {{"task", task}, {"dataset", data_dir}, {"thresholds", kDefaultThresholds}};
    m.write();

    const auto kind = task == "saliency" ? SampleKind::saliency : SampleKind::edge;
    const auto records = load_dataset(data_dir, kind, model.input_size());
    if (records.empty()) throw IngestionError("dataset '" + data_dir + "' is empty");

    std::vector<std::pair<std::string, double>> entries;
    if (task == "saliency") {
        const auto e = evaluate_saliency(model, records);
        entries = report_entries(e.report);
        write_pr_csv(out / "pr.csv", e.report.pr);
    } else {
        const auto e = evaluate_edges(model, records);
        entries = report_entries(e.scores);
        write_pr_csv(out / "pr.csv", e.pr);
    }
    write_report(out / "report.txt", entries);
    for (const auto& [k, v] : entries) std::cout << k << ": " << v << '\n';
    return kOk;
}

int cmd_predict(const std::string& ckpt, const std::string& input, const std::string& out_arg, bool edge) {
    TrainState state = TrainState::load(Archive::load(ckpt));
    const Model& model = state.model();
    if (edge && !model.edges_enabled()) throw ConfigError("--edge needs a checkpoint with edge modules");

    std::vector<fs::path> images;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input)) {
            if (e.is_regular_file() && detail::is_image_file(e.path())) images.push_back(e.path());
        }
        std::sort(images.begin(), images.end());
    } else if (fs::exists(input)) {
        images.emplace_back(input);
    } else {
        throw IngestionError("input '" + input + "' does not exist");
    }
    if (images.empty()) throw IngestionError("no images found in '" + input + "'");

    const fs::path out = output_path(out_arg);
    ensure_dir(out);
    Manifest m("predict", out / "manifest.json");
    m["config_path"] = ckpt;
    m["seed"] = state.config().seed;
    m["output_dir"] = out.string();
    m["config"] = {{"input", input}, {"edge", edge}, {"model", to_json(model.config())}};
    m.write();

    std::size_t done = 0;
    for (const auto& p : images) {
        Tensor img;
        try {
            img = io::read_image(p);
        } catch (const Error& e) {
            std::cerr << "warning: " << e.what() << ", skipped\n";
            continue;
        }
        const Prediction pr = predict(model, img);
        io::write_map(out / (p.stem().string() + ".png"), pr.saliency);
        if (edge) io::write_map(out / (p.stem().string() + "_edge.png"), *pr.edge);
        ++done;
    }
    std::cout << "wrote " << done << " prediction(s) to " << out << '\n';
    return done > 0 ? kOk : kData;
}

int cmd_plot_pr(const std::vector<std::string>& csvs, std::vector<std::string> labels, const std::string& out_arg) {
    if (!labels.empty() && labels.size() != csvs.size()) throw ConfigError("--label must be given once per --csv");
    std::vector<LabeledCurve> curves;
    for (std::size_t i = 0; i < csvs.size(); ++i) {
        curves.push_back({labels.empty() ? fs::path(csvs[i]).parent_path().filename().string() : labels[i],
                          read_pr_csv(csvs[i])});
        if (curves.back().label.empty()) curves.back().label = fs::path(csvs[i]).stem().string();
    }
    const fs::path out = output_path(out_arg);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    Manifest m("plot-pr", fs::path(out.string() + ".manifest.json"));
    m["config_path"] = csvs;
    m["output_dir"] = out.parent_path().string();
    m["config"] = {{"labels", labels}};
    m.write();
    write_pr_plot(out, curves);
    std::cout << "wrote " << out.string() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Saliency detection with intertwined multi-supervision"};
    app.require_subcommand(0, 1);

    std::string dump;
    app.add_option("--dump-config", dump, "Print a full default config and exit: train (default), full or synthetic")
        ->expected(0, 1)
        ->default_str("train");

    auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic saliency + edge dataset");
    std::string gen_spec, gen_out = "data/synthetic";
    gen->add_option("--spec", gen_spec, "Synthetic spec JSON (defaults when omitted)");
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    auto* ext = app.add_subcommand("extract-contours", "Foreground contours from binary masks");
    std::string ext_masks, ext_out;
    ext->add_option("--masks", ext_masks, "Directory of mask images")->required();
    ext->add_option("--out", ext_out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train from a run config");
    std::string train_cfg, train_resume;
    train->add_option("--config", train_cfg, "Run config JSON")->required();
    train->add_option("--resume", train_resume, "Checkpoint to continue from");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_task = "saliency", eval_out;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data, "Dataset root with images/ and targets/")->required();
    eval->add_option("--task", eval_task)->check(CLI::IsMember({"saliency", "edge"}))->capture_default_str();
    eval->add_option("--out", eval_out, "Report directory")->required();

    auto* pred = app.add_subcommand("predict", "Write saliency (and edge) maps");
    std::string pred_ckpt, pred_in, pred_out;
    bool pred_edge = false;
    pred->add_option("--checkpoint", pred_ckpt)->required();
    pred->add_option("--input", pred_in, "Image file or directory")->required();
    pred->add_option("--out", pred_out, "Output directory")->required();
    pred->add_flag("--edge", pred_edge, "Also write E* maps as <name>_edge.png");

    auto* plot = app.add_subcommand("plot-pr", "Render PR curves from CSV reports");
    std::vector<std::string> plot_csv, plot_labels;
    std::string plot_out;
    plot->add_option("--csv", plot_csv, "PR CSV (repeat to overlay)")->required();
    plot->add_option("--label", plot_labels, "Legend label per CSV");
    plot->add_option("--out", plot_out, "Output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (app.count("--dump-config")) {
            if (dump.empty() || dump == "train") {
                RunConfig rc;
                rc.saliency_dir = "data/synthetic/saliency";
                rc.edge_dir = "data/synthetic/edge";
                std::cout << to_json(rc).dump(2) << '\n';
            } else if (dump == "full" || dump == "train-full") {
                RunConfig rc;
                rc.train.model = ModelConfig::full();
                json j = to_json(rc);
                j["model"]["scale"] = "full";
                std::cout << j.dump(2) << '\n';
            } else if (dump == "synthetic") {
                std::cout << to_json(SyntheticSpec{}).dump(2) << '\n';
            } else {
                std::cerr << "error: --dump-config takes train, full or synthetic\n";
                return kUsage;
            }
            return kOk;
        }
        if (*gen) return cmd_gen_synthetic(gen_spec, gen_out);
        if (*ext) return cmd_extract_contours(ext_masks, ext_out);
        if (*train) return cmd_train(train_cfg, train_resume);
        if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_task, eval_out);
        if (*pred) return cmd_predict(pred_ckpt, pred_in, pred_out, pred_edge);
        if (*plot) return cmd_plot_pr(plot_csv, plot_labels, plot_out);
        std::cout << app.help();
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "error (" << e.category() << "): " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
}
