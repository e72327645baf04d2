// Command-line front end: train / eval / predict / decouple / curves /
// features. Exit codes: 0 success, 1 usage error, 2 data error.

#include <iostream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mcnet/labels.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/pipeline.hpp"

namespace {

using namespace mcnet;

// simple axis plot of a 256-point curve, written as a PNG
void plot_curve(const std::vector<std::pair<double, double>>& points, const std::string& x_label,
                const std::string& y_label, const std::string& path) {
    const int size = 480, margin = 48;
    cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
    const int lo = margin, hi = size - margin;
    cv::line(img, {lo, hi}, {hi, hi}, cv::Scalar(0, 0, 0), 1);
    cv::line(img, {lo, hi}, {lo, lo}, cv::Scalar(0, 0, 0), 1);
    cv::putText(img, x_label, {size / 2 - 30, size - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0));
    cv::putText(img, y_label, {6, size / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
    auto to_px = [&](double x, double y) {
        return cv::Point(lo + int((hi - lo) * x), hi - int((hi - lo) * y));
    };
    for (size_t i = 1; i < points.size(); ++i)
        cv::line(img, to_px(points[i - 1].first, points[i - 1].second),
                 to_px(points[i].first, points[i].second), cv::Scalar(180, 60, 20), 2);
    cv::imwrite(path, img);
}

int run_eval(const std::string& pred, const std::string& gt, const std::string& out,
             const std::string& curves_out, const std::string& plot_dir,
             const std::string& dataset, const std::string& method) {
    auto report = evaluate_dataset(pred, gt);
    for (const auto& issue : report.issues) std::cerr << "note: " << issue << "\n";
    if (report.images == 0) {
        std::cerr << "error: no evaluable image pairs\n";
        return 2;
    }
    if (!out.empty()) write_report_csv(report, out, dataset, method);
    if (!curves_out.empty()) write_curves_csv(report, curves_out);
    if (!plot_dir.empty()) {
        std::filesystem::create_directories(plot_dir);
        std::vector<std::pair<double, double>> pr, f;
        for (int t = 0; t < 256; ++t) {
            pr.emplace_back(report.recall[size_t(t)], report.precision[size_t(t)]);
            f.emplace_back(double(t) / 255.0, report.f_curve[size_t(t)]);
        }
        plot_curve(pr, "recall", "precision",
                   (std::filesystem::path(plot_dir) / "pr_curve.png").string());
        plot_curve(f, "threshold", "F-measure",
                   (std::filesystem::path(plot_dir) / "f_curve.png").string());
    }
    std::printf("images=%d Favg=%.6f Fmax=%.6f Fw=%.6f MAE=%.6f Em=%.6f Sm=%.6f\n", report.images,
                report.f_avg, report.f_max, report.f_weighted, report.mae, report.e_m, report.s_m);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCNet: mirror-complementary RGB-thermal salient object detection"};
    app.require_subcommand(1);

    // ----- train -----
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string cfg_file, resume;
    std::vector<std::string> overrides;
    train_cmd->add_option("--config", cfg_file, "key=value config file");
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");
    train_cmd->add_option("--set", overrides, "override: key=value (repeatable)");
    std::map<std::string, std::string> flag_overrides;
    for (const char* key :
         {"epochs", "batch_size", "lr_backbone", "lr_other", "momentum", "weight_decay",
          "input_size", "seed", "backbone_preset", "interaction", "use_sdc", "dataset_root",
          "checkpoint_dir", "backbone_init", "max_steps", "grad_clip"})
        train_cmd->add_option_function<std::string>(
            "--" + std::string(key), [&flag_overrides, key](const std::string& v) { flag_overrides[key] = v; },
            "config override");

    // ----- eval / curves -----
    std::string pred_dir, gt_dir, out_file, curves_file, plot_dir, dataset = "dataset",
                                                                   method = "mcnet";
    auto* eval_cmd = app.add_subcommand("eval", "evaluate saliency maps against ground truth");
    eval_cmd->add_option("--pred", pred_dir, "prediction directory")->required();
    eval_cmd->add_option("--gt", gt_dir, "ground-truth directory")->required();
    eval_cmd->add_option("--out", out_file, "report CSV path")->required();
    eval_cmd->add_option("--curves", curves_file, "also write the PR/F curve CSV");
    eval_cmd->add_option("--dataset", dataset, "dataset label in the report");
    eval_cmd->add_option("--method", method, "method label in the report");

    auto* curves_cmd = app.add_subcommand("curves", "write PR/F curve CSV and plots");
    curves_cmd->add_option("--pred", pred_dir, "prediction directory")->required();
    curves_cmd->add_option("--gt", gt_dir, "ground-truth directory")->required();
    curves_cmd->add_option("--out", curves_file, "curve CSV path")->required();
    curves_cmd->add_option("--plot", plot_dir, "directory for plot images");

    // ----- predict -----
    auto* predict_cmd = app.add_subcommand("predict", "write saliency maps for an RGB/T directory");
    std::string checkpoint, input_root, out_dir;
    PredictOptions popt;
    predict_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    predict_cmd->add_option("--input", input_root, "root with RGB/ and T/")->required();
    predict_cmd->add_option("--out", out_dir, "output directory")->required();
    predict_cmd->add_option("--size", popt.input_size, "network input size override");
    predict_cmd->add_flag("--branches", popt.branch_maps, "also write per-branch maps");

    // ----- decouple -----
    auto* dec_cmd = app.add_subcommand("decouple", "skeleton/contour decoupling of a GT directory");
    bool per_component = false;
    dec_cmd->add_option("--gt", gt_dir, "ground-truth directory")->required();
    dec_cmd->add_option("--out", out_dir, "output directory")->required();
    dec_cmd->add_flag("--per-component", per_component, "normalize each component separately");

    // ----- features -----
    auto* feat_cmd = app.add_subcommand("features", "dump named intermediate feature maps");
    std::string sample_name;
    int feat_size = 0;
    feat_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    feat_cmd->add_option("--data", input_root, "dataset root (RGB/T/GT)")->required();
    feat_cmd->add_option("--name", sample_name, "sample basename (default: first)");
    feat_cmd->add_option("--out", out_dir, "output directory")->required();
    feat_cmd->add_option("--size", feat_size, "network input size override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);   // prints help or the usage message
        return code == 0 ? 0 : 1;       // normalize all usage errors to 1
    }

    try {
        if (train_cmd->parsed()) {
            TrainConfig cfg;
            try {
                if (!cfg_file.empty()) cfg = load_train_config(cfg_file);
                for (const auto& [k, v] : flag_overrides) apply_override(cfg, k, v);
                for (const auto& kv : overrides) {
                    const auto eq = kv.find('=');
                    if (eq == std::string::npos)
                        throw std::invalid_argument("--set expects key=value, got " + kv);
                    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
                }
                cfg.validate();
            } catch (const std::invalid_argument& e) {
                std::cerr << "usage error: " << e.what() << "\n";
                return 1;
            }
            auto res = train(cfg, resume);
            std::cout << "trained " << res.steps_run << " steps; final checkpoint "
                      << res.final_checkpoint << "\n";
        } else if (eval_cmd->parsed()) {
            return run_eval(pred_dir, gt_dir, out_file, curves_file, "", dataset, method);
        } else if (curves_cmd->parsed()) {
            return run_eval(pred_dir, gt_dir, "", curves_file, plot_dir, dataset, method);
        } else if (predict_cmd->parsed()) {
            const int n = predict(checkpoint, input_root, out_dir, popt);
            std::cout << "wrote " << n << " saliency maps to " << out_dir << "\n";
            if (n == 0) return 2;
        } else if (dec_cmd->parsed()) {
            auto stats = decouple_directory(gt_dir, out_dir, per_component);
            std::cout << "decoupled " << stats.processed << " masks (" << stats.skipped
                      << " skipped)\n";
            if (stats.processed == 0) return 2;
        } else if (feat_cmd->parsed()) {
            auto manifest = scan_dataset(input_root);
            if (manifest.entries.empty()) {
                std::cerr << "error: empty dataset\n";
                return 2;
            }
            const ManifestEntry* entry = &manifest.entries.front();
            if (!sample_name.empty()) {
                entry = nullptr;
                for (const auto& e : manifest.entries)
                    if (e.name == sample_name) entry = &e;
                if (!entry) {
                    std::cerr << "error: no sample named " << sample_name << "\n";
                    return 2;
                }
            }
            const int n = dump_features(checkpoint, *entry, out_dir, feat_size);
            std::cout << "wrote " << n << " feature maps to " << out_dir << "\n";
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
