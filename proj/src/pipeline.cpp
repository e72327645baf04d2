#include "mcnet/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mcnet/losses.hpp"

namespace mcnet {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw std::invalid_argument("not a boolean: " + v);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (lr_backbone <= 0 || lr_other <= 0) throw std::invalid_argument("learning rates must be > 0");
    if (lr_backbone >= lr_other)
        throw std::invalid_argument("lr_backbone must be smaller than lr_other");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must be in [0,1)");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (input_size < 1) throw std::invalid_argument("input_size must be >= 1");
    interaction_mode_from_string(interaction);  // throws on an unknown name
    if (backbone_preset != "swin_b" && backbone_preset != "toy")
        throw std::invalid_argument("unknown backbone preset: " + backbone_preset);
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.backbone = backbone_preset == "toy" ? BackboneConfig::toy() : BackboneConfig::swin_b();
    m.interaction = interaction_mode_from_string(interaction);
    m.use_sdc = use_sdc;
    return m;
}

std::map<std::string, std::string> TrainConfig::snapshot() const {
    return {
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"lr_backbone", num(lr_backbone)},
        {"lr_other", num(lr_other)},
        {"momentum", num(momentum)},
        {"weight_decay", num(weight_decay)},
        {"input_size", std::to_string(input_size)},
        {"seed", std::to_string(seed)},
        {"backbone_preset", backbone_preset},
        {"interaction", interaction},
        {"use_sdc", use_sdc ? "1" : "0"},
        {"dataset_root", dataset_root},
        {"checkpoint_dir", checkpoint_dir},
        {"backbone_init", backbone_init},
        {"shuffle", shuffle ? "1" : "0"},
        {"augment", augment ? "1" : "0"},
        {"max_steps", std::to_string(max_steps)},
        {"grad_clip", num(grad_clip)},
        {"checkpoint_every", std::to_string(checkpoint_every)},
        {"epoch_checkpoints", epoch_checkpoints ? "1" : "0"},
    };
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "epochs") cfg.epochs = std::stoi(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "lr_backbone") cfg.lr_backbone = std::stod(value);
    else if (key == "lr_other") cfg.lr_other = std::stod(value);
    else if (key == "momentum") cfg.momentum = std::stod(value);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
    else if (key == "input_size") cfg.input_size = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "backbone_preset") cfg.backbone_preset = value;
    else if (key == "interaction") cfg.interaction = value;
    else if (key == "use_sdc") cfg.use_sdc = parse_bool(value);
    else if (key == "dataset_root") cfg.dataset_root = value;
    else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
    else if (key == "backbone_init") cfg.backbone_init = value;
    else if (key == "shuffle") cfg.shuffle = parse_bool(value);
    else if (key == "augment") cfg.augment = parse_bool(value);
    else if (key == "max_steps") cfg.max_steps = std::stoi(value);
    else if (key == "grad_clip") cfg.grad_clip = std::stod(value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(value);
    else if (key == "epoch_checkpoints") cfg.epoch_checkpoints = parse_bool(value);
    else throw std::invalid_argument("unknown config key: " + key);
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

double lr_schedule(int64_t step, int64_t total_steps, double lr_max) {
    if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw std::out_of_range("lr_schedule step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
    const double half = double(total_steps) / 2.0;
    const double s = double(step);
    return s <= half ? lr_max * s / half : lr_max * (double(total_steps) - s) / half;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<std::pair<std::string, ag::Var*>> backbone,
                           std::vector<std::pair<std::string, ag::Var*>> other,
                           double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
    backbone_.params = std::move(backbone);
    other_.params = std::move(other);
    for (auto* g : {&backbone_, &other_})
        for (auto& [name, p] : g->params) g->velocity.emplace_back(p->shape());
}

double SgdOptimizer::grad_norm() const {
    double sq = 0;
    for (const auto* g : {&backbone_, &other_})
        for (const auto& [name, p] : g->params) {
            if (!p->has_grad()) continue;
            for (int64_t i = 0; i < p->grad().numel(); ++i)
                sq += double(p->grad()[i]) * double(p->grad()[i]);
        }
    return std::sqrt(sq);
}

void SgdOptimizer::step_group(Group& g, double lr, double clip_scale) {
    for (size_t i = 0; i < g.params.size(); ++i) {
        ag::Var* p = g.params[i].second;
        if (!p->has_grad()) continue;
        Tensor& v = g.velocity[i];
        Tensor& w = p->value();
        const Tensor& grad = p->grad();
        for (int64_t k = 0; k < w.numel(); ++k) {
            const float d = float(clip_scale) * grad[k] + float(weight_decay_) * w[k];
            v[k] = float(momentum_) * v[k] + d;
            w[k] -= float(lr) * v[k];
        }
    }
}

void SgdOptimizer::step(double lr_backbone, double lr_other, double grad_clip) {
    double clip_scale = 1.0;
    if (grad_clip > 0) {
        const double n = grad_norm();
        if (n > grad_clip) clip_scale = grad_clip / n;
    }
    step_group(backbone_, lr_backbone, clip_scale);
    step_group(other_, lr_other, clip_scale);
}

void SgdOptimizer::save(BlobFile& file, const std::string& prefix) const {
    for (const auto* g : {&backbone_, &other_})
        for (size_t i = 0; i < g->params.size(); ++i)
            file.tensors[prefix + g->params[i].first] = g->velocity[i];
}

void SgdOptimizer::load(const BlobFile& file, const std::string& prefix) {
    for (auto* g : {&backbone_, &other_})
        for (size_t i = 0; i < g->params.size(); ++i) {
            auto it = file.tensors.find(prefix + g->params[i].first);
            if (it == file.tensors.end())
                throw std::runtime_error("optimizer state missing: " + g->params[i].first);
            if (it->second.shape != g->velocity[i].shape)
                throw std::runtime_error("optimizer state shape mismatch: " + g->params[i].first);
            g->velocity[i] = it->second;
        }
}

int64_t SgdOptimizer::backbone_parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : backbone_.params) n += p->numel();
    return n;
}

int64_t SgdOptimizer::other_parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : other_.params) n += p->numel();
    return n;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, McnetModel& model, const SgdOptimizer* opt,
                     const TrainConfig& cfg, int epoch, int64_t step_in_epoch,
                     int64_t global_step) {
    BlobFile blob;
    save_state(model, blob, "model.");
    if (opt) opt->save(blob, "opt.");
    blob.strings["format"] = "mcnet-checkpoint-1";
    blob.strings["epoch"] = std::to_string(epoch);
    blob.strings["step_in_epoch"] = std::to_string(step_in_epoch);
    blob.strings["global_step"] = std::to_string(global_step);
    for (const auto& [k, v] : cfg.snapshot()) blob.strings["cfg." + k] = v;
    blob.save(path);
}

std::unique_ptr<McnetModel> load_model_checkpoint(const std::string& path, TrainConfig* cfg_out) {
    BlobFile blob = BlobFile::load(path);
    TrainConfig cfg;
    for (const auto& [k, v] : blob.strings)
        if (k.rfind("cfg.", 0) == 0) apply_override(cfg, k.substr(4), v);
    Rng rng(0);
    auto model = std::make_unique<McnetModel>(cfg.model_config(), rng);
    load_state(*model, blob, /*strict=*/true, "model.");
    if (cfg_out) *cfg_out = cfg;
    return model;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const std::string& resume_from) {
    cfg.validate();
    fs::create_directories(cfg.checkpoint_dir);

    auto manifest = scan_dataset(cfg.dataset_root);
    BatchIterator::Options dopt;
    dopt.batch_size = cfg.batch_size;
    dopt.input_size = cfg.input_size;
    dopt.shuffle = cfg.shuffle;
    dopt.augment = cfg.augment;
    dopt.seed = cfg.seed;
    BatchIterator data(manifest, dopt);

    Rng init_rng(cfg.seed, 0xB0D3);
    McnetModel model(cfg.model_config(), init_rng);
    if (!cfg.backbone_init.empty()) {
        BlobFile pretrained = BlobFile::load(cfg.backbone_init);
        load_state(model.encoder_rgb, pretrained, /*strict=*/false);
        load_state(model.encoder_t, pretrained, /*strict=*/false);
    }

    SgdOptimizer opt(model.backbone_parameters(), model.other_parameters(), cfg.momentum,
                     cfg.weight_decay);
    const int64_t n_backbone = opt.backbone_parameter_count();
    const int64_t n_other = opt.other_parameter_count();
    if (n_backbone + n_other != model.parameter_count())
        throw std::logic_error("parameter groups do not partition the model");
    std::cout << "parameters: backbone=" << n_backbone << " other=" << n_other
              << " total=" << (n_backbone + n_other) << " (preset=" << cfg.backbone_preset
              << " interaction=" << cfg.interaction << " sdc=" << (cfg.use_sdc ? "on" : "off")
              << ")\n";

    int epoch = 0;
    int64_t step_in_epoch = 0, global_step = 0;
    if (!resume_from.empty()) {
        BlobFile blob = BlobFile::load(resume_from);
        load_state(model, blob, /*strict=*/true, "model.");
        opt.load(blob);
        epoch = std::stoi(blob.strings.at("epoch"));
        step_in_epoch = std::stoll(blob.strings.at("step_in_epoch"));
        global_step = std::stoll(blob.strings.at("global_step"));
    }

    // the schedule's iteration cycle is the configured run length; max_steps
    // is only an early stop, so a stopped-and-resumed run follows the same
    // learning-rate curve as an uninterrupted one
    const int64_t steps_per_epoch = data.batches_per_epoch();
    const int64_t total_steps = int64_t(cfg.epochs) * steps_per_epoch;

    const std::string log_path = (fs::path(cfg.checkpoint_dir) / "loss_log.csv").string();
    const bool fresh_log = !fs::exists(log_path) || fs::file_size(log_path) == 0;
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open loss log: " + log_path);
    if (fresh_log) log << "epoch,l_rgb,l_thermal,l_fusion,total\n";

    model.set_training(true);
    TrainResult result;
    bool done = false;
    for (; epoch < cfg.epochs; ++epoch) {
        data.start_epoch(epoch);
        if (step_in_epoch > 0) data.skip(step_in_epoch);
        Batch batch;
        while (data.next(batch)) {
            if (cfg.max_steps > 0 && global_step >= cfg.max_steps) {
                done = true;
                break;
            }
            ag::Var rgb(batch.rgb), thermal(batch.thermal);
            auto out = model.forward(rgb, thermal);
            auto loss = total_loss<float>(out.pred_rgb, out.pred_t, out.pred_fusion,
                                          ag::Var(batch.skeleton), ag::Var(batch.contour),
                                          ag::Var(batch.gt));
            const double total = double(loss.total.value()[0]);
            if (!std::isfinite(total)) {
                std::string names;
                for (const auto& n : batch.names) names += (names.empty() ? "" : ", ") + n;
                std::ofstream dump(fs::path(cfg.checkpoint_dir) / "diverged_batch.txt");
                dump << names << "\n";
                throw std::runtime_error("non-finite loss at step " + std::to_string(global_step) +
                                         "; batch: " + names);
            }
            model.zero_grad();
            loss.total.backward();

            const int64_t sched_step = std::min<int64_t>(global_step + 1, total_steps);
            opt.step(lr_schedule(sched_step, total_steps, cfg.lr_backbone),
                     lr_schedule(sched_step, total_steps, cfg.lr_other), cfg.grad_clip);

            char row[200];
            std::snprintf(row, sizeof(row), "%d,%.12f,%.12f,%.12f,%.12f\n", epoch,
                          double(loss.l_rgb.value()[0]), double(loss.l_thermal.value()[0]),
                          double(loss.l_fusion.value()[0]), total);
            log << row;
            log.flush();

            ++global_step;
            ++step_in_epoch;
            ++result.steps_run;
            result.last_total_loss = total;

            if (cfg.checkpoint_every > 0 && global_step % cfg.checkpoint_every == 0) {
                char name[64];
                std::snprintf(name, sizeof(name), "step_%06lld.ckpt",
                              static_cast<long long>(global_step));
                save_checkpoint((fs::path(cfg.checkpoint_dir) / name).string(), model, &opt, cfg,
                                epoch, step_in_epoch, global_step);
            }
        }
        if (done) break;  // max_steps cap hit mid-epoch; keep the position
        step_in_epoch = 0;
        if (cfg.epoch_checkpoints) {
            char name[64];
            std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
            save_checkpoint((fs::path(cfg.checkpoint_dir) / name).string(), model, &opt, cfg,
                            epoch + 1, 0, global_step);
        }
    }

    result.final_checkpoint = (fs::path(cfg.checkpoint_dir) / "final.ckpt").string();
    save_checkpoint(result.final_checkpoint, model, &opt, cfg, epoch, step_in_epoch, global_step);
    return result;
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

namespace {

void write_gray(const Tensor& prob, int oh, int ow, const std::string& path) {
    cv::Mat small(int(prob.shape[0]), int(prob.shape[1]), CV_32FC1,
                  const_cast<float*>(prob.data.data()));
    cv::Mat big;
    cv::resize(small, big, cv::Size(ow, oh), 0, 0, cv::INTER_LINEAR);
    cv::Mat out(oh, ow, CV_8UC1);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out.at<uint8_t>(y, x) =
                uint8_t(std::lround(255.0f * std::clamp(big.at<float>(y, x), 0.0f, 1.0f)));
    cv::imwrite(path, out);
}

Tensor slice_map(const Tensor& batch) {  // (1,1,S,S) -> (S,S)
    Tensor out({batch.shape[2], batch.shape[3]});
    std::copy_n(batch.data.begin(), out.numel(), out.data.begin());
    return out;
}

}  // namespace

int predict(const std::string& checkpoint_path, const std::string& input_root,
            const std::string& out_dir, const PredictOptions& popt) {
    TrainConfig cfg;
    auto model = load_model_checkpoint(checkpoint_path, &cfg);
    const int size = popt.input_size > 0 ? popt.input_size : cfg.input_size;
    model->set_training(false);

    const fs::path root(input_root);
    for (const char* sub : {"RGB", "T"})
        if (!fs::is_directory(root / sub))
            throw std::runtime_error("predict input is missing subdirectory " + std::string(sub));
    std::map<std::string, fs::path> rgb, th;
    for (const auto& e : fs::directory_iterator(root / "RGB"))
        if (e.is_regular_file()) rgb[e.path().stem().string()] = e.path();
    for (const auto& e : fs::directory_iterator(root / "T"))
        if (e.is_regular_file()) th[e.path().stem().string()] = e.path();

    fs::create_directories(out_dir);
    int written = 0;
    for (const auto& [name, rgb_path] : rgb) {
        auto ti = th.find(name);
        if (ti == th.end()) {
            std::cerr << "warning: no thermal counterpart for " << name << ", skipping\n";
            continue;
        }
        try {
            cv::Mat rgb_img = cv::imread(rgb_path.string(), cv::IMREAD_COLOR);
            cv::Mat t_img = cv::imread(ti->second.string(), cv::IMREAD_COLOR);
            if (rgb_img.empty() || t_img.empty()) throw std::runtime_error("unreadable image pair");
            const int oh = rgb_img.rows, ow = rgb_img.cols;
            auto prep = [&](const cv::Mat& img) {
                cv::Mat r;
                cv::resize(img, r, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
                Tensor t({1, 3, size, size});
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        const auto& px = r.at<cv::Vec3b>(y, x);
                        t.at4(0, 0, y, x) = float(px[2]) / 255.0f;
                        t.at4(0, 1, y, x) = float(px[1]) / 255.0f;
                        t.at4(0, 2, y, x) = float(px[0]) / 255.0f;
                    }
                normalize_channels(t);
                return t;
            };
            ag::NoGradGuard no_grad;
            auto out = model->forward(ag::Var(prep(rgb_img)), ag::Var(prep(t_img)));
            write_gray(slice_map(out.pred_fusion.value()), oh, ow,
                       (fs::path(out_dir) / (name + ".png")).string());
            if (popt.branch_maps) {
                write_gray(slice_map(out.pred_rgb.value()), oh, ow,
                           (fs::path(out_dir) / (name + "_rgb.png")).string());
                write_gray(slice_map(out.pred_t.value()), oh, ow,
                           (fs::path(out_dir) / (name + "_t.png")).string());
            }
            ++written;
        } catch (const std::exception& e) {
            std::cerr << "warning: " << name << ": " << e.what() << "\n";
        }
    }
    return written;
}

int dump_features(const std::string& checkpoint_path, const ManifestEntry& entry,
                  const std::string& out_dir, int input_size) {
    TrainConfig cfg;
    auto model = load_model_checkpoint(checkpoint_path, &cfg);
    const int size = input_size > 0 ? input_size : cfg.input_size;
    model->set_training(false);

    RgbtPair pair = load_pair(entry, size);
    Tensor rgb({1, 3, size, size}), thermal({1, 3, size, size});
    std::copy_n(pair.rgb.data.begin(), rgb.numel(), rgb.data.begin());
    std::copy_n(pair.thermal.data.begin(), thermal.numel(), thermal.data.begin());
    normalize_channels(rgb);
    normalize_channels(thermal);

    FeatureDump dump;
    {
        ag::NoGradGuard no_grad;
        model->forward(ag::Var(rgb), ag::Var(thermal), &dump);
    }

    fs::create_directories(out_dir);
    int written = 0;
    for (const auto& [key, feat] : dump) {
        const int64_t c = feat.shape[1], h = feat.shape[2], w = feat.shape[3];
        Tensor mean({h, w});
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < h * w; ++i) mean[i] += feat[ch * h * w + i] / float(c);
        float lo = mean[0], hi = mean[0];
        for (int64_t i = 0; i < mean.numel(); ++i) {
            lo = std::min(lo, mean[i]);
            hi = std::max(hi, mean[i]);
        }
        const float range = hi - lo > 0 ? hi - lo : 1.0f;
        for (int64_t i = 0; i < mean.numel(); ++i) mean[i] = (mean[i] - lo) / range;
        write_gray(mean, int(h), int(w), (fs::path(out_dir) / (entry.name + "_" + key + ".png")).string());
        ++written;
    }
    return written;
}

}  // namespace mcnet
