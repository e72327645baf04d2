#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mcnet/data.hpp"
#include "mcnet/model.hpp"

namespace mcnet {

struct TrainConfig {
    int epochs = 48;
    int batch_size = 16;
    double lr_backbone = 0.005;
    double lr_other = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int input_size = 384;
    uint64_t seed = 0;
    std::string backbone_preset = "swin_b";  // "swin_b" | "toy"
    std::string interaction = "full";        // full | share | cross | noninteraction
    bool use_sdc = true;
    std::string dataset_root;
    std::string checkpoint_dir = "checkpoints";
    std::string backbone_init;  // optional pretrained encoder blob
    bool shuffle = true;
    bool augment = true;
    int max_steps = 0;        // stop after this many optimizer steps (0 = all)
    double grad_clip = 0.0;   // global-norm clip, 0 disables
    int checkpoint_every = 0; // extra step-interval checkpoints (0 = per epoch only)
    bool epoch_checkpoints = true;  // off: only final.ckpt (long toy runs)

    // Enforces lr_backbone < lr_other and positivity of all rates.
    void validate() const;

    ModelConfig model_config() const;
    std::map<std::string, std::string> snapshot() const;
};

// Flat key=value file, '#' comments; unknown keys are an error.
TrainConfig load_train_config(const std::string& path);
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

// Triangular schedule: 0 -> lr_max over the first half of total_steps,
// lr_max -> 0 over the second half. Throws when step is out of [0, total].
double lr_schedule(int64_t step, int64_t total_steps, double lr_max);

// SGD with momentum and decoupled-by-name parameter groups. Velocity
// buffers are part of the checkpoint so a resumed run continues bit-for-bit.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<std::pair<std::string, ag::Var*>> backbone,
                 std::vector<std::pair<std::string, ag::Var*>> other,
                 double momentum, double weight_decay);

    // lr per group for this step (already scheduled by the caller)
    void step(double lr_backbone, double lr_other, double grad_clip = 0.0);

    void save(BlobFile& file, const std::string& prefix = "opt.") const;
    void load(const BlobFile& file, const std::string& prefix = "opt.");

    int64_t backbone_parameter_count() const;
    int64_t other_parameter_count() const;

private:
    struct Group {
        std::vector<std::pair<std::string, ag::Var*>> params;
        std::vector<Tensor> velocity;
    };
    void step_group(Group& g, double lr, double clip_scale);
    double grad_norm() const;

    Group backbone_, other_;
    double momentum_, weight_decay_;
};

struct TrainResult {
    std::string final_checkpoint;
    int64_t steps_run = 0;
    double last_total_loss = 0;
};

// Runs the full recipe: two LR groups on the triangular schedule, per-step
// loss log (CSV: epoch,l_rgb,l_thermal,l_fusion,total, append-only) and
// atomic per-epoch checkpoints in cfg.checkpoint_dir. `resume_from` restores
// model + optimizer + position and continues the identical trajectory.
// A non-finite loss aborts with the offending batch names in the message
// and in <checkpoint_dir>/diverged_batch.txt.
TrainResult train(const TrainConfig& cfg, const std::string& resume_from = "");

// Writes the model + optimizer + position + config snapshot.
void save_checkpoint(const std::string& path, McnetModel& model, const SgdOptimizer* opt,
                     const TrainConfig& cfg, int epoch, int64_t step_in_epoch,
                     int64_t global_step);

// Rebuilds the model a checkpoint was trained with (preset/ablation flags
// come from the stored config snapshot).
std::unique_ptr<McnetModel> load_model_checkpoint(const std::string& path,
                                                  TrainConfig* cfg_out = nullptr);

struct PredictOptions {
    int input_size = 0;      // 0: take the checkpoint's training size
    bool branch_maps = false;  // additionally write RGB/thermal branch maps
};

// Runs the fused prediction over <input_root>/{RGB,T} and writes 8-bit
// grayscale maps at each image's original resolution to out_dir. Returns the
// number of images written; per-file failures are reported and skipped.
int predict(const std::string& checkpoint_path, const std::string& input_root,
            const std::string& out_dir, const PredictOptions& opt = {});

// Forward hook dump for the `features` CLI command: channel-mean of every
// named intermediate, rescaled to [0,1], one PNG per map.
int dump_features(const std::string& checkpoint_path, const ManifestEntry& entry,
                  const std::string& out_dir, int input_size = 0);

}  // namespace mcnet
