#pragma once

#include "xsum/dataset.hpp"
#include "xsum/tsum_decoder.hpp"
#include "xsum/video_encoder.hpp"
#include "xsum/vsum_decoder.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>

namespace xsum {

struct TrainConfig {
    double lambda_v = 15.0;
    double lambda_t = 1.0;
    double base_lr = 2e-5;
    double weight_decay = 5e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 56;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double budget_ratio = kDefaultBudgetRatio;

    void validate() const;
};

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)); cosine to zero.
double lr_at(long step, long total_steps, const TrainConfig& cfg);

double total_loss(double loss_v, double loss_t, const TrainConfig& cfg);

// Full VTSUM model: frozen frame encoder, shared temporal encoder, and the
// two task decoders.
struct Model {
    std::shared_ptr<FrameEncoder> frame_encoder;
    std::unique_ptr<TemporalEncoder> temporal;
    std::unique_ptr<VsumDecoder> vsum;
    std::unique_ptr<TsumDecoder> tsum;
    EncoderConfig enc_cfg;
    VsumConfig vsum_cfg;
    TsumConfig tsum_cfg;

    static Model create(const EncoderConfig& enc, const VsumConfig& vs,
                        const TsumConfig& ts, Vocabulary vocab,
                        std::shared_ptr<FrameEncoder> frame_enc = nullptr);

    // All trainable parameters (frame encoder excluded: frozen).
    std::vector<std::pair<std::string, ad::Var>> parameters() const;
    void zero_grad();

    // Temporally aware features for one record.
    ad::Var encode(const VideoRecord& video, const std::vector<int>& mask = {}) const;

    Eigen::VectorXd score_frames_inference(const VideoRecord& video) const;
    std::vector<int> summarize_video(const VideoRecord& video,
                                     double budget_ratio = kDefaultBudgetRatio) const;
    std::string summarize_text(const VideoRecord& video,
                               const GenerateOptions& opts = {}) const;
};

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    AdamW(const TrainConfig& cfg, const std::vector<std::pair<std::string, ad::Var>>& params);

    void step(double lr);
    long step_count() const { return t_; }

    // For checkpointing.
    std::map<std::string, std::pair<ad::Mat, ad::Mat>>& moments() { return moments_; }
    void set_step_count(long t) { t_ = t; }

private:
    TrainConfig cfg_;
    std::vector<std::pair<std::string, ad::Var>> params_;
    std::map<std::string, std::pair<ad::Mat, ad::Mat>> moments_;  // (m, v)
    long t_ = 0;
};

struct StepLosses {
    double loss_v = 0.0;
    double loss_t = 0.0;
    double total = 0.0;
};

// One gradient step on a batch. Throws on non-finite loss or gradient,
// naming the offending parameter.
StepLosses train_step(const std::vector<const CorpusRecord*>& batch, Model& model,
                      AdamW& optimizer, const TrainConfig& cfg, double lr);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0, train_loss_v = 0.0, train_loss_t = 0.0;
    double val_f1_avg = 0.0;
    double val_nll_per_token = 0.0;
};

struct FitResult {
    std::vector<EpochLog> history;
    int best_epoch = -1;
};

struct FitOptions {
    std::optional<std::filesystem::path> checkpoint_path;       // best-by-val
    std::optional<std::filesystem::path> last_checkpoint_path;  // every epoch
    std::optional<std::filesystem::path> resume_from;
    // Stop after this epoch index even though the lr schedule still spans
    // cfg.epochs; pairs with resume_from for interrupted runs.
    std::optional<int> epoch_limit;
    std::function<void(const EpochLog&)> on_epoch;
};

FitResult fit(const std::vector<CorpusRecord>& train_set,
              const std::vector<CorpusRecord>& val_set, Model& model,
              const TrainConfig& cfg, const FitOptions& opts = {});

// Checkpoint I/O. Binary layout: magic "XSUMCK01", u64 little-endian JSON
// header length, JSON header (config, vocabulary, block table with offsets),
// then raw little-endian float64 blocks. Reload reproduces forward passes
// bit-exactly.
struct CheckpointExtra {
    int epoch = 0;
    long opt_step = 0;
    std::map<std::string, double> metrics;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamW* optimizer = nullptr, const CheckpointExtra& extra = {});

struct LoadedCheckpoint {
    Model model;
    CheckpointExtra extra;
    std::map<std::string, std::pair<ad::Mat, ad::Mat>> moments;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xsum
