#ifndef ASC_TRAIN_HPP
#define ASC_TRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "asc/checkpoint.hpp"
#include "asc/context.hpp"
#include "asc/dataset.hpp"
#include "asc/encoder.hpp"
#include "asc/eval.hpp"
#include "asc/refine.hpp"

namespace asc {

/// Step decay: initial_lr * gamma^floor(epoch / period_epochs).
struct Schedule {
  double initial_lr = 3e-4;
  double gamma = 0.1;
  Index period_epochs = 40;

  static Schedule ste_default() { return {3e-4, 0.1, 40}; }
  static Schedule asc_default() { return {3e-6, 0.1, 10}; }
  void validate() const;
};

double lr_at(const Schedule& schedule, Index epoch);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(NamedTensors params, double learning_rate, AdamOptions options = {});

  /// Applies one bias-corrected update from the accumulated gradients.
  /// Parameters without a gradient count as zero gradient. Throws
  /// NumericError naming the first parameter with a non-finite gradient,
  /// before anything is modified.
  void step();
  void zero_grad();

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return steps_; }
  const NamedTensors& parameters() const { return params_; }
  const std::vector<Buffer>& first_moments() const { return m_; }
  const std::vector<Buffer>& second_moments() const { return v_; }

 private:
  NamedTensors params_;
  double lr_;
  AdamOptions opt_;
  std::int64_t steps_ = 0;
  std::vector<Buffer> m_, v_;
};

// Clips -------------------------------------------------------------------------

struct ClipConfig {
  Index k = 11;
  double tau = 0.44;
  Index crop_size = 32;
  MelConfig mel;

  /// Mel frames produced for a clip of length tau.
  Index mel_frames() const;
  void validate() const;
};

/// Turns (track, time) requests into encoder inputs.
class ClipBuilder {
 public:
  ClipBuilder(const MediaSource& media, ClipConfig cfg);

  const ClipConfig& config() const { return cfg_; }

  /// visual [3k, H, W] and audio [1, Q, P]. With `augment_rng`, one flip and
  /// corner crop is drawn and applied to the whole stack.
  std::pair<Tensor, Tensor> clip(const std::string& video_id, const std::string& track_id, double t,
                                 Rng* augment_rng = nullptr) const;
  /// Stacks clips into [N, 3k, H, W] and [N, 1, Q, P].
  std::pair<Tensor, Tensor> batch(const std::vector<ClipDescriptor>& clips, Rng* augment_rng = nullptr) const;

 private:
  const MediaSource& media_;
  ClipConfig cfg_;
};

/// Checks that an encoder config accepts the clips a builder produces.
void check_compatible(const EncoderConfig& encoder, const ClipConfig& clips);

// Training ----------------------------------------------------------------------

struct EpochMetrics {
  Index epoch = 0;
  std::string split;
  double loss = 0;
  double ap = 0;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const EpochMetrics& m);

struct SteTrainConfig {
  EncoderConfig encoder;
  ClipConfig clips;
  Schedule schedule = Schedule::ste_default();
  AdamOptions adam;
  Index epochs = 100;
  Index batch_size = 8;
  /// Clips drawn per track per epoch.
  Index clips_per_track = 1;
  bool augment = true;
  /// Validation scores every n-th detection of each held-out track.
  Index val_stride = 1;
  std::uint64_t seed = 0;
};

struct TrainResult {
  NamedTensors best_state;
  Index best_epoch = -1;
  double best_ap = -1;
  std::vector<EpochMetrics> metrics;
  std::int64_t optimizer_steps = 0;
};

/// Trains `encoder` in place; the returned best_state holds the parameters of
/// the epoch with the highest validation AP (the last epoch when `val` is
/// empty). Metrics rows are also streamed to `log` when given.
TrainResult train_ste(ShortTermEncoder& encoder, const MediaSource& media, const std::vector<FaceTrack>& train,
                      const std::vector<FaceTrack>& val, const SteTrainConfig& cfg, std::ostream* log = nullptr);

/// Mean STE loss and fused-head AP over every `stride`-th detection.
std::pair<double, double> evaluate_ste(ShortTermEncoder& encoder, const ClipBuilder& builder,
                                       const std::vector<FaceTrack>& tracks, Index stride, Index batch_size);

/// Embeds every detection of every track (eval mode) with labels attached.
EmbeddingTable embed(ShortTermEncoder& encoder, const MediaSource& media, const std::vector<FaceTrack>& tracks,
                     const ClipConfig& clips, Index batch_size = 32);

struct AscTrainConfig {
  AscConfig model;
  EnsembleConfig ensemble;
  Schedule schedule = Schedule::asc_default();
  AdamOptions adam;
  Index epochs = 30;
  Index batch_size = 8;
  /// Applied when building both training and evaluation ensembles.
  Distortion distortion = Distortion::none;
  std::uint64_t seed = 0;
};

/// Every labelled detection of the table as a reference point.
std::vector<ReferencePoint> reference_points(const EmbeddingTable& table);

/// Trains an ASC from scratch on cached embeddings. `model` is replaced.
TrainResult train_asc(AscModel& model, const EmbeddingTable& train, const EmbeddingTable& val,
                      const AscTrainConfig& cfg, std::ostream* log = nullptr);

/// Scores every labelled detection of `table`. Ensemble sampling draws from
/// a generator seeded with `seed`, so repeated calls agree.
std::vector<ScoredDetection> score_asc(const AscModel& model, const EmbeddingTable& table, const EnsembleConfig& ensemble,
                                       Distortion distortion, std::uint64_t seed, Index batch_size = 64);
/// Scores every labelled detection with the STE fused head on cached embeddings.
std::vector<ScoredDetection> score_ste(const ShortTermEncoder& encoder, const EmbeddingTable& table);

/// Fills face width and co-occurring face counts from the source tracks.
void annotate_detections(std::vector<ScoredDetection>& detections, const std::vector<FaceTrack>& tracks,
                         double frame_width_px, double tolerance);

}  // namespace asc

#endif  // ASC_TRAIN_HPP
