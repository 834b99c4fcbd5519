#ifndef ASC_SIGNAL_HPP
#define ASC_SIGNAL_HPP

#include <span>
#include <string>
#include <vector>

#include "asc/common.hpp"
#include "asc/tensor.hpp"

namespace asc {

/// Channel-planar RGB image, values in [0,1]; pixel (c,y,x) at (c*H + y)*W + x.
struct Image {
  Index height = 0;
  Index width = 0;
  Buffer pixels;

  Image() = default;
  Image(Index h, Index w, Scalar fill = 0) : height(h), width(w), pixels(static_cast<std::size_t>(3 * h * w), fill) {}

  Scalar& at(Index c, Index y, Index x) { return pixels[static_cast<std::size_t>((c * height + y) * width + x)]; }
  Scalar at(Index c, Index y, Index x) const { return pixels[static_cast<std::size_t>((c * height + y) * width + x)]; }
};

struct TimedFrame {
  double timestamp = 0;
  Image image;
};

struct CropStack {
  std::vector<Image> frames;
  std::vector<double> source_timestamps;  // timestamp of the track frame behind each entry
  std::string source_track_id;
  double center_timestamp = 0;

  Index k() const { return static_cast<Index>(frames.size()); }
};

struct AudioSnippet {
  Buffer samples;
  double sample_rate_hz = 16000;
  double duration = 0;
};

struct MelConfig {
  double sample_rate_hz = 16000;
  Index n_mels = 40;
  double window_seconds = 0.025;
  double hop_seconds = 0.010;
  Index n_fft = 512;
  double f_min = 0;
  double f_max = 8000;
  double log_floor = 1e-6;

  Index window_samples() const;
  Index hop_samples() const;
};

/// Q x P log mel energies (Q bands, P frames).
struct MelSpectrogram {
  Matrix values;
  Index bands() const { return values.rows(); }
  Index frames() const { return values.cols(); }
};

/// Triangular HTK-scale filters, n_mels x (n_fft/2 + 1).
Matrix mel_filterbank(const MelConfig& cfg);
/// Peak frequency (Hz) of every band of mel_filterbank(cfg).
std::vector<double> mel_band_centers(const MelConfig& cfg);
/// Centered framing: 1 + floor(samples / hop).
Index mel_frame_count(Index samples, const MelConfig& cfg);

/// Hann-windowed power spectrum through the filterbank, compressed with
/// log(x + log_floor).
MelSpectrogram mel_spectrogram(const AudioSnippet& audio, const MelConfig& cfg);

/// Indices of the k frames nearest to the centers of k equal sub-intervals of
/// [t - tau/2, t + tau/2]; ties resolve to the earlier frame.
std::vector<Index> crop_stack_indices(std::span<const double> timestamps, double t, Index k, double tau);

CropStack build_crop_stack(std::span<const TimedFrame> track_frames, double t, Index k, double tau, Index height,
                           Index width, std::string track_id = {});

Image resize_bilinear(const Image& image, Index height, Index width);
Image crop_image(const Image& image, Index y0, Index x0, Index height, Index width);

enum class CropCorner { top_left, top_right, bottom_left, bottom_right, center };

/// One draw applies to every frame of a stack.
struct Augmentation {
  bool flip = false;
  CropCorner corner = CropCorner::center;
};

Augmentation draw_augmentation(Rng& rng);
CropStack apply_augmentation(const CropStack& stack, const Augmentation& aug, double crop_ratio = 0.875);
CropStack augment(const CropStack& stack, Rng& rng, double crop_ratio = 0.875);
CropStack flip_horizontal(const CropStack& stack);

/// [3k, H, W], frame-major (frame i occupies channels 3i..3i+2).
Tensor visual_tensor(const CropStack& stack);
/// [1, Q, P]
Tensor audio_tensor(const MelSpectrogram& mel);

/// Access to decoded media. Implementations may read files or synthesize.
class MediaSource {
 public:
  virtual ~MediaSource() = default;
  /// Frames of `track_id` with timestamps in [t0, t1], in temporal order.
  virtual std::vector<TimedFrame> track_frames(const std::string& track_id, double t0, double t1) const = 0;
  /// Audio of `video_id` covering [t0, t1).
  virtual AudioSnippet audio(const std::string& video_id, double t0, double t1) const = 0;
};

}  // namespace asc

#endif  // ASC_SIGNAL_HPP
