#ifndef ASC_DATASET_HPP
#define ASC_DATASET_HPP

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "asc/signal.hpp"

namespace asc {

/// Normalized box, 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;
};

struct Detection {
  double timestamp = 0;
  BBox bbox;
  int label = 0;  // 1 = speaking
};

struct FaceTrack {
  std::string video_id;
  std::string track_id;
  std::vector<Detection> detections;

  double start() const { return detections.front().timestamp; }
  double end() const { return detections.back().timestamp; }
  /// Checks timestamp order and box bounds; throws DataError.
  void validate() const;
};

/// Face width in pixels for a detection in a frame `frame_width_px` wide.
double face_width_px(const Detection& d, double frame_width_px);

/// Reads the AVA-ActiveSpeaker layout: video_id, frame_timestamp, x1, y1, x2, y2,
/// label, face_track_id. A header line starting with "video_id" is skipped.
std::vector<FaceTrack> parse_ava_csv(std::istream& is);
std::vector<FaceTrack> parse_ava_csv(const std::filesystem::path& path);
void write_ava_csv(std::ostream& os, const std::vector<FaceTrack>& tracks);

/// One training clip: k frames of `track_id` centered at `center_time`.
struct ClipDescriptor {
  std::string video_id;
  std::string track_id;
  Index start_index = 0;  // first detection of the k-window
  double center_time = 0;
  int label = 0;
};

/// One clip per track with a uniformly drawn start over the valid positions.
/// Tracks shorter than k yield a single clip at their center.
std::vector<ClipDescriptor> ste_epoch_sample(const std::vector<FaceTrack>& tracks, Index k, Rng& rng);

struct ReferencePoint {
  std::string video_id;
  std::string track_id;
  double t = 0;
  int label = 0;
};

/// Dense sampling: one entry per labeled detection.
std::vector<ReferencePoint> asc_epoch_sample(const std::vector<FaceTrack>& tracks);

// Synthetic conversations --------------------------------------------------

struct SyntheticConfig {
  Index num_videos = 48;
  double video_seconds = 10;
  Index min_speakers = 1;
  Index max_speakers = 3;
  double detection_rate_hz = 5;
  double frame_rate_hz = 25;
  double sample_rate_hz = 16000;
  Index crop_size = 32;
  double frame_width_px = 640;
  double frame_height_px = 360;

  double turn_min = 0.8, turn_max = 2.4;
  double filler_probability = 0.2;
  double filler_max = 0.4;
  double gap_mean = 0.35;
  double overlap_probability = 0.1;
  double overlap_max = 0.3;
  /// Probability that a track covers only part of the video.
  double partial_track_probability = 0.3;
  /// Probability per speaker of a silent mouth-movement segment.
  double distractor_probability = 0.3;

  double min_face_px = 24, max_face_px = 220;
  double audio_noise = 0.05;
  double visual_noise = 0.15;
  double lip_amplitude = 0.25;

  void validate() const;
};

struct Utterance {
  Index speaker = 0;
  double start = 0, end = 0;
};

struct SyntheticSpeaker {
  std::string track_id;
  double pitch_hz = 150;
  double face_px = 64;
  double track_start = 0, track_end = 0;
  std::uint64_t texture_seed = 0;
  std::vector<Utterance> distractors;  // mouth moves, no voice
};

struct SyntheticConversation {
  std::string video_id;
  std::uint64_t seed = 0;
  double duration = 0;
  std::vector<SyntheticSpeaker> speakers;
  std::vector<Utterance> turns;

  Index num_speakers() const { return static_cast<Index>(speakers.size()); }
  bool speaking(Index speaker, double t) const;
};

/// Renders frames and audio of synthetic conversations on demand.
/// Output is a pure function of the conversation and the query.
class SyntheticMedia : public MediaSource {
 public:
  SyntheticMedia(std::vector<SyntheticConversation> conversations, SyntheticConfig cfg);

  std::vector<TimedFrame> track_frames(const std::string& track_id, double t0, double t1) const override;
  AudioSnippet audio(const std::string& video_id, double t0, double t1) const override;

  Image render_frame(const SyntheticConversation& c, Index speaker, Index frame_index) const;
  /// Lip-region oscillation energy of a frame (mean squared deviation from the
  /// identity texture inside the mouth box).
  double mouth_energy(const SyntheticConversation& c, Index speaker, Index frame_index) const;

  const std::vector<SyntheticConversation>& conversations() const { return conversations_; }
  const SyntheticConfig& config() const { return cfg_; }

 private:
  std::vector<SyntheticConversation> conversations_;
  SyntheticConfig cfg_;
  std::map<std::string, std::pair<std::size_t, Index>> track_index_;
  std::map<std::string, std::size_t> video_index_;
};

struct SyntheticDataset {
  std::vector<FaceTrack> tracks;
  std::vector<SyntheticConversation> conversations;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, Rng& rng, const std::string& video_prefix = "vid");

/// Splits tracks by video into disjoint parts; `fractions` sum to at most 1,
/// the remainder forms the last part.
std::vector<std::vector<FaceTrack>> split_by_video(const std::vector<FaceTrack>& tracks,
                                                   const std::vector<double>& fractions, Rng& rng);

/// Manifest of a synthetic dataset: config, conversations and track files.
void save_synthetic_manifest(const std::filesystem::path& path, const SyntheticConfig& cfg,
                             const std::vector<SyntheticConversation>& conversations);
std::pair<SyntheticConfig, std::vector<SyntheticConversation>> load_synthetic_manifest(
    const std::filesystem::path& path);
/// Ground-truth tracks implied by conversations.
std::vector<FaceTrack> synthetic_tracks(const SyntheticConfig& cfg, const std::vector<SyntheticConversation>& conversations);

}  // namespace asc

#endif  // ASC_DATASET_HPP
