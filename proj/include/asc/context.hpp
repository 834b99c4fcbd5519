#ifndef ASC_CONTEXT_HPP
#define ASC_CONTEXT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "asc/tensor.hpp"

namespace asc {

struct EnsembleConfig {
  Index L = 11;         // clips per speaker
  Index S = 3;          // speakers per ensemble
  double T = 2.25;      // window, seconds
  double tau = 0.44;    // clip length, seconds
  /// Two detections co-occur when their timestamps differ by at most this.
  double cooccurrence_tolerance = 0.1;

  Index reference_index() const { return L / 2; }
  void validate() const;
};

enum class Distortion { none, shuffle_time, out_of_context };

/// Cached clip embeddings of one face track, one row per detection.
struct TrackEmbeddings {
  std::string video_id;
  std::string track_id;
  std::vector<double> timestamps;  // strictly increasing
  Matrix values;                   // [n, d]
  std::vector<int> labels;         // empty when unknown
};

/// Embedding lookup over all tracks, indexed by track id and video.
class EmbeddingTable {
 public:
  void add(TrackEmbeddings track);

  bool contains(const std::string& track_id) const { return index_.count(track_id) > 0; }
  const TrackEmbeddings& track(const std::string& track_id) const;
  const std::vector<TrackEmbeddings>& tracks() const { return tracks_; }
  Index dim() const { return dim_; }

  /// Index of the detection nearest to t (ties toward the earlier one).
  Index nearest(const TrackEmbeddings& track, double t) const;
  /// Tracks of `video_id` with a detection within `tolerance` of t, in insertion order.
  std::vector<std::string> present_at(const std::string& video_id, double t, double tolerance) const;
  /// Sorted distinct detection timestamps of a video.
  const std::vector<double>& video_timestamps(const std::string& video_id) const;

  void set_labels(const std::string& track_id, std::vector<int> labels);

 private:
  std::vector<TrackEmbeddings> tracks_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::size_t>> by_video_;
  std::map<std::string, std::vector<double>> video_times_;
  Index dim_ = 0;
};

void save_embedding_cache(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable load_embedding_cache(const std::filesystem::path& path);

struct ContextEnsemble {
  Tensor values;  // [L, S, d]
  std::string reference_track_id;
  double reference_time = 0;
  std::vector<std::string> slot_track_ids;  // S entries, slot 0 = reference
  std::vector<std::vector<double>> clip_times;  // [S][L] timestamps of the clips used
  int label = 0;
};

/// L times spanning [t - T/2, t + T/2] with inclusive endpoints.
std::vector<double> sample_clip_times(double t, double T, Index L);

/// Slot 0 is the reference; the others follow the three J-vs-S cases.
std::vector<std::string> select_speaker_slots(const std::vector<std::string>& present, const std::string& reference,
                                              Index S, Rng& rng);

ContextEnsemble assemble(const EmbeddingTable& table, double t, const std::string& reference, const EnsembleConfig& cfg,
                         Rng& rng, Distortion distortion = Distortion::none);

/// Stacks ensembles into [B, L, S, d] values and labels.
std::pair<Tensor, std::vector<int>> batch_ensembles(const std::vector<ContextEnsemble>& ensembles);

}  // namespace asc

#endif  // ASC_CONTEXT_HPP
