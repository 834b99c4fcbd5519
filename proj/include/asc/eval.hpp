#ifndef ASC_EVAL_HPP
#define ASC_EVAL_HPP

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asc/context.hpp"
#include "asc/refine.hpp"

namespace asc {

struct ScoredDetection {
  std::string video_id;
  std::string track_id;
  double timestamp = 0;
  double score = 0;
  int label = 0;
  double face_width_px = 0;
  Index cooccurring_faces = 1;
};

/// Mean over positives of the precision at each positive, after a stable
/// descending sort by score (equal scores keep input order).
double average_precision(std::span<const double> scores, std::span<const int> labels);
double average_precision(std::span<const ScoredDetection> detections);

/// AP per video, then the unweighted mean over videos that have positives.
double map_over_videos(std::span<const ScoredDetection> detections);

enum class MetricKind { pooled, per_video };
MetricKind parse_metric(const std::string& name);
double mean_ap(std::span<const ScoredDetection> detections, MetricKind kind);

/// Per-track sliding median over detections within +-window/2 seconds.
/// Output order and labels match the input.
std::vector<ScoredDetection> smooth_scores(std::span<const ScoredDetection> detections, double window_seconds);

struct BreakdownReport {
  double overall = 0;
  // Buckets with no positives are absent.
  std::map<std::string, double> by_face_count;  // "1", "2", "3+"
  std::map<std::string, double> by_face_size;   // "S" (<64 px), "M" (64-128 px), "L" (>128 px)
  MetricKind metric = MetricKind::pooled;
};

std::string face_size_bucket(double width_px);
std::string face_count_bucket(Index faces);
BreakdownReport breakdown(std::span<const ScoredDetection> detections, MetricKind kind = MetricKind::pooled);
/// Human-readable report. Bucket scores are ranked within their bucket, so they
/// need not average to the overall score.
void print_breakdown(std::ostream& os, const BreakdownReport& report);

void write_detections_csv(std::ostream& os, std::span<const ScoredDetection> detections);
std::vector<ScoredDetection> read_detections_csv(std::istream& is);

// Attention export ---------------------------------------------------------

struct AttentionFiles {
  std::filesystem::path matrix, metadata, image;
};

/// Writes B as text (one row per line), slot/time metadata as JSON and a heat
/// map as a binary PPM. Values are clipped to [0,1] for the image only.
AttentionFiles export_attention(const ContextEnsemble& ensemble, const AttentionState& attention,
                                const std::filesystem::path& prefix, Index cell_pixels = 8);
Matrix read_attention_matrix(const std::filesystem::path& path);
/// Mean Shannon entropy (nats) of the rows of a row-stochastic matrix.
double mean_row_entropy(const Matrix& B);

}  // namespace asc

#endif  // ASC_EVAL_HPP
