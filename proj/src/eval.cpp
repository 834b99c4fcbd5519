#include "asc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace asc {

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("average_precision: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0, sum = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      tp += 1;
      sum += tp / static_cast<double>(rank + 1);
    }
  }
  if (tp == 0) throw DataError("average_precision: no positive labels");
  return sum / tp;
}

double average_precision(std::span<const ScoredDetection> detections) {
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& d : detections) {
    s.push_back(d.score);
    l.push_back(d.label);
  }
  return average_precision(s, l);
}

double map_over_videos(std::span<const ScoredDetection> detections) {
  std::map<std::string, std::vector<ScoredDetection>> by_video;
  for (const auto& d : detections) by_video[d.video_id].push_back(d);
  double sum = 0;
  int videos = 0;
  for (const auto& [video, dets] : by_video) {
    if (std::none_of(dets.begin(), dets.end(), [](const auto& d) { return d.label == 1; })) continue;
    sum += average_precision(dets);
    ++videos;
  }
  if (videos == 0) throw DataError("map_over_videos: no video has positive labels");
  return sum / videos;
}

MetricKind parse_metric(const std::string& name) {
  if (name == "pooled") return MetricKind::pooled;
  if (name == "per_video") return MetricKind::per_video;
  throw ShapeError("unknown metric '" + name + "' (pooled or per_video)");
}

double mean_ap(std::span<const ScoredDetection> detections, MetricKind kind) {
  return kind == MetricKind::pooled ? average_precision(detections) : map_over_videos(detections);
}

std::vector<ScoredDetection> smooth_scores(std::span<const ScoredDetection> detections, double window_seconds) {
  if (!(window_seconds > 0)) throw ShapeError("smooth_scores: window must be positive");
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> tracks;
  for (std::size_t i = 0; i < detections.size(); ++i) tracks[{detections[i].video_id, detections[i].track_id}].push_back(i);
  std::vector<ScoredDetection> out(detections.begin(), detections.end());
  const double half = window_seconds / 2;
  std::vector<double> window;
  for (auto& [key, idx] : tracks) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].timestamp < detections[b].timestamp; });
    std::size_t lo = 0, hi = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double t = detections[idx[k]].timestamp;
      while (detections[idx[lo]].timestamp < t - half) ++lo;
      while (hi < idx.size() && detections[idx[hi]].timestamp <= t + half) ++hi;
      window.clear();
      for (std::size_t j = lo; j < hi; ++j) window.push_back(detections[idx[j]].score);
      const std::size_t m = window.size() / 2;
      std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(m), window.end());
      double med = window[m];
      if (window.size() % 2 == 0) {
        med = (med + *std::max_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(m))) / 2;
      }
      out[idx[k]].score = med;
    }
  }
  return out;
}

std::string face_size_bucket(double width_px) {
  if (width_px < 64) return "S";
  if (width_px <= 128) return "M";
  return "L";
}

std::string face_count_bucket(Index faces) {
  if (faces <= 1) return "1";
  if (faces == 2) return "2";
  return "3+";
}

BreakdownReport breakdown(std::span<const ScoredDetection> detections, MetricKind kind) {
  BreakdownReport r;
  r.metric = kind;
  r.overall = mean_ap(detections, kind);
  std::map<std::string, std::vector<ScoredDetection>> counts, sizes;
  for (const auto& d : detections) {
    counts[face_count_bucket(d.cooccurring_faces)].push_back(d);
    sizes[face_size_bucket(d.face_width_px)].push_back(d);
  }
  auto fill = [&](const auto& groups, std::map<std::string, double>& out) {
    for (const auto& [name, dets] : groups) {
      if (std::any_of(dets.begin(), dets.end(), [](const auto& d) { return d.label == 1; })) {
        out[name] = mean_ap(dets, kind);
      }
    }
  };
  fill(counts, r.by_face_count);
  fill(sizes, r.by_face_size);
  return r;
}

void print_breakdown(std::ostream& os, const BreakdownReport& r) {
  os << "overall " << r.overall << '\n';
  for (const auto& [k, v] : r.by_face_count) os << "faces=" << k << ' ' << v << '\n';
  for (const auto& [k, v] : r.by_face_size) os << "size=" << k << ' ' << v << '\n';
  os << "(bucket scores are ranked within each bucket and need not average to the overall score)\n";
}

void write_detections_csv(std::ostream& os, std::span<const ScoredDetection> detections) {
  os << "video_id,track_id,timestamp,score,label,face_width,face_count\n";
  os.precision(17);
  for (const auto& d : detections) {
    os << d.video_id << ',' << d.track_id << ',' << d.timestamp << ',' << d.score << ',' << d.label << ','
       << d.face_width_px << ',' << d.cooccurring_faces << '\n';
  }
}

std::vector<ScoredDetection> read_detections_csv(std::istream& is) {
  std::vector<ScoredDetection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("video_id", 0) == 0)) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 7) throw DataError("detections line " + std::to_string(lineno) + ": expected 7 columns");
    try {
      ScoredDetection d{f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stoi(f[4]), std::stod(f[5]), std::stol(f[6])};
      if (!std::isfinite(d.score) || d.score < 0 || d.score > 1) throw DataError("score outside [0,1]");
      if (d.label != 0 && d.label != 1) throw DataError("label must be 0 or 1");
      out.push_back(d);
    } catch (const std::logic_error&) {
      throw DataError("detections line " + std::to_string(lineno) + ": malformed number");
    } catch (const DataError& e) {
      throw DataError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Attention export ---------------------------------------------------------

namespace {

// Dark blue -> red -> yellow -> white.
void heat_color(double v, unsigned char rgb[3]) {
  v = std::clamp(v, 0.0, 1.0);
  const double r = std::clamp(3 * v, 0.0, 1.0), g = std::clamp(3 * v - 1, 0.0, 1.0), b = std::clamp(3 * v - 2, 0.0, 1.0);
  rgb[0] = static_cast<unsigned char>(std::lround(255 * r));
  rgb[1] = static_cast<unsigned char>(std::lround(255 * g));
  rgb[2] = static_cast<unsigned char>(std::lround(255 * std::max(b, 0.25 * (1 - v))));
}

}  // namespace

AttentionFiles export_attention(const ContextEnsemble& ensemble, const AttentionState& attention,
                                const std::filesystem::path& prefix, Index cell_pixels) {
  if (!attention.B.defined() || attention.B.rank() != 2 || attention.B.dim(0) != attention.B.dim(1)) {
    throw ShapeError("export_attention: B must be a square matrix");
  }
  const Index n = attention.B.dim(0);
  AttentionFiles files{prefix.string() + ".txt", prefix.string() + ".json", prefix.string() + ".ppm"};
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());

  std::ofstream txt(files.matrix);
  if (!txt) throw DataError("cannot write " + files.matrix.string());
  txt.precision(17);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) txt << (j ? " " : "") << attention.B.at({i, j});
    txt << '\n';
  }
  if (!txt) throw DataError("write failed for " + files.matrix.string());

  nlohmann::json meta{{"reference_track_id", ensemble.reference_track_id},
                      {"reference_time", ensemble.reference_time},
                      {"label", ensemble.label},
                      {"slot_track_ids", ensemble.slot_track_ids},
                      {"clip_times", ensemble.clip_times},
                      {"order", "row index = l * S + s"}};
  std::ofstream js(files.metadata);
  if (!js) throw DataError("cannot write " + files.metadata.string());
  js << meta.dump(1) << '\n';

  std::ofstream img(files.image, std::ios::binary);
  if (!img) throw DataError("cannot write " + files.image.string());
  const Index side = n * cell_pixels;
  img << "P6\n" << side << ' ' << side << "\n255\n";
  for (Index y = 0; y < side; ++y)
    for (Index x = 0; x < side; ++x) {
      unsigned char rgb[3];
      heat_color(attention.B.at({y / cell_pixels, x / cell_pixels}), rgb);
      img.write(reinterpret_cast<const char*>(rgb), 3);
    }
  if (!img) throw DataError("write failed for " + files.image.string());
  return files;
}

Matrix read_attention_matrix(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    rows.emplace_back();
    double v;
    while (ls >> v) rows.back().push_back(v);
  }
  if (rows.empty()) throw DataError(path.string() + ": empty attention matrix");
  Matrix B(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw DataError(path.string() + ": ragged attention matrix");
    for (std::size_t j = 0; j < rows[i].size(); ++j) B(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return B;
}

double mean_row_entropy(const Matrix& B) {
  double total = 0;
  for (Index i = 0; i < B.rows(); ++i) {
    for (Index j = 0; j < B.cols(); ++j) {
      if (B(i, j) > 0) total -= B(i, j) * std::log(B(i, j));
    }
  }
  return total / static_cast<double>(B.rows());
}

}  // namespace asc
