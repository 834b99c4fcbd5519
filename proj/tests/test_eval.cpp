#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "asc/eval.hpp"

using namespace asc;

namespace {

// Precision at each positive computed from pairwise rank counts, no sorting.
double ap_oracle(const std::vector<double>& s, const std::vector<int>& l) {
  const std::size_t n = s.size();
  double total = 0;
  int positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!l[i]) continue;
    ++positives;
    int rank = 0, hits = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool before = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (before) {
        ++rank;
        hits += l[j];
      }
    }
    total += static_cast<double>(hits) / rank;
  }
  return total / positives;
}

std::vector<ScoredDetection> random_detections(Rng& rng, int n, int videos, bool quantize = false) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ScoredDetection> out;
  for (int i = 0; i < n; ++i) {
    ScoredDetection d;
    d.video_id = "v" + std::to_string(i % videos);
    d.track_id = d.video_id + ":0";
    d.timestamp = 0.2 * i;
    d.score = quantize ? std::round(u(rng) * 4) / 4 : u(rng);
    d.label = u(rng) < 0.4 ? 1 : 0;
    out.push_back(d);
  }
  for (int v = 0; v < videos; ++v) out[static_cast<std::size_t>(v)].label = 1;
  return out;
}

double median_oracle(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

}  // namespace

TEST(AveragePrecision, Examples) {
  std::vector<double> s{0.9, 0.1};
  EXPECT_EQ(average_precision(s, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(average_precision(s, std::vector<int>{0, 1}), 0.5);
  EXPECT_THROW(average_precision(s, std::vector<int>{0, 0}), DataError);
  // Ties keep input order.
  std::vector<double> tie{0.5, 0.5};
  EXPECT_EQ(average_precision(tie, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(average_precision(tie, std::vector<int>{0, 1}), 0.5);
}

TEST(AveragePrecision, MatchesRankOracle) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    std::vector<double> s;
    std::vector<int> l;
    for (int i = 0; i < n; ++i) {
      s.push_back(trial % 3 == 0 ? std::round(u(rng) * 3) / 3 : u(rng));
      l.push_back(u(rng) < 0.5);
    }
    l[static_cast<std::size_t>(rng() % static_cast<unsigned>(n))] = 1;
    EXPECT_NEAR(average_precision(s, l), ap_oracle(s, l), 1e-12);
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneTransforms) {
  Rng rng(2);
  auto dets = random_detections(rng, 40, 1);
  const double base = average_precision(dets);
  for (auto f : {+[](double x) { return std::exp(3 * x); }, +[](double x) { return x * x * x - 7; },
                 +[](double x) { return std::log(x + 1e-3); }}) {
    auto t = dets;
    for (auto& d : t) d.score = f(d.score);
    EXPECT_NEAR(average_precision(t), base, 1e-15);
  }
}

TEST(MapOverVideos, Examples) {
  Rng rng(3);
  auto one = random_detections(rng, 15, 1);
  EXPECT_EQ(map_over_videos(one), average_precision(one));

  std::vector<ScoredDetection> two{{"a", "a:0", 0, 0.9, 1}, {"a", "a:0", 1, 0.1, 0},
                                   {"b", "b:0", 0, 0.9, 0}, {"b", "b:0", 1, 0.1, 1}};
  EXPECT_DOUBLE_EQ(map_over_videos(two), 0.75);
}

TEST(MapOverVideos, MatchesPerVideoOracle) {
  Rng rng(4);
  auto dets = random_detections(rng, 60, 3);
  double sum = 0;
  for (int v = 0; v < 3; ++v) {
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& d : dets) {
      if (d.video_id == "v" + std::to_string(v)) {
        s.push_back(d.score);
        l.push_back(d.label);
      }
    }
    sum += ap_oracle(s, l);
  }
  EXPECT_NEAR(map_over_videos(dets), sum / 3, 1e-12);
  auto shuffled = dets;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_NEAR(map_over_videos(shuffled), map_over_videos(dets), 1e-12);
  EXPECT_EQ(mean_ap(dets, MetricKind::per_video), map_over_videos(dets));
  EXPECT_EQ(mean_ap(dets, MetricKind::pooled), average_precision(dets));
}

TEST(Smoothing, ConstantScoresUnchanged) {
  std::vector<ScoredDetection> dets;
  for (int i = 0; i < 20; ++i) dets.push_back({"v", "t", 0.2 * i, 0.3, i % 2});
  auto out = smooth_scores(dets, 2.25);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(out[i].score, 0.3);
    EXPECT_EQ(out[i].label, dets[i].label);
  }
}

TEST(Smoothing, SpikeIsRemoved) {
  std::vector<ScoredDetection> dets;
  for (int i = 0; i < 20; ++i) dets.push_back({"v", "t", 0.2 * i, i == 10 ? 0.95 : 0.1, 0});
  auto out = smooth_scores(dets, 0.5);
  EXPECT_EQ(out[10].score, 0.1);
}

TEST(Smoothing, MatchesDirectMedian) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ScoredDetection> dets;
  double t = 0;
  for (int i = 0; i < 80; ++i) {
    t += 0.05 + 0.3 * u(rng);
    dets.push_back({"v", i % 2 ? "a" : "b", t, u(rng), 0});
  }
  std::shuffle(dets.begin(), dets.end(), rng);
  for (double w : {0.3, 0.5, 1.1, 2.25}) {
    auto out = smooth_scores(dets, w);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      std::vector<double> window;
      for (const auto& d : dets) {
        if (d.track_id == dets[i].track_id && std::abs(d.timestamp - dets[i].timestamp) <= w / 2) window.push_back(d.score);
      }
      EXPECT_EQ(out[i].score, median_oracle(window));
    }
  }
}

TEST(Smoothing, NarrowWindowIsIdentity) {
  Rng rng(6);
  auto dets = random_detections(rng, 30, 2);
  auto out = smooth_scores(dets, 0.1);
  for (std::size_t i = 0; i < dets.size(); ++i) EXPECT_EQ(out[i].score, dets[i].score);
  EXPECT_THROW(smooth_scores(dets, 0), ShapeError);
}

TEST(Breakdown, SingleFaceOnly) {
  Rng rng(7);
  auto dets = random_detections(rng, 30, 2);
  for (auto& d : dets) d.face_width_px = 100;
  auto r = breakdown(dets);
  ASSERT_EQ(r.by_face_count.size(), 1u);
  EXPECT_EQ(r.by_face_count.at("1"), r.overall);
  EXPECT_EQ(r.by_face_size.size(), 1u);
}

TEST(Breakdown, SizeThresholds) {
  EXPECT_EQ(face_size_bucket(32), "S");
  EXPECT_EQ(face_size_bucket(63.9), "S");
  EXPECT_EQ(face_size_bucket(64), "M");
  EXPECT_EQ(face_size_bucket(96), "M");
  EXPECT_EQ(face_size_bucket(128), "M");
  EXPECT_EQ(face_size_bucket(200), "L");
  EXPECT_EQ(face_count_bucket(1), "1");
  EXPECT_EQ(face_count_bucket(2), "2");
  EXPECT_EQ(face_count_bucket(5), "3+");
}

TEST(Breakdown, MixedFixtureMatchesBucketOracle) {
  Rng rng(8);
  auto dets = random_detections(rng, 90, 3);
  const double widths[] = {32, 96, 200};
  for (std::size_t i = 0; i < dets.size(); ++i) {
    dets[i].face_width_px = widths[i % 3];
    dets[i].cooccurring_faces = static_cast<Index>(1 + (i / 3) % 3);
    if (i < 9) dets[i].label = 1;
  }
  auto r = breakdown(dets);
  for (int b = 0; b < 3; ++b) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (i % 3 == static_cast<std::size_t>(b)) {
        s.push_back(dets[i].score);
        l.push_back(dets[i].label);
      }
    }
    EXPECT_NEAR(r.by_face_size.at(face_size_bucket(widths[b])), ap_oracle(s, l), 1e-12);
  }
  EXPECT_EQ(r.by_face_count.size(), 3u);
  // A bucket without positives is absent rather than zero.
  for (auto& d : dets) {
    if (d.face_width_px == 200) d.label = 0;
  }
  EXPECT_EQ(breakdown(dets).by_face_size.count("L"), 0u);
}

TEST(DetectionsCsv, RoundTrip) {
  Rng rng(9);
  auto dets = random_detections(rng, 12, 2);
  dets[3].face_width_px = 77.5;
  dets[4].cooccurring_faces = 3;
  std::stringstream ss;
  write_detections_csv(ss, dets);
  auto back = read_detections_csv(ss);
  ASSERT_EQ(back.size(), dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(back[i].score, dets[i].score);
    EXPECT_EQ(back[i].timestamp, dets[i].timestamp);
    EXPECT_EQ(back[i].face_width_px, dets[i].face_width_px);
    EXPECT_EQ(back[i].cooccurring_faces, dets[i].cooccurring_faces);
  }
  std::istringstream bad("v,t,0,1.5,1,10,1\n");
  EXPECT_THROW(read_detections_csv(bad), DataError);
}

TEST(AttentionExport, UniformMatrixAndRoundTrip) {
  ContextEnsemble e;
  e.reference_track_id = "v:0";
  e.reference_time = 1.5;
  e.slot_track_ids = {"v:0", "v:1"};
  e.clip_times = {{1.0, 1.5, 2.0}, {1.0, 1.5, 2.0}};
  AttentionState st;
  st.B = Tensor::full({6, 6}, 1.0 / 6);
  auto prefix = std::filesystem::temp_directory_path() / "asc_attn" / "uniform";
  auto files = export_attention(e, st, prefix);
  Matrix B = read_attention_matrix(files.matrix);
  ASSERT_EQ(B.rows(), 6);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) EXPECT_EQ(B(i, j), 1.0 / 6);
  EXPECT_NEAR(mean_row_entropy(B), std::log(6.0), 1e-12);

  Rng rng(10);
  Tensor logits = Tensor::randn({6, 6}, rng, 3);
  st.B = softmax_rows(logits);
  files = export_attention(e, st, prefix);
  B = read_attention_matrix(files.matrix);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) EXPECT_NEAR(B(i, j), st.B.at({i, j}), 1e-9);

  std::ifstream img(files.image, std::ios::binary);
  std::string magic;
  Index w = 0, h = 0;
  img >> magic >> w >> h;
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 48);
  EXPECT_EQ(h, 48);
  EXPECT_TRUE(std::filesystem::exists(files.metadata));
  std::filesystem::remove_all(prefix.parent_path());
}
