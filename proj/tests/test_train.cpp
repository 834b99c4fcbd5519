#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "asc/train.hpp"

using namespace asc;

namespace {

EncoderConfig mini_encoder() {
  EncoderConfig e;
  e.frame_height = e.frame_width = 16;
  e.frames_per_clip = 3;
  e.mel_bands = 8;
  e.stage_widths = {4, 8};
  e.blocks_per_stage = 1;
  return e;
}

ClipConfig mini_clips() {
  ClipConfig c;
  c.k = 3;
  c.tau = 0.12;
  c.crop_size = 16;
  c.mel.n_mels = 8;
  return c;
}

SteTrainConfig mini_ste() {
  SteTrainConfig cfg;
  cfg.encoder = mini_encoder();
  cfg.clips = mini_clips();
  cfg.encoder.mel_frames = cfg.clips.mel_frames();
  cfg.epochs = 1;
  cfg.batch_size = 1;
  return cfg;
}

SyntheticDataset small_dataset(Index videos, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.num_videos = videos;
  sc.video_seconds = 4;
  Rng rng(seed);
  return generate_synthetic(sc, rng);
}

bool same_values(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.values() != b[i].second.values()) return false;
  }
  return true;
}

// One video, two alternating tracks; the first channel carries the label.
EmbeddingTable separable_table(std::uint64_t seed, Index n = 40) {
  Rng rng(seed);
  std::normal_distribution<double> g(0, 0.3);
  EmbeddingTable table;
  for (int s = 0; s < 2; ++s) {
    TrackEmbeddings te;
    te.video_id = "v";
    te.track_id = "v:" + std::to_string(s);
    te.values = Matrix(n, 4);
    for (Index i = 0; i < n; ++i) {
      te.timestamps.push_back(0.2 * static_cast<double>(i));
      const int label = ((i / 8) % 2) == s ? 1 : 0;
      te.labels.push_back(label);
      for (Index c = 0; c < 4; ++c) te.values(i, c) = g(rng) + (c == 0 ? 1.5 * label : 0.0);
    }
    table.add(std::move(te));
  }
  return table;
}

AscTrainConfig small_asc() {
  AscTrainConfig cfg;
  cfg.ensemble.L = 3;
  cfg.ensemble.S = 2;
  cfg.ensemble.T = 0.8;
  cfg.model.hidden = 8;
  cfg.model.mlp_hidden = 8;
  cfg.schedule = {1e-2, 0.1, 100};
  cfg.epochs = 5;
  cfg.batch_size = 8;
  return cfg;
}

}  // namespace

TEST(Schedule, Examples) {
  EXPECT_EQ(lr_at(Schedule::ste_default(), 0), 3e-4);
  EXPECT_EQ(lr_at(Schedule::ste_default(), 39), 3e-4);
  EXPECT_NEAR(lr_at(Schedule::ste_default(), 40), 3e-5, 1e-20);
  EXPECT_NEAR(lr_at(Schedule::asc_default(), 25), 3e-6 * 0.1 * 0.1, 1e-22);
  EXPECT_NEAR(lr_at(Schedule::asc_default(), 25), 3e-8, 1e-22);
  EXPECT_THROW(lr_at(Schedule::ste_default(), -1), ShapeError);
  EXPECT_THROW(lr_at(Schedule{1e-3, 0.0, 10}, 0), ShapeError);
  EXPECT_THROW(lr_at(Schedule{1e-3, 1.5, 10}, 0), ShapeError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor w({3}, {0.5, -1.0, 2.0}, true);
  Adam opt({{"w", w}}, 0.1);
  opt.step();
  EXPECT_EQ(w.values(), (Buffer{0.5, -1.0, 2.0}));
  EXPECT_EQ(opt.step_count(), 1);
  sum(mul(w, Tensor::zeros({3}))).backward();
  opt.step();
  EXPECT_EQ(w.values(), (Buffer{0.5, -1.0, 2.0}));
  EXPECT_EQ(opt.step_count(), 2);
}

TEST(Adam, ScalarUnitGradientStepIsMinusLr) {
  Tensor w = Tensor::scalar(1.0, true);
  const double lr = 1e-3;
  Adam opt({{"w", w}}, lr);
  w.backward();  // dw/dw = 1
  opt.step();
  // m = 0.1, v = 0.001; bias correction gives mhat = 1, vhat = 1.
  const double expected = 1.0 - lr * 1.0 / (1.0 + 1e-8);
  EXPECT_DOUBLE_EQ(w.item(), expected);
  EXPECT_NEAR(w.item() - 1.0, -lr, 1e-10);
}

TEST(Adam, MatchesScalarRecurrence) {
  // f(w) = (w - 3)^2 / 2 has gradient w - 3.
  Tensor w = Tensor::scalar(0.0, true);
  Adam opt({{"w", w}}, 0.05);
  double ow = 0, m = 0, v = 0;
  for (int t = 1; t <= 50; ++t) {
    opt.zero_grad();
    Tensor d = sub(w, Tensor::scalar(3.0));
    scale(mul(d, d), 0.5).backward();
    opt.step();
    const double g = ow - 3;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ow -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    ASSERT_NEAR(w.item(), ow, 1e-12) << "step " << t;
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor a = Tensor::scalar(1.0, true), b = Tensor::scalar(2.0, true);
  Adam opt({{"layer.a", a}, {"layer.b", b}}, 0.1);
  a.backward();
  b.node().ensure_grad()[0] = std::nan("");  // ops reject NaN, so plant it directly
  try {
    opt.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.b"), std::string::npos);
  }
  EXPECT_EQ(a.item(), 1.0);
  EXPECT_EQ(opt.step_count(), 0);
}

TEST(Adam, IdenticalRunsAreBitwiseEqual) {
  auto run = [] {
    Rng rng(3);
    Tensor w = Tensor::randn({4, 2}, rng, 1, true);
    Tensor x = Tensor::randn({6, 4}, rng);
    Adam opt({{"w", w}}, 0.01);
    for (int i = 0; i < 20; ++i) {
      opt.zero_grad();
      cross_entropy_with_logits(matmul(x, w), std::vector<int>{0, 1, 1, 0, 1, 0}).backward();
      opt.step();
    }
    return w.values();
  };
  EXPECT_EQ(run(), run());
}

TEST(Clips, BuilderShapesMatchEncoder) {
  auto ds = small_dataset(1, 1);
  SyntheticMedia media(ds.conversations, SyntheticConfig{.num_videos = 1, .video_seconds = 4});
  ClipBuilder b(media, ClipConfig{});
  const auto& tr = ds.tracks[0];
  auto [v, a] = b.clip(tr.video_id, tr.track_id, tr.detections[3].timestamp);
  EXPECT_EQ(v.shape(), (Shape{33, 32, 32}));
  EXPECT_EQ(a.shape(), (Shape{1, 40, 45}));
  EXPECT_NO_THROW(check_compatible(EncoderConfig{}, ClipConfig{}));
  EXPECT_THROW(check_compatible(mini_encoder(), ClipConfig{}), ShapeError);
  // Augmentation draws change pixels but never shapes.
  Rng rng(2);
  auto [va, aa] = b.clip(tr.video_id, tr.track_id, tr.detections[3].timestamp, &rng);
  EXPECT_EQ(va.shape(), v.shape());
  EXPECT_EQ(aa.values(), a.values());
}

TEST(TrainSte, OneEpochOnTenTracksIsTenStepsAtBatchOne) {
  auto ds = small_dataset(6, 4);
  ASSERT_GE(ds.tracks.size(), 10u);
  std::vector<FaceTrack> train(ds.tracks.begin(), ds.tracks.begin() + 10);
  SyntheticConfig sc;
  sc.num_videos = 6;
  sc.video_seconds = 4;
  SyntheticMedia media(ds.conversations, sc);
  auto cfg = mini_ste();
  Rng rng(5);
  ShortTermEncoder enc(cfg.encoder, rng);
  std::ostringstream log;
  auto r = train_ste(enc, media, train, {}, cfg, &log);
  EXPECT_EQ(r.optimizer_steps, 10);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].split, "train");
  EXPECT_EQ(r.best_epoch, 0);
  EXPECT_EQ(log.str().rfind("0,train,", 0), 0u);
}

TEST(TrainSte, ZeroLearningRateLeavesParametersUnchanged) {
  auto ds = small_dataset(2, 6);
  SyntheticConfig sc;
  sc.num_videos = 2;
  sc.video_seconds = 4;
  SyntheticMedia media(ds.conversations, sc);
  auto cfg = mini_ste();
  cfg.schedule.initial_lr = 0;
  cfg.batch_size = 4;
  Rng rng(7);
  ShortTermEncoder enc(cfg.encoder, rng);
  NamedTensors before;
  for (const auto& [n, t] : enc.parameters()) before.emplace_back(n, t.detach());
  train_ste(enc, media, ds.tracks, {}, cfg);
  NamedTensors after;
  for (const auto& [n, t] : enc.parameters()) after.emplace_back(n, t.detach());
  EXPECT_TRUE(same_values(before, after));
}

TEST(TrainSte, EmptyDatasetIsAnError) {
  auto cfg = mini_ste();
  Rng rng(8);
  ShortTermEncoder enc(cfg.encoder, rng);
  SyntheticMedia media({}, SyntheticConfig{});
  EXPECT_THROW(train_ste(enc, media, {}, {}, cfg), DataError);
}

TEST(TrainSte, SeededRunsReproduceMetricsAndStateBitwise) {
  auto ds = small_dataset(3, 9);
  SyntheticConfig sc;
  sc.num_videos = 3;
  sc.video_seconds = 4;
  SyntheticMedia media(ds.conversations, sc);
  auto cfg = mini_ste();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.val_stride = 4;
  auto run = [&] {
    Rng rng(10);
    ShortTermEncoder enc(cfg.encoder, rng);
    std::ostringstream log;
    auto r = train_ste(enc, media, {ds.tracks.begin() + 1, ds.tracks.end()}, {ds.tracks[0]}, cfg, &log);
    return std::make_pair(log.str(), r.best_state);
  };
  auto [log1, s1] = run();
  auto [log2, s2] = run();
  EXPECT_EQ(log1, log2);
  EXPECT_TRUE(same_values(s1, s2));
}

TEST(Embed, OneRowPerDetectionAndEncoderUntouched) {
  auto ds = small_dataset(2, 11);
  SyntheticConfig sc;
  sc.num_videos = 2;
  sc.video_seconds = 4;
  SyntheticMedia media(ds.conversations, sc);
  auto cfg = mini_ste();
  Rng rng(12);
  ShortTermEncoder enc(cfg.encoder, rng);
  const auto before = enc.state_dict();
  EmbeddingTable table = embed(enc, media, ds.tracks, cfg.clips, 7);
  ASSERT_EQ(table.tracks().size(), ds.tracks.size());
  EXPECT_EQ(table.dim(), cfg.encoder.embedding_dim());
  for (std::size_t i = 0; i < ds.tracks.size(); ++i) {
    EXPECT_EQ(table.tracks()[i].values.rows(), static_cast<Index>(ds.tracks[i].detections.size()));
    EXPECT_EQ(table.tracks()[i].labels.size(), ds.tracks[i].detections.size());
  }
  // Batch size does not change the embeddings.
  EmbeddingTable one = embed(enc, media, {ds.tracks[0]}, cfg.clips, 1);
  EXPECT_LT((one.tracks()[0].values - table.tracks()[0].values).cwiseAbs().maxCoeff(), 1e-12);

  // ASC training on the cache leaves the encoder alone.
  AscModel model(AscConfig{}, rng);
  auto acfg = small_asc();
  acfg.epochs = 1;
  train_asc(model, table, {}, acfg);
  EXPECT_TRUE(same_values(before, enc.state_dict()));

  auto ste = score_ste(enc, table);
  EXPECT_EQ(ste.size(), reference_points(table).size());
}

TEST(TrainAsc, LossDecreasesOnSeparableData) {
  EmbeddingTable train = separable_table(13);
  auto cfg = small_asc();
  cfg.epochs = 20;
  Rng rng(0);
  AscModel model(AscConfig{}, rng);
  auto r = train_asc(model, train, {}, cfg);
  std::vector<double> windows;
  for (std::size_t w = 0; w < 4; ++w) {
    double s = 0;
    for (std::size_t e = 5 * w; e < 5 * w + 5; ++e) s += r.metrics[e].loss;
    windows.push_back(s / 5);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) EXPECT_LE(windows[w], windows[w - 1]);
  EXPECT_GT(r.metrics.back().ap, 0.9);
}

TEST(TrainAsc, SeededRunsAreBitwiseReproducible) {
  EmbeddingTable train = separable_table(14), val = separable_table(15);
  auto cfg = small_asc();
  cfg.distortion = Distortion::shuffle_time;
  auto run = [&] {
    Rng rng(0);
    AscModel model(AscConfig{}, rng);
    std::ostringstream log;
    train_asc(model, train, val, cfg, &log);
    return log.str();
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainAsc, CheckpointRoundTripGivesIdenticalScores) {
  EmbeddingTable train = separable_table(16), val = separable_table(17);
  auto cfg = small_asc();
  Rng rng(0);
  AscModel model(AscConfig{}, rng);
  auto r = train_asc(model, train, val, cfg);
  ASSERT_GE(r.best_epoch, 0);
  model.load_state_dict({r.best_state.begin(), r.best_state.end()});
  auto path = std::filesystem::temp_directory_path() / "asc_train_roundtrip.ckpt";
  save_checkpoint(path, model.state_dict());

  AscConfig mc = cfg.model;
  mc.L = cfg.ensemble.L;
  mc.S = cfg.ensemble.S;
  mc.d = 4;
  Rng other(99);
  AscModel restored(mc, other);
  restored.load_state_dict(load_checkpoint(path));
  std::filesystem::remove(path);
  auto a = score_asc(model, val, cfg.ensemble, Distortion::none, 5);
  auto b = score_asc(restored, val, cfg.ensemble, Distortion::none, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);
  EXPECT_NEAR(average_precision(a), r.best_ap, 1e-12);
}

TEST(TrainAsc, EmptyCacheIsAnError) {
  Rng rng(0);
  AscModel model(AscConfig{}, rng);
  EXPECT_THROW(train_asc(model, EmbeddingTable{}, {}, small_asc()), DataError);
}

TEST(Annotate, WidthsAndFaceCounts) {
  FaceTrack a{"v", "v:0", {{0.0, {0.1, 0.1, 0.2, 0.3}, 1}, {0.2, {0.1, 0.1, 0.3, 0.3}, 0}}};
  FaceTrack b{"v", "v:1", {{0.2, {0.5, 0.1, 0.6, 0.3}, 0}}};
  std::vector<ScoredDetection> d{{"v", "v:0", 0.0, 0.5, 1}, {"v", "v:0", 0.2, 0.5, 0}, {"v", "v:1", 0.2, 0.5, 0}};
  annotate_detections(d, {a, b}, 640, 0.05);
  EXPECT_NEAR(d[0].face_width_px, 64, 1e-9);
  EXPECT_NEAR(d[1].face_width_px, 128, 1e-9);
  EXPECT_EQ(d[0].cooccurring_faces, 1);
  EXPECT_EQ(d[1].cooccurring_faces, 2);
  EXPECT_EQ(d[2].cooccurring_faces, 2);
}
