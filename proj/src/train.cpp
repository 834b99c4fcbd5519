#include "asc/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace asc {

void Schedule::validate() const {
  if (!(initial_lr >= 0) || !(gamma > 0 && gamma <= 1) || period_epochs < 1) {
    throw ShapeError("schedule: need lr >= 0, gamma in (0,1] and period >= 1");
  }
}

double lr_at(const Schedule& s, Index epoch) {
  s.validate();
  if (epoch < 0) throw ShapeError("lr_at: negative epoch");
  return s.initial_lr * std::pow(s.gamma, static_cast<double>(epoch / s.period_epochs));
}

Adam::Adam(NamedTensors params, double learning_rate, AdamOptions options)
    : params_(std::move(params)), lr_(learning_rate), opt_(options) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
  }
}

void Adam::step() {
  std::vector<Buffer> grads;
  grads.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    grads.push_back(t.has_grad() ? t.grad() : Buffer(static_cast<std::size_t>(t.numel()), 0.0));
    for (Scalar g : grads.back()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);
    }
  }
  ++steps_;
  const double c1 = 1 - std::pow(opt_.beta1, static_cast<double>(steps_));
  const double c2 = 1 - std::pow(opt_.beta2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto w = params_[p].second.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1 - opt_.beta2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// Clips -------------------------------------------------------------------------

Index ClipConfig::mel_frames() const {
  return mel_frame_count(static_cast<Index>(std::llround(tau * mel.sample_rate_hz)), mel);
}

void ClipConfig::validate() const {
  if (k < 1 || !(tau > 0) || crop_size < 1) throw ShapeError("clip config: k, tau and crop size must be positive");
}

ClipBuilder::ClipBuilder(const MediaSource& media, ClipConfig cfg) : media_(media), cfg_(std::move(cfg)) {
  cfg_.validate();
}

std::pair<Tensor, Tensor> ClipBuilder::clip(const std::string& video_id, const std::string& track_id, double t,
                                            Rng* augment_rng) const {
  const double lo = t - cfg_.tau / 2, hi = t + cfg_.tau / 2;
  auto frames = media_.track_frames(track_id, lo, hi);
  CropStack stack = build_crop_stack(frames, t, cfg_.k, cfg_.tau, cfg_.crop_size, cfg_.crop_size, track_id);
  if (augment_rng) stack = augment(stack, *augment_rng);
  AudioSnippet audio = media_.audio(video_id, lo, hi);
  return {visual_tensor(stack), audio_tensor(mel_spectrogram(audio, cfg_.mel))};
}

std::pair<Tensor, Tensor> ClipBuilder::batch(const std::vector<ClipDescriptor>& clips, Rng* augment_rng) const {
  if (clips.empty()) throw DataError("clip batch: no clips");
  std::vector<Tensor> vis, aud;
  for (const auto& c : clips) {
    auto [v, a] = clip(c.video_id, c.track_id, c.center_time, augment_rng);
    vis.push_back(std::move(v));
    aud.push_back(std::move(a));
  }
  return {stack(vis, 0), stack(aud, 0)};
}

void check_compatible(const EncoderConfig& e, const ClipConfig& c) {
  if (e.frames_per_clip != c.k || e.frame_height != c.crop_size || e.frame_width != c.crop_size ||
      e.mel_bands != c.mel.n_mels || e.mel_frames != c.mel_frames()) {
    throw ShapeError("encoder expects k=" + std::to_string(e.frames_per_clip) + " crops " +
                     std::to_string(e.frame_height) + "x" + std::to_string(e.frame_width) + " mel " +
                     std::to_string(e.mel_bands) + "x" + std::to_string(e.mel_frames) + ", clips give k=" +
                     std::to_string(c.k) + " crops " + std::to_string(c.crop_size) + " mel " +
                     std::to_string(c.mel.n_mels) + "x" + std::to_string(c.mel_frames()));
  }
}

// Training ----------------------------------------------------------------------

void write_metrics_header(std::ostream& os) { os << "epoch,split,loss,ap\n"; }

void write_metrics_row(std::ostream& os, const EpochMetrics& m) {
  const auto old = os.precision(17);
  os << m.epoch << ',' << m.split << ',' << m.loss << ',' << m.ap << '\n';
  os.flush();
  os.precision(old);
}

namespace {

void record(TrainResult& r, EpochMetrics m, std::ostream* log) {
  if (log) write_metrics_row(*log, m);
  r.metrics.push_back(std::move(m));
}

std::vector<ClipDescriptor> every_detection(const std::vector<FaceTrack>& tracks, Index stride) {
  std::vector<ClipDescriptor> out;
  for (const auto& tr : tracks) {
    for (std::size_t i = 0; i < tr.detections.size(); i += static_cast<std::size_t>(stride)) {
      out.push_back({tr.video_id, tr.track_id, static_cast<Index>(i), tr.detections[i].timestamp, tr.detections[i].label});
    }
  }
  return out;
}

bool has_both_classes(const std::vector<int>& labels) {
  return std::find(labels.begin(), labels.end(), 1) != labels.end();
}

}  // namespace

std::pair<double, double> evaluate_ste(ShortTermEncoder& encoder, const ClipBuilder& builder,
                                       const std::vector<FaceTrack>& tracks, Index stride, Index batch_size) {
  NoGradGuard guard;
  const auto clips = every_detection(tracks, std::max<Index>(stride, 1));
  if (clips.empty()) throw DataError("evaluate_ste: no detections");
  std::vector<double> scores;
  std::vector<int> labels;
  double loss = 0;
  for (std::size_t b = 0; b < clips.size(); b += static_cast<std::size_t>(batch_size)) {
    std::vector<ClipDescriptor> chunk(clips.begin() + static_cast<std::ptrdiff_t>(b),
                                      clips.begin() + static_cast<std::ptrdiff_t>(std::min(clips.size(), b + static_cast<std::size_t>(batch_size))));
    auto [v, a] = builder.batch(chunk);
    std::vector<int> y;
    for (const auto& c : chunk) y.push_back(c.label);
    SteOutput out = encoder.forward(v, a, Mode::eval);
    loss += ste_loss(out, y).item() * static_cast<double>(chunk.size());
    for (Scalar p : ShortTermEncoder::speaking_probability(out.logits_av)) scores.push_back(p);
    labels.insert(labels.end(), y.begin(), y.end());
  }
  const double ap = has_both_classes(labels) ? average_precision(scores, labels) : 0.0;
  return {loss / static_cast<double>(clips.size()), ap};
}

TrainResult train_ste(ShortTermEncoder& encoder, const MediaSource& media, const std::vector<FaceTrack>& train,
                      const std::vector<FaceTrack>& val, const SteTrainConfig& cfg, std::ostream* log) {
  if (train.empty()) throw DataError("train_ste: empty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.clips_per_track < 1) {
    throw ShapeError("train_ste: epochs, batch size and clips per track must be positive");
  }
  cfg.schedule.validate();
  check_compatible(encoder.config(), cfg.clips);
  ClipBuilder builder(media, cfg.clips);
  Rng rng(cfg.seed);
  Adam opt(encoder.parameters(), lr_at(cfg.schedule, 0), cfg.adam);
  TrainResult result;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_learning_rate(lr_at(cfg.schedule, epoch));
    std::vector<ClipDescriptor> clips;
    for (Index r = 0; r < cfg.clips_per_track; ++r) {
      // Every detection may serve as a clip center: crops come from the frames
      // around it, not from neighbouring detections.
      auto part = ste_epoch_sample(train, 1, rng);
      clips.insert(clips.end(), part.begin(), part.end());
    }
    std::shuffle(clips.begin(), clips.end(), rng);

    double loss_sum = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t b = 0; b < clips.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<ClipDescriptor> chunk(
          clips.begin() + static_cast<std::ptrdiff_t>(b),
          clips.begin() + static_cast<std::ptrdiff_t>(std::min(clips.size(), b + static_cast<std::size_t>(cfg.batch_size))));
      auto [v, a] = builder.batch(chunk, cfg.augment ? &rng : nullptr);
      std::vector<int> y;
      for (const auto& c : chunk) y.push_back(c.label);
      opt.zero_grad();
      SteOutput out = encoder.forward(v, a, Mode::train);
      Tensor loss = ste_loss(out, y);
      if (!std::isfinite(loss.item())) throw NumericError("train_ste: non-finite loss at epoch " + std::to_string(epoch));
      loss.backward();
      opt.step();
      loss_sum += loss.item() * static_cast<double>(chunk.size());
      for (Scalar p : ShortTermEncoder::speaking_probability(out.logits_av.detach())) scores.push_back(p);
      labels.insert(labels.end(), y.begin(), y.end());
    }
    const double train_ap = has_both_classes(labels) ? average_precision(scores, labels) : 0.0;
    record(result, {epoch, "train", loss_sum / static_cast<double>(clips.size()), train_ap}, log);

    double selection = train_ap;
    if (!val.empty()) {
      auto [vl, vap] = evaluate_ste(encoder, builder, val, cfg.val_stride, std::max<Index>(cfg.batch_size, 16));
      record(result, {epoch, "val", vl, vap}, log);
      selection = vap;
    }
    if (val.empty() ? epoch == cfg.epochs - 1 : selection > result.best_ap) {
      result.best_ap = selection;
      result.best_epoch = epoch;
      result.best_state = encoder.state_dict();
    }
  }
  result.optimizer_steps = opt.step_count();
  return result;
}

EmbeddingTable embed(ShortTermEncoder& encoder, const MediaSource& media, const std::vector<FaceTrack>& tracks,
                     const ClipConfig& clips, Index batch_size) {
  check_compatible(encoder.config(), clips);
  if (batch_size < 1) throw ShapeError("embed: batch size must be positive");
  ClipBuilder builder(media, clips);
  NoGradGuard guard;
  EmbeddingTable table;
  for (const auto& tr : tracks) {
    tr.validate();
    TrackEmbeddings te;
    te.video_id = tr.video_id;
    te.track_id = tr.track_id;
    te.values = Matrix(static_cast<Index>(tr.detections.size()), encoder.config().embedding_dim());
    const auto all = every_detection({tr}, 1);
    for (std::size_t b = 0; b < all.size(); b += static_cast<std::size_t>(batch_size)) {
      const std::size_t e = std::min(all.size(), b + static_cast<std::size_t>(batch_size));
      std::vector<ClipDescriptor> chunk(all.begin() + static_cast<std::ptrdiff_t>(b), all.begin() + static_cast<std::ptrdiff_t>(e));
      auto [v, a] = builder.batch(chunk);
      Tensor u = encoder.forward(v, a, Mode::eval).u;
      te.values.middleRows(static_cast<Index>(b), static_cast<Index>(e - b)) = u.matrix();
    }
    for (const auto& d : tr.detections) {
      te.timestamps.push_back(d.timestamp);
      te.labels.push_back(d.label);
    }
    table.add(std::move(te));
  }
  return table;
}

std::vector<ReferencePoint> reference_points(const EmbeddingTable& table) {
  std::vector<ReferencePoint> out;
  for (const auto& tr : table.tracks()) {
    if (tr.labels.empty()) continue;
    for (std::size_t i = 0; i < tr.timestamps.size(); ++i) {
      out.push_back({tr.video_id, tr.track_id, tr.timestamps[i], tr.labels[i]});
    }
  }
  return out;
}

namespace {

std::vector<ScoredDetection> score_points(const AscModel& model, const EmbeddingTable& table,
                                          const std::vector<ReferencePoint>& points, const EnsembleConfig& ensemble,
                                          Distortion distortion, std::uint64_t seed, Index batch_size) {
  Rng rng(seed);
  std::vector<ScoredDetection> out;
  for (std::size_t b = 0; b < points.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(points.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<ContextEnsemble> ens;
    for (std::size_t i = b; i < e; ++i) ens.push_back(assemble(table, points[i].t, points[i].track_id, ensemble, rng, distortion));
    auto [C, y] = batch_ensembles(ens);
    auto p = model.predict(C);
    for (std::size_t i = b; i < e; ++i) {
      out.push_back({points[i].video_id, points[i].track_id, points[i].t, p[i - b], points[i].label});
    }
  }
  return out;
}

}  // namespace

TrainResult train_asc(AscModel& model, const EmbeddingTable& train, const EmbeddingTable& val,
                      const AscTrainConfig& cfg, std::ostream* log) {
  auto points = reference_points(train);
  if (points.empty()) throw DataError("train_asc: the embedding cache has no labelled detections");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ShapeError("train_asc: epochs and batch size must be positive");
  cfg.schedule.validate();
  cfg.ensemble.validate();
  AscConfig mc = cfg.model;
  mc.L = cfg.ensemble.L;
  mc.S = cfg.ensemble.S;
  mc.d = train.dim();
  Rng rng(cfg.seed);
  model = AscModel(mc, rng);
  Adam opt(model.parameters(), lr_at(cfg.schedule, 0), cfg.adam);
  const auto val_points = reference_points(val);
  TrainResult result;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_learning_rate(lr_at(cfg.schedule, epoch));
    std::shuffle(points.begin(), points.end(), rng);
    double loss_sum = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t b = 0; b < points.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(points.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<ContextEnsemble> ens;
      for (std::size_t i = b; i < e; ++i) {
        ens.push_back(assemble(train, points[i].t, points[i].track_id, cfg.ensemble, rng, cfg.distortion));
      }
      auto [C, y] = batch_ensembles(ens);
      opt.zero_grad();
      Tensor logits = model.forward(C).logits;
      Tensor loss = asc_loss(logits, y);
      if (!std::isfinite(loss.item())) throw NumericError("train_asc: non-finite loss at epoch " + std::to_string(epoch));
      loss.backward();
      opt.step();
      loss_sum += loss.item() * static_cast<double>(e - b);
      Tensor p = softmax_rows(logits.detach());
      for (Index i = 0; i < p.dim(0); ++i) scores.push_back(p.at({i, 1}));
      labels.insert(labels.end(), y.begin(), y.end());
    }
    const double train_ap = has_both_classes(labels) ? average_precision(scores, labels) : 0.0;
    record(result, {epoch, "train", loss_sum / static_cast<double>(points.size()), train_ap}, log);

    double selection = train_ap;
    if (!val_points.empty()) {
      auto dets = score_points(model, val, val_points, cfg.ensemble, cfg.distortion, cfg.seed + 1, 64);
      double vl = 0;
      std::vector<int> vy;
      for (const auto& d : dets) {
        vl -= std::log(std::clamp(d.label ? d.score : 1 - d.score, 1e-300, 1.0));
        vy.push_back(d.label);
      }
      const double vap = has_both_classes(vy) ? average_precision(dets) : 0.0;
      record(result, {epoch, "val", vl / static_cast<double>(dets.size()), vap}, log);
      selection = vap;
    }
    if (val_points.empty() ? epoch == cfg.epochs - 1 : selection > result.best_ap) {
      result.best_ap = selection;
      result.best_epoch = epoch;
      result.best_state = model.state_dict();
    }
  }
  result.optimizer_steps = opt.step_count();
  return result;
}

std::vector<ScoredDetection> score_asc(const AscModel& model, const EmbeddingTable& table, const EnsembleConfig& ensemble,
                                       Distortion distortion, std::uint64_t seed, Index batch_size) {
  return score_points(model, table, reference_points(table), ensemble, distortion, seed, std::max<Index>(batch_size, 1));
}

std::vector<ScoredDetection> score_ste(const ShortTermEncoder& encoder, const EmbeddingTable& table) {
  NoGradGuard guard;
  std::vector<ScoredDetection> out;
  for (const auto& tr : table.tracks()) {
    if (tr.labels.empty()) continue;
    const Index n = static_cast<Index>(tr.timestamps.size());
    Tensor u({n, tr.values.cols()}, Buffer(tr.values.data(), tr.values.data() + tr.values.size()));
    auto p = ShortTermEncoder::speaking_probability(encoder.fused_logits(u));
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      out.push_back({tr.video_id, tr.track_id, tr.timestamps[k], p[k], tr.labels[k]});
    }
  }
  return out;
}

void annotate_detections(std::vector<ScoredDetection>& detections, const std::vector<FaceTrack>& tracks,
                         double frame_width_px, double tolerance) {
  std::map<std::string, const FaceTrack*> by_id;
  std::map<std::string, std::vector<const FaceTrack*>> by_video;
  for (const auto& t : tracks) {
    by_id[t.track_id] = &t;
    by_video[t.video_id].push_back(&t);
  }
  auto near = [](const FaceTrack& t, double ts, double tol) -> const Detection* {
    auto it = std::lower_bound(t.detections.begin(), t.detections.end(), ts - tol,
                               [](const Detection& d, double v) { return d.timestamp < v; });
    return it != t.detections.end() && it->timestamp <= ts + tol ? &*it : nullptr;
  };
  for (auto& d : detections) {
    auto it = by_id.find(d.track_id);
    if (it == by_id.end()) throw DataError("annotate: unknown track " + d.track_id);
    if (const Detection* own = near(*it->second, d.timestamp, 1e-9)) d.face_width_px = face_width_px(*own, frame_width_px);
    Index faces = 0;
    for (const FaceTrack* t : by_video[d.video_id]) faces += near(*t, d.timestamp, tolerance) ? 1 : 0;
    d.cooccurring_faces = std::max<Index>(faces, 1);
  }
}

}  // namespace asc
