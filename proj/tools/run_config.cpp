#include "run_config.hpp"

#include <fstream>

namespace asc::cli {

using nlohmann::json;

namespace {

struct Entry {
  const char* key;
  json value;
  const char* help;
};

std::vector<Entry> defaults() {
  const SyntheticConfig d;
  const ClipConfig c;
  const EncoderConfig e;
  const SteTrainConfig s;
  const AscTrainConfig a;
  const AblationConfig b;
  return {
      {"seed", 0, "master seed for data, splits, initialization and sampling"},
      {"deterministic", true, "single ordered pipeline (always on; recorded for reproducibility)"},

      {"data_num_videos", d.num_videos, "synthetic videos"},
      {"data_video_seconds", d.video_seconds, "length of each synthetic video"},
      {"data_min_speakers", d.min_speakers, "fewest speakers per video"},
      {"data_max_speakers", d.max_speakers, "most speakers per video"},
      {"data_detection_rate_hz", d.detection_rate_hz, "face detection rate"},
      {"data_frame_rate_hz", d.frame_rate_hz, "video frame rate"},
      {"data_sample_rate_hz", d.sample_rate_hz, "audio sample rate"},
      {"data_crop_size", d.crop_size, "rendered face crop size in pixels"},
      {"data_frame_width_px", d.frame_width_px, "nominal frame width for face sizes"},
      {"data_frame_height_px", d.frame_height_px, "nominal frame height"},
      {"data_turn_min", d.turn_min, "shortest speaking turn, seconds"},
      {"data_turn_max", d.turn_max, "longest speaking turn, seconds"},
      {"data_filler_probability", d.filler_probability, "chance that a turn is a short filler"},
      {"data_filler_max", d.filler_max, "longest filler, seconds"},
      {"data_gap_mean", d.gap_mean, "mean silence between turns, seconds"},
      {"data_overlap_probability", d.overlap_probability, "chance that a turn overlaps the previous one"},
      {"data_overlap_max", d.overlap_max, "longest overlap, seconds"},
      {"data_partial_track_probability", d.partial_track_probability, "chance that a track covers part of the video"},
      {"data_distractor_probability", d.distractor_probability, "chance of silent mouth movement per speaker"},
      {"data_min_face_px", d.min_face_px, "smallest face width"},
      {"data_max_face_px", d.max_face_px, "largest face width"},
      {"data_audio_noise", d.audio_noise, "audio noise standard deviation"},
      {"data_visual_noise", d.visual_noise, "pixel noise standard deviation at 64 px faces"},
      {"data_lip_amplitude", d.lip_amplitude, "mouth darkening strength while speaking"},

      {"split_val", 0.1, "fraction of videos held out for model selection"},
      {"split_test", 0.2, "fraction of videos held out for evaluation"},

      {"clip_k", c.k, "frames per clip"},
      {"clip_tau", c.tau, "clip length, seconds"},
      {"clip_crop", c.crop_size, "encoder input size in pixels"},
      {"clip_mel_bands", c.mel.n_mels, "mel bands"},

      {"encoder_widths", e.stage_widths, "channels per residual stage"},
      {"encoder_blocks", e.blocks_per_stage, "basic blocks per stage"},
      {"encoder_stem_pool", e.stem_pool, "max pool after the stem"},
      {"encoder_rescale_stem", e.rescale_visual_stem, "scale the tiled visual stem by 1/k"},

      {"ste_lr", s.schedule.initial_lr, "STE initial learning rate"},
      {"ste_gamma", s.schedule.gamma, "STE learning rate decay factor"},
      {"ste_period", s.schedule.period_epochs, "STE epochs between decays"},
      {"ste_epochs", s.epochs, "STE epochs"},
      {"ste_batch", s.batch_size, "STE batch size"},
      {"ste_clips_per_track", s.clips_per_track, "STE clips drawn per track per epoch"},
      {"ste_augment", s.augment, "random flip and corner crop"},
      {"ste_val_stride", s.val_stride, "score every n-th validation detection"},

      {"asc_arch", architecture_name(a.model.architecture),
       "full, context_linear, pairwise_only, temporal_only or mlp_head"},
      {"asc_pooling", "reference", "LSTM output fed to the head: reference or mean"},
      {"asc_hidden", a.model.hidden, "LSTM width"},
      {"asc_bottleneck", a.model.bottleneck, "attention bottleneck width, 0 for d/2"},
      {"asc_mlp_hidden", a.model.mlp_hidden, "hidden width of the mlp_head variant"},
      {"asc_L", a.ensemble.L, "clips per speaker"},
      {"asc_S", a.ensemble.S, "speakers per ensemble"},
      {"asc_T", a.ensemble.T, "ensemble window, seconds"},
      {"asc_tolerance", a.ensemble.cooccurrence_tolerance, "co-occurrence tolerance, seconds"},
      {"asc_lr", a.schedule.initial_lr, "ASC initial learning rate"},
      {"asc_gamma", a.schedule.gamma, "ASC learning rate decay factor"},
      {"asc_period", a.schedule.period_epochs, "ASC epochs between decays"},
      {"asc_epochs", a.epochs, "ASC epochs"},
      {"asc_batch", a.batch_size, "ASC batch size"},
      {"asc_distortion", "none", "context distortion: none, shuffle_time or out_of_context"},

      {"eval_metric", "pooled", "pooled or per_video"},
      {"eval_smooth_window", 0.0, "median smoothing window for eval, 0 for none"},

      {"ablate_seeds", b.seeds, "ASC seeds per arm"},
      {"ablate_short_window", b.short_window, "short smoothing window, seconds"},
      {"ablate_long_window", b.long_window, "long smoothing window, 0 for asc_T"},
      {"ablate_L_grid", b.L_grid, "clips per speaker for table4"},
      {"ablate_S_grid", b.S_grid, "speakers per ensemble for table4"},
      {"ablate_clip_spacing", b.clip_spacing, "clip spacing for table4, seconds"},
  };
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key ") + key + ": " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& e : defaults()) values_[e.key] = e.value;
}

const std::vector<KeySpec>& RunConfig::keys() {
  static const std::vector<KeySpec> k = [] {
    std::vector<KeySpec> out;
    for (const auto& e : defaults()) out.push_back({e.key, std::string(e.help) + " (default " + e.value.dump() + ")"});
    return out;
  }();
  return k;
}

std::string RunConfig::flag_for(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin() + 2, f.end(), '_', '-');
  return f;
}

void RunConfig::merge(const json& overrides) {
  if (!overrides.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [k, v] : overrides.items()) {
    if (!values_.contains(k)) throw UsageError("unknown config key '" + k + "'");
    const auto& cur = values_[k];
    const bool ok = (cur.is_number() && v.is_number()) || (cur.is_boolean() && v.is_boolean()) ||
                    (cur.is_string() && v.is_string()) || (cur.is_array() && v.is_array());
    if (!ok) throw UsageError("config key '" + k + "' expects " + std::string(cur.type_name()));
    values_[k] = cur.is_number_integer() && v.is_number_float() ? json(static_cast<std::int64_t>(v.get<double>())) : v;
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config " + path.string());
  try {
    merge(json::parse(is));
  } catch (const json::parse_error& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }
}

void RunConfig::set_from_string(const std::string& key, const std::string& value) {
  if (!values_.contains(key)) throw UsageError("unknown config key '" + key + "'");
  const auto& cur = values_[key];
  json v;
  try {
    if (cur.is_string()) {
      v = value;
    } else if (cur.is_boolean()) {
      if (value == "true" || value == "1") v = true;
      else if (value == "false" || value == "0") v = false;
      else throw UsageError(flag_for(key) + " expects true or false");
    } else if (cur.is_number_integer()) {
      std::size_t used = 0;
      v = std::stoll(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } else if (cur.is_number()) {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } else {
      v = json::parse(value.front() == '[' ? value : "[" + value + "]");
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError(flag_for(key) + ": cannot parse '" + value + "'");
  }
  merge(json{{key, v}});
}

std::uint64_t RunConfig::seed() const { return get<std::uint64_t>(values_, "seed"); }

SyntheticConfig RunConfig::data() const {
  SyntheticConfig d;
  const auto& j = values_;
  d.num_videos = get<Index>(j, "data_num_videos");
  d.video_seconds = get<double>(j, "data_video_seconds");
  d.min_speakers = get<Index>(j, "data_min_speakers");
  d.max_speakers = get<Index>(j, "data_max_speakers");
  d.detection_rate_hz = get<double>(j, "data_detection_rate_hz");
  d.frame_rate_hz = get<double>(j, "data_frame_rate_hz");
  d.sample_rate_hz = get<double>(j, "data_sample_rate_hz");
  d.crop_size = get<Index>(j, "data_crop_size");
  d.frame_width_px = get<double>(j, "data_frame_width_px");
  d.frame_height_px = get<double>(j, "data_frame_height_px");
  d.turn_min = get<double>(j, "data_turn_min");
  d.turn_max = get<double>(j, "data_turn_max");
  d.filler_probability = get<double>(j, "data_filler_probability");
  d.filler_max = get<double>(j, "data_filler_max");
  d.gap_mean = get<double>(j, "data_gap_mean");
  d.overlap_probability = get<double>(j, "data_overlap_probability");
  d.overlap_max = get<double>(j, "data_overlap_max");
  d.partial_track_probability = get<double>(j, "data_partial_track_probability");
  d.distractor_probability = get<double>(j, "data_distractor_probability");
  d.min_face_px = get<double>(j, "data_min_face_px");
  d.max_face_px = get<double>(j, "data_max_face_px");
  d.audio_noise = get<double>(j, "data_audio_noise");
  d.visual_noise = get<double>(j, "data_visual_noise");
  d.lip_amplitude = get<double>(j, "data_lip_amplitude");
  try {
    d.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return d;
}

std::vector<double> RunConfig::split_fractions() const {
  const double val = get<double>(values_, "split_val"), test = get<double>(values_, "split_test");
  if (val < 0 || test <= 0 || val + test >= 1) throw UsageError("split fractions must satisfy val >= 0, test > 0, val + test < 1");
  return {1 - val - test, val};
}

ClipConfig RunConfig::clips() const {
  ClipConfig c;
  c.k = get<Index>(values_, "clip_k");
  c.tau = get<double>(values_, "clip_tau");
  c.crop_size = get<Index>(values_, "clip_crop");
  c.mel.n_mels = get<Index>(values_, "clip_mel_bands");
  c.mel.sample_rate_hz = get<double>(values_, "data_sample_rate_hz");
  c.mel.f_max = c.mel.sample_rate_hz / 2;
  return c;
}

EncoderConfig RunConfig::encoder() const {
  const ClipConfig c = clips();
  EncoderConfig e;
  e.frame_height = e.frame_width = c.crop_size;
  e.frames_per_clip = c.k;
  e.mel_bands = c.mel.n_mels;
  e.mel_frames = c.mel_frames();
  e.stage_widths = get<std::vector<Index>>(values_, "encoder_widths");
  e.blocks_per_stage = get<Index>(values_, "encoder_blocks");
  e.stem_pool = get<bool>(values_, "encoder_stem_pool");
  e.rescale_visual_stem = get<bool>(values_, "encoder_rescale_stem");
  return e;
}

SteTrainConfig RunConfig::ste() const {
  SteTrainConfig s;
  s.encoder = encoder();
  s.clips = clips();
  s.schedule = {get<double>(values_, "ste_lr"), get<double>(values_, "ste_gamma"), get<Index>(values_, "ste_period")};
  s.epochs = get<Index>(values_, "ste_epochs");
  s.batch_size = get<Index>(values_, "ste_batch");
  s.clips_per_track = get<Index>(values_, "ste_clips_per_track");
  s.augment = get<bool>(values_, "ste_augment");
  s.val_stride = get<Index>(values_, "ste_val_stride");
  s.seed = seed();
  return s;
}

AscTrainConfig RunConfig::asc() const {
  AscTrainConfig a;
  try {
    a.model.architecture = parse_architecture(get<std::string>(values_, "asc_arch"));
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
  const auto pooling = get<std::string>(values_, "asc_pooling");
  if (pooling != "reference" && pooling != "mean") throw UsageError("--asc-pooling expects reference or mean");
  a.model.pooling = pooling == "mean" ? Pooling::mean : Pooling::reference;
  a.model.hidden = get<Index>(values_, "asc_hidden");
  a.model.bottleneck = get<Index>(values_, "asc_bottleneck");
  a.model.mlp_hidden = get<Index>(values_, "asc_mlp_hidden");
  a.ensemble.L = get<Index>(values_, "asc_L");
  a.ensemble.S = get<Index>(values_, "asc_S");
  a.ensemble.T = get<double>(values_, "asc_T");
  a.ensemble.tau = get<double>(values_, "clip_tau");
  a.ensemble.cooccurrence_tolerance = get<double>(values_, "asc_tolerance");
  a.schedule = {get<double>(values_, "asc_lr"), get<double>(values_, "asc_gamma"), get<Index>(values_, "asc_period")};
  a.epochs = get<Index>(values_, "asc_epochs");
  a.batch_size = get<Index>(values_, "asc_batch");
  const auto dist = get<std::string>(values_, "asc_distortion");
  if (dist == "none") a.distortion = Distortion::none;
  else if (dist == "shuffle_time") a.distortion = Distortion::shuffle_time;
  else if (dist == "out_of_context") a.distortion = Distortion::out_of_context;
  else throw UsageError("--asc-distortion expects none, shuffle_time or out_of_context");
  a.seed = seed();
  return a;
}

AblationConfig RunConfig::ablation() const {
  AblationConfig b;
  b.asc = asc();
  b.seeds = get<std::vector<std::uint64_t>>(values_, "ablate_seeds");
  b.metric = metric();
  b.short_window = get<double>(values_, "ablate_short_window");
  b.long_window = get<double>(values_, "ablate_long_window");
  b.L_grid = get<std::vector<Index>>(values_, "ablate_L_grid");
  b.S_grid = get<std::vector<Index>>(values_, "ablate_S_grid");
  b.clip_spacing = get<double>(values_, "ablate_clip_spacing");
  return b;
}

MetricKind RunConfig::metric() const {
  try {
    return parse_metric(get<std::string>(values_, "eval_metric"));
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
}

double RunConfig::smooth_window() const { return get<double>(values_, "eval_smooth_window"); }

void RunConfig::validate() const {
  try {
    data().validate();
    clips().validate();
    check_compatible(encoder(), clips());
    ste().schedule.validate();
    const AscTrainConfig a = asc();
    a.model.validate();
    a.ensemble.validate();
    a.schedule.validate();
    ablation();
    metric();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

}  // namespace asc::cli
