#include "asc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace asc {

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return mix(a ^ mix(b)); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& field, std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::logic_error&) {
    throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + field + "'");
  }
}

}  // namespace

void FaceTrack::validate() const {
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    if (i > 0 && !(d.timestamp > detections[i - 1].timestamp)) {
      throw DataError("track " + track_id + ": timestamps not strictly increasing at " + std::to_string(d.timestamp));
    }
    const auto& b = d.bbox;
    if (!(0 <= b.x1 && b.x1 < b.x2 && b.x2 <= 1 && 0 <= b.y1 && b.y1 < b.y2 && b.y2 <= 1)) {
      throw DataError("track " + track_id + ": bounding box out of range");
    }
  }
}

double face_width_px(const Detection& d, double frame_width_px) { return (d.bbox.x2 - d.bbox.x1) * frame_width_px; }

std::vector<FaceTrack> parse_ava_csv(std::istream& is) {
  std::vector<FaceTrack> tracks;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("video_id", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(trim(field));
    if (f.size() != 8) throw DataError("line " + std::to_string(lineno) + ": expected 8 columns, got " + std::to_string(f.size()));
    if (f[0].empty() || f[7].empty()) throw DataError("line " + std::to_string(lineno) + ": empty id");
    Detection d;
    d.timestamp = parse_double(f[1], lineno, "timestamp");
    d.bbox = {parse_double(f[2], lineno, "x1"), parse_double(f[3], lineno, "y1"), parse_double(f[4], lineno, "x2"),
              parse_double(f[5], lineno, "y2")};
    if (f[6] == "SPEAKING_AUDIBLE") {
      d.label = 1;
    } else if (f[6] == "NOT_SPEAKING" || f[6] == "SPEAKING_NOT_AUDIBLE") {
      d.label = 0;
    } else {
      throw DataError("line " + std::to_string(lineno) + ": unknown label '" + f[6] + "'");
    }
    auto key = std::make_pair(f[0], f[7]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, tracks.size()).first;
      tracks.push_back({f[0], f[7], {}});
    }
    auto& dets = tracks[it->second].detections;
    if (!dets.empty() && d.timestamp <= dets.back().timestamp) {
      throw DataError("line " + std::to_string(lineno) + ": non-monotone timestamp in track " + f[7]);
    }
    dets.push_back(d);
  }
  for (const auto& t : tracks) t.validate();
  return tracks;
}

std::vector<FaceTrack> parse_ava_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  return parse_ava_csv(is);
}

void write_ava_csv(std::ostream& os, const std::vector<FaceTrack>& tracks) {
  os << "video_id,frame_timestamp,entity_box_x1,entity_box_y1,entity_box_x2,entity_box_y2,label,entity_id\n";
  os.precision(17);
  for (const auto& t : tracks)
    for (const auto& d : t.detections) {
      os << t.video_id << ',' << d.timestamp << ',' << d.bbox.x1 << ',' << d.bbox.y1 << ',' << d.bbox.x2 << ','
         << d.bbox.y2 << ',' << (d.label ? "SPEAKING_AUDIBLE" : "NOT_SPEAKING") << ',' << t.track_id << '\n';
    }
}

std::vector<ClipDescriptor> ste_epoch_sample(const std::vector<FaceTrack>& tracks, Index k, Rng& rng) {
  if (k < 1) throw ShapeError("ste_epoch_sample: k must be >= 1");
  std::vector<ClipDescriptor> out;
  out.reserve(tracks.size());
  for (const auto& t : tracks) {
    const auto n = static_cast<Index>(t.detections.size());
    if (n == 0) continue;
    Index start = 0;
    Index center = n / 2;
    if (n >= k) {
      start = std::uniform_int_distribution<Index>(0, n - k)(rng);
      center = start + k / 2;
    }
    const auto& d = t.detections[static_cast<std::size_t>(center)];
    out.push_back({t.video_id, t.track_id, start, d.timestamp, d.label});
  }
  return out;
}

std::vector<ReferencePoint> asc_epoch_sample(const std::vector<FaceTrack>& tracks) {
  std::vector<ReferencePoint> out;
  for (const auto& t : tracks)
    for (const auto& d : t.detections) out.push_back({t.video_id, t.track_id, d.timestamp, d.label});
  return out;
}

// Synthetic conversations --------------------------------------------------

void SyntheticConfig::validate() const {
  if (num_videos < 1 || video_seconds <= 0) throw ShapeError("synthetic: need at least one non-empty video");
  if (min_speakers < 1 || max_speakers < min_speakers) throw ShapeError("synthetic: bad speaker range");
  if (detection_rate_hz <= 0 || frame_rate_hz <= 0 || sample_rate_hz <= 0 || crop_size < 8) {
    throw ShapeError("synthetic: rates and crop size must be positive");
  }
  if (turn_min <= 0 || turn_max < turn_min || filler_max <= 0.15) throw ShapeError("synthetic: bad turn durations");
  if (min_face_px <= 0 || max_face_px < min_face_px) throw ShapeError("synthetic: bad face size range");
}

bool SyntheticConversation::speaking(Index speaker, double t) const {
  for (const auto& u : turns) {
    if (u.speaker == speaker && t >= u.start && t < u.end) return true;
  }
  return false;
}

namespace {

constexpr double kSyllableHz = 4.5;
constexpr double kDistractorHz = 2.0;

struct MouthBox {
  Index y0, y1, x0, x1;
};

MouthBox mouth_box(Index size) {
  return {size * 20 / 32, size * 26 / 32, size * 10 / 32, size * 22 / 32};
}

// Syllable envelope in [0, 1]; the phase is per speaker so voices differ.
double syllable(double t, double phase, double hz) {
  return 0.5 * (1 + std::sin(2 * std::numbers::pi * hz * t + phase));
}

double speaker_phase(const SyntheticSpeaker& s) { return static_cast<double>(s.texture_seed % 6283) / 1000.0; }

// Articulation strength in [0.35, 1].
double speaker_articulation(const SyntheticSpeaker& s) {
  return 0.35 + 0.65 * static_cast<double>(mix(s.texture_seed, 17) % 1000) / 999.0;
}

BBox speaker_box(const SyntheticSpeaker& s, const SyntheticConfig& cfg) {
  const double w = std::min(0.95, s.face_px / cfg.frame_width_px);
  const double h = std::min(0.95, 1.2 * s.face_px / cfg.frame_height_px);
  const double fx = static_cast<double>(mix(s.texture_seed, 3) % 1000) / 1000.0;
  const double fy = static_cast<double>(mix(s.texture_seed, 5) % 1000) / 1000.0;
  BBox b;
  b.x1 = fx * (1 - w);
  b.y1 = fy * (1 - h);
  b.x2 = b.x1 + w;
  b.y2 = b.y1 + h;
  return b;
}

}  // namespace

SyntheticMedia::SyntheticMedia(std::vector<SyntheticConversation> conversations, SyntheticConfig cfg)
    : conversations_(std::move(conversations)), cfg_(cfg) {
  for (std::size_t c = 0; c < conversations_.size(); ++c) {
    video_index_[conversations_[c].video_id] = c;
    for (Index s = 0; s < conversations_[c].num_speakers(); ++s) {
      track_index_[conversations_[c].speakers[static_cast<std::size_t>(s)].track_id] = {c, s};
    }
  }
}

Image SyntheticMedia::render_frame(const SyntheticConversation& c, Index speaker, Index frame_index) const {
  const auto& sp = c.speakers[static_cast<std::size_t>(speaker)];
  const Index n = cfg_.crop_size;
  const double t = static_cast<double>(frame_index) / cfg_.frame_rate_hz;
  Image img(n, n);

  Rng tex(sp.texture_seed);
  std::uniform_real_distribution<double> u(0, 1);
  double base[3];
  for (double& b : base) b = 0.3 + 0.4 * u(tex);
  const double angle = std::numbers::pi * u(tex), freq = 1.5 + 3 * u(tex), phase = 2 * std::numbers::pi * u(tex);
  const double cx = std::cos(angle), cy = std::sin(angle);
  for (Index ch = 0; ch < 3; ++ch)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) {
        const double p = (cx * static_cast<double>(x) + cy * static_cast<double>(y)) / static_cast<double>(n);
        img.at(ch, y, x) = base[ch] + 0.15 * std::sin(2 * std::numbers::pi * freq * p + phase + static_cast<double>(ch));
      }

  double opening = 0;
  if (c.speaking(speaker, t)) {
    opening = speaker_articulation(sp) * syllable(t, speaker_phase(sp), kSyllableHz);
  } else {
    for (const auto& d : sp.distractors) {
      if (t >= d.start && t < d.end) opening = speaker_articulation(sp) * syllable(t, 0, kDistractorHz);
    }
  }
  const MouthBox m = mouth_box(n);
  for (Index ch = 0; ch < 3; ++ch)
    for (Index y = m.y0; y < m.y1; ++y)
      for (Index x = m.x0; x < m.x1; ++x) img.at(ch, y, x) -= cfg_.lip_amplitude * opening;

  // Small faces are upsampled from few pixels: model that as stronger noise.
  const double sigma = cfg_.visual_noise * std::clamp(64.0 / sp.face_px, 0.4, 3.0);
  Rng noise(mix(mix(c.seed, static_cast<std::uint64_t>(speaker) + 101), static_cast<std::uint64_t>(frame_index)));
  std::normal_distribution<double> g(0, sigma);
  for (auto& v : img.pixels) v += g(noise);
  return img;
}

double SyntheticMedia::mouth_energy(const SyntheticConversation& c, Index speaker, Index frame_index) const {
  SyntheticConfig quiet = cfg_;
  quiet.visual_noise = 0;
  SyntheticMedia clean({}, quiet);
  Image frame = clean.render_frame(c, speaker, frame_index);
  // Reference: same frame with the mouth at rest.
  SyntheticConversation still = c;
  still.turns.clear();
  for (auto& s : still.speakers) s.distractors.clear();
  Image rest = clean.render_frame(still, speaker, frame_index);
  const MouthBox m = mouth_box(cfg_.crop_size);
  double e = 0;
  Index count = 0;
  for (Index ch = 0; ch < 3; ++ch)
    for (Index y = m.y0; y < m.y1; ++y)
      for (Index x = m.x0; x < m.x1; ++x, ++count) {
        const double d = frame.at(ch, y, x) - rest.at(ch, y, x);
        e += d * d;
      }
  return e / static_cast<double>(count);
}

std::vector<TimedFrame> SyntheticMedia::track_frames(const std::string& track_id, double t0, double t1) const {
  auto it = track_index_.find(track_id);
  if (it == track_index_.end()) throw DataError("unknown synthetic track " + track_id);
  const auto& c = conversations_[it->second.first];
  const auto& sp = c.speakers[static_cast<std::size_t>(it->second.second)];
  const double lo = std::max(t0, sp.track_start), hi = std::min(t1, sp.track_end);
  std::vector<TimedFrame> out;
  const auto first = static_cast<Index>(std::ceil(lo * cfg_.frame_rate_hz - 1e-9));
  for (Index i = std::max<Index>(first, 0); static_cast<double>(i) / cfg_.frame_rate_hz <= hi + 1e-9; ++i) {
    out.push_back({static_cast<double>(i) / cfg_.frame_rate_hz, render_frame(c, it->second.second, i)});
  }
  return out;
}

AudioSnippet SyntheticMedia::audio(const std::string& video_id, double t0, double t1) const {
  auto it = video_index_.find(video_id);
  if (it == video_index_.end()) throw DataError("unknown synthetic video " + video_id);
  const auto& c = conversations_[it->second];
  const double sr = cfg_.sample_rate_hz;
  const auto n0 = static_cast<std::int64_t>(std::llround(t0 * sr));
  const auto count = static_cast<std::int64_t>(std::llround((t1 - t0) * sr));
  AudioSnippet a;
  a.sample_rate_hz = sr;
  a.duration = static_cast<double>(count) / sr;
  a.samples.assign(static_cast<std::size_t>(std::max<std::int64_t>(count, 0)), 0.0);

  for (const auto& u : c.turns) {
    const auto& sp = c.speakers[static_cast<std::size_t>(u.speaker)];
    const double ph = speaker_phase(sp);
    for (std::int64_t i = 0; i < count; ++i) {
      const double t = static_cast<double>(n0 + i) / sr;
      if (t < u.start || t >= u.end) continue;
      // 20 ms onset/offset ramps avoid clicks.
      const double ramp = std::min({1.0, (t - u.start) / 0.02, (u.end - t) / 0.02});
      double v = 0;
      for (int h = 1; h <= 4; ++h) v += std::sin(2 * std::numbers::pi * h * sp.pitch_hz * t) / h;
      a.samples[static_cast<std::size_t>(i)] += 0.2 * ramp * (0.2 + 0.8 * syllable(t, ph, kSyllableHz)) * v;
    }
  }
  // Noise is generated in fixed blocks so any window sees the same values.
  constexpr std::int64_t block = 4096;
  std::normal_distribution<double> g(0, cfg_.audio_noise);
  for (std::int64_t b = (n0 >= 0 ? n0 / block : (n0 - block + 1) / block); b * block < n0 + count; ++b) {
    Rng rng(mix(c.seed ^ 0xa0d10ULL, static_cast<std::uint64_t>(b)));
    for (std::int64_t j = 0; j < block; ++j) {
      const double v = g(rng);
      const std::int64_t i = b * block + j - n0;
      if (i >= 0 && i < count) a.samples[static_cast<std::size_t>(i)] += v;
    }
  }
  return a;
}

namespace {

std::vector<Utterance> schedule_turns(Index speakers, const SyntheticConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  std::vector<Utterance> turns;
  double t = uniform(0, 0.5);
  Index prev = -1;
  while (t < cfg.video_seconds) {
    Index s = 0;
    if (speakers > 1) {
      s = std::uniform_int_distribution<Index>(0, speakers - 2)(rng);
      if (prev >= 0 && s >= prev) ++s;
      if (prev < 0) s = std::uniform_int_distribution<Index>(0, speakers - 1)(rng);
    }
    const bool filler = u(rng) < cfg.filler_probability;
    const double dur = filler ? uniform(0.15, cfg.filler_max) : uniform(cfg.turn_min, cfg.turn_max);
    const double end = std::min(t + dur, cfg.video_seconds);
    turns.push_back({s, t, end});
    prev = s;
    double gap;
    if (speakers == 1) {
      gap = uniform(cfg.turn_min, cfg.turn_max);
    } else if (u(rng) < cfg.overlap_probability) {
      gap = -uniform(0.05, cfg.overlap_max);
    } else {
      gap = cfg.gap_mean > 0 ? std::exponential_distribution<double>(1.0 / cfg.gap_mean)(rng) : 0.0;
    }
    t = std::max(end + gap, t + 0.1);
  }
  return turns;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, Rng& rng, const std::string& video_prefix) {
  cfg.validate();
  SyntheticDataset ds;
  std::uniform_real_distribution<double> u(0, 1);
  for (Index v = 0; v < cfg.num_videos; ++v) {
    SyntheticConversation c;
    char name[32];
    std::snprintf(name, sizeof name, "%s%03d", video_prefix.c_str(), static_cast<int>(v));
    c.video_id = name;
    c.seed = rng();
    c.duration = cfg.video_seconds;
    const Index n = std::uniform_int_distribution<Index>(cfg.min_speakers, cfg.max_speakers)(rng);
    c.turns = schedule_turns(n, cfg, rng);
    for (Index s = 0; s < n; ++s) {
      SyntheticSpeaker sp;
      sp.track_id = c.video_id + ":" + std::to_string(s);
      sp.pitch_hz = 100 + 180 * u(rng);
      sp.face_px = cfg.min_face_px * std::pow(cfg.max_face_px / cfg.min_face_px, u(rng));
      sp.texture_seed = rng();
      sp.track_start = 0;
      sp.track_end = cfg.video_seconds;
      if (u(rng) < cfg.partial_track_probability) {
        const double len = cfg.video_seconds * (0.4 + 0.6 * u(rng));
        sp.track_start = (cfg.video_seconds - len) * u(rng);
        sp.track_end = sp.track_start + len;
      }
      if (u(rng) < cfg.distractor_probability) {
        const double len = 0.5 + u(rng);
        const double start = (cfg.video_seconds - len) * u(rng);
        sp.distractors.push_back({s, start, start + len});
      }
      c.speakers.push_back(sp);
    }
    ds.conversations.push_back(std::move(c));
  }
  ds.tracks = synthetic_tracks(cfg, ds.conversations);
  return ds;
}

std::vector<FaceTrack> synthetic_tracks(const SyntheticConfig& cfg, const std::vector<SyntheticConversation>& conversations) {
  std::vector<FaceTrack> tracks;
  const double step = 1.0 / cfg.detection_rate_hz;
  for (const auto& c : conversations) {
    for (Index s = 0; s < c.num_speakers(); ++s) {
      const auto& sp = c.speakers[static_cast<std::size_t>(s)];
      FaceTrack tr{c.video_id, sp.track_id, {}};
      const BBox box = speaker_box(sp, cfg);
      // Detections sit on a shared grid so tracks of one video co-occur exactly.
      for (auto j = static_cast<Index>(std::ceil(sp.track_start / step - 1e-9)); static_cast<double>(j) * step <= sp.track_end + 1e-9;
           ++j) {
        const double t = static_cast<double>(j) * step;
        if (t >= c.duration) break;
        tr.detections.push_back({t, box, c.speaking(s, t) ? 1 : 0});
      }
      if (!tr.detections.empty()) tracks.push_back(std::move(tr));
    }
  }
  return tracks;
}

std::vector<std::vector<FaceTrack>> split_by_video(const std::vector<FaceTrack>& tracks,
                                                   const std::vector<double>& fractions, Rng& rng) {
  std::vector<std::string> videos;
  for (const auto& t : tracks) {
    if (std::find(videos.begin(), videos.end(), t.video_id) == videos.end()) videos.push_back(t.video_id);
  }
  std::shuffle(videos.begin(), videos.end(), rng);
  std::map<std::string, std::size_t> part;
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    const auto count = static_cast<std::size_t>(std::lround(fractions[p] * static_cast<double>(videos.size())));
    for (std::size_t i = 0; i < count && assigned < videos.size(); ++i) part[videos[assigned++]] = p;
  }
  while (assigned < videos.size()) part[videos[assigned++]] = fractions.size();
  std::vector<std::vector<FaceTrack>> out(fractions.size() + 1);
  for (const auto& t : tracks) out[part[t.video_id]].push_back(t);
  return out;
}

// Manifest -----------------------------------------------------------------

namespace {

using nlohmann::json;

json config_json(const SyntheticConfig& c) {
  return {{"num_videos", c.num_videos},
          {"video_seconds", c.video_seconds},
          {"min_speakers", c.min_speakers},
          {"max_speakers", c.max_speakers},
          {"detection_rate_hz", c.detection_rate_hz},
          {"frame_rate_hz", c.frame_rate_hz},
          {"sample_rate_hz", c.sample_rate_hz},
          {"crop_size", c.crop_size},
          {"frame_width_px", c.frame_width_px},
          {"frame_height_px", c.frame_height_px},
          {"turn_min", c.turn_min},
          {"turn_max", c.turn_max},
          {"filler_probability", c.filler_probability},
          {"filler_max", c.filler_max},
          {"gap_mean", c.gap_mean},
          {"overlap_probability", c.overlap_probability},
          {"overlap_max", c.overlap_max},
          {"partial_track_probability", c.partial_track_probability},
          {"distractor_probability", c.distractor_probability},
          {"min_face_px", c.min_face_px},
          {"max_face_px", c.max_face_px},
          {"audio_noise", c.audio_noise},
          {"visual_noise", c.visual_noise},
          {"lip_amplitude", c.lip_amplitude}};
}

SyntheticConfig config_from_json(const json& j) {
  SyntheticConfig c;
  j.at("num_videos").get_to(c.num_videos);
  j.at("video_seconds").get_to(c.video_seconds);
  j.at("min_speakers").get_to(c.min_speakers);
  j.at("max_speakers").get_to(c.max_speakers);
  j.at("detection_rate_hz").get_to(c.detection_rate_hz);
  j.at("frame_rate_hz").get_to(c.frame_rate_hz);
  j.at("sample_rate_hz").get_to(c.sample_rate_hz);
  j.at("crop_size").get_to(c.crop_size);
  j.at("frame_width_px").get_to(c.frame_width_px);
  j.at("frame_height_px").get_to(c.frame_height_px);
  j.at("turn_min").get_to(c.turn_min);
  j.at("turn_max").get_to(c.turn_max);
  j.at("filler_probability").get_to(c.filler_probability);
  j.at("filler_max").get_to(c.filler_max);
  j.at("gap_mean").get_to(c.gap_mean);
  j.at("overlap_probability").get_to(c.overlap_probability);
  j.at("overlap_max").get_to(c.overlap_max);
  j.at("partial_track_probability").get_to(c.partial_track_probability);
  j.at("distractor_probability").get_to(c.distractor_probability);
  j.at("min_face_px").get_to(c.min_face_px);
  j.at("max_face_px").get_to(c.max_face_px);
  j.at("audio_noise").get_to(c.audio_noise);
  j.at("visual_noise").get_to(c.visual_noise);
  j.at("lip_amplitude").get_to(c.lip_amplitude);
  return c;
}

json utterances_json(const std::vector<Utterance>& us) {
  json a = json::array();
  for (const auto& u : us) a.push_back({u.speaker, u.start, u.end});
  return a;
}

std::vector<Utterance> utterances_from_json(const json& a) {
  std::vector<Utterance> out;
  for (const auto& u : a) out.push_back({u.at(0).get<Index>(), u.at(1).get<double>(), u.at(2).get<double>()});
  return out;
}

}  // namespace

void save_synthetic_manifest(const std::filesystem::path& path, const SyntheticConfig& cfg,
                             const std::vector<SyntheticConversation>& conversations) {
  json videos = json::array();
  for (const auto& c : conversations) {
    json speakers = json::array();
    for (const auto& s : c.speakers) {
      speakers.push_back({{"track_id", s.track_id},
                          {"media", "synthetic:" + s.track_id},
                          {"pitch_hz", s.pitch_hz},
                          {"face_px", s.face_px},
                          {"track_start", s.track_start},
                          {"track_end", s.track_end},
                          {"texture_seed", s.texture_seed},
                          {"distractors", utterances_json(s.distractors)}});
    }
    videos.push_back({{"video_id", c.video_id},
                      {"seed", c.seed},
                      {"duration", c.duration},
                      {"speakers", speakers},
                      {"turns", utterances_json(c.turns)}});
  }
  json doc{{"format", "asc-synthetic"}, {"version", 1}, {"config", config_json(cfg)}, {"videos", videos}};
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << doc.dump(1) << '\n';
}

std::pair<SyntheticConfig, std::vector<SyntheticConversation>> load_synthetic_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    json doc = json::parse(is);
    if (doc.value("format", "") != "asc-synthetic") throw DataError(path.string() + " is not a synthetic manifest");
    SyntheticConfig cfg = config_from_json(doc.at("config"));
    std::vector<SyntheticConversation> out;
    for (const auto& v : doc.at("videos")) {
      SyntheticConversation c;
      v.at("video_id").get_to(c.video_id);
      v.at("seed").get_to(c.seed);
      v.at("duration").get_to(c.duration);
      c.turns = utterances_from_json(v.at("turns"));
      for (const auto& s : v.at("speakers")) {
        SyntheticSpeaker sp;
        s.at("track_id").get_to(sp.track_id);
        s.at("pitch_hz").get_to(sp.pitch_hz);
        s.at("face_px").get_to(sp.face_px);
        s.at("track_start").get_to(sp.track_start);
        s.at("track_end").get_to(sp.track_end);
        s.at("texture_seed").get_to(sp.texture_seed);
        sp.distractors = utterances_from_json(s.at("distractors"));
        c.speakers.push_back(sp);
      }
      out.push_back(std::move(c));
    }
    return {cfg, out};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace asc
