#include "asc/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <unsupported/Eigen/FFT>

namespace asc {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_points_hz(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> hz(static_cast<std::size_t>(cfg.n_mels + 2));
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return hz;
}

void validate(const MelConfig& cfg) {
  if (cfg.n_mels < 1 || cfg.n_fft < 2 || cfg.hop_samples() < 1 || cfg.window_samples() < 2) {
    throw ShapeError("mel config: sizes must be positive");
  }
  if (cfg.window_samples() > cfg.n_fft) throw ShapeError("mel config: window longer than n_fft");
  if (cfg.sample_rate_hz < 2 * cfg.f_max) throw ShapeError("mel config: sample rate below 2 * f_max");
  if (cfg.f_min < 0 || cfg.f_min >= cfg.f_max) throw ShapeError("mel config: invalid frequency range");
}

}  // namespace

Index MelConfig::window_samples() const { return static_cast<Index>(std::lround(window_seconds * sample_rate_hz)); }
Index MelConfig::hop_samples() const { return static_cast<Index>(std::lround(hop_seconds * sample_rate_hz)); }

Matrix mel_filterbank(const MelConfig& cfg) {
  validate(cfg);
  const Index bins = cfg.n_fft / 2 + 1;
  const auto pts = mel_points_hz(cfg);
  Matrix fb = Matrix::Zero(cfg.n_mels, bins);
  for (Index q = 0; q < cfg.n_mels; ++q) {
    const double lo = pts[static_cast<std::size_t>(q)], c = pts[static_cast<std::size_t>(q + 1)],
                 hi = pts[static_cast<std::size_t>(q + 2)];
    for (Index b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate_hz / static_cast<double>(cfg.n_fft);
      const double w = std::min((f - lo) / (c - lo), (hi - f) / (hi - c));
      fb(q, b) = std::max(0.0, w);
    }
  }
  return fb;
}

std::vector<double> mel_band_centers(const MelConfig& cfg) {
  validate(cfg);
  auto pts = mel_points_hz(cfg);
  return {pts.begin() + 1, pts.end() - 1};
}

Index mel_frame_count(Index samples, const MelConfig& cfg) { return 1 + samples / cfg.hop_samples(); }

MelSpectrogram mel_spectrogram(const AudioSnippet& audio, const MelConfig& cfg) {
  validate(cfg);
  if (audio.samples.empty()) throw DataError("mel_spectrogram: empty waveform");
  if (std::abs(audio.sample_rate_hz - cfg.sample_rate_hz) > 1e-9) {
    throw DataError("mel_spectrogram: snippet sample rate differs from the filterbank's");
  }
  const Index n = static_cast<Index>(audio.samples.size());
  const Index win = cfg.window_samples(), hop = cfg.hop_samples(), bins = cfg.n_fft / 2 + 1;
  const Index frames = mel_frame_count(n, cfg);
  const Matrix fb = mel_filterbank(cfg);

  std::vector<double> window(static_cast<std::size_t>(win));
  for (Index i = 0; i < win; ++i) {
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  }

  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(cfg.n_fft));
  std::vector<std::complex<double>> spec;
  Matrix power(bins, frames);
  for (Index p = 0; p < frames; ++p) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const Index start = p * hop - win / 2;  // frame centered on sample p*hop
    for (Index i = 0; i < win; ++i) {
      const Index s = start + i;
      if (s >= 0 && s < n) buf[static_cast<std::size_t>(i)] = audio.samples[static_cast<std::size_t>(s)] * window[static_cast<std::size_t>(i)];
    }
    fft.fwd(spec, buf);
    for (Index b = 0; b < bins; ++b) power(b, p) = std::norm(spec[static_cast<std::size_t>(b)]);
  }
  MelSpectrogram out;
  out.values = ((fb * power).array() + cfg.log_floor).log().matrix();
  return out;
}

std::vector<Index> crop_stack_indices(std::span<const double> timestamps, double t, Index k, double tau) {
  if (timestamps.empty()) throw DataError("crop stack: empty track");
  if (k < 1 || tau <= 0) throw ShapeError("crop stack: k must be >= 1 and tau > 0");
  const double lo = t - tau / 2, hi = t + tau / 2;
  const bool intersects = std::any_of(timestamps.begin(), timestamps.end(), [&](double ts) { return ts >= lo && ts <= hi; });
  if (!intersects) throw DataError("crop stack: no track frame inside the clip interval");
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const double s = lo + (static_cast<double>(i) + 0.5) * tau / static_cast<double>(k);
    auto it = std::lower_bound(timestamps.begin(), timestamps.end(), s);
    Index j = it - timestamps.begin();
    if (j == static_cast<Index>(timestamps.size())) {
      j -= 1;
    } else if (j > 0 && s - timestamps[static_cast<std::size_t>(j - 1)] <= timestamps[static_cast<std::size_t>(j)] - s) {
      j -= 1;
    }
    idx.push_back(j);
  }
  return idx;
}

CropStack build_crop_stack(std::span<const TimedFrame> track_frames, double t, Index k, double tau, Index height,
                           Index width, std::string track_id) {
  std::vector<double> ts;
  ts.reserve(track_frames.size());
  for (const auto& f : track_frames) ts.push_back(f.timestamp);
  const auto idx = crop_stack_indices(ts, t, k, tau);
  CropStack stack;
  stack.source_track_id = std::move(track_id);
  stack.center_timestamp = t;
  for (Index j : idx) {
    const auto& f = track_frames[static_cast<std::size_t>(j)];
    stack.frames.push_back(f.image.height == height && f.image.width == width ? f.image
                                                                              : resize_bilinear(f.image, height, width));
    stack.source_timestamps.push_back(f.timestamp);
  }
  return stack;
}

Image resize_bilinear(const Image& image, Index height, Index width) {
  if (height < 1 || width < 1 || image.height < 1 || image.width < 1) throw ShapeError("resize: empty image");
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (Index c = 0; c < 3; ++c) {
        out.at(c, y, x) = (1 - wy) * ((1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1)) +
                          wy * ((1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1));
      }
    }
  }
  return out;
}

Image crop_image(const Image& image, Index y0, Index x0, Index height, Index width) {
  if (y0 < 0 || x0 < 0 || y0 + height > image.height || x0 + width > image.width) throw ShapeError("crop outside image");
  Image out(height, width);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
  return out;
}

Augmentation draw_augmentation(Rng& rng) {
  Augmentation aug;
  aug.flip = std::bernoulli_distribution(0.5)(rng);
  aug.corner = static_cast<CropCorner>(std::uniform_int_distribution<int>(0, 4)(rng));
  return aug;
}

CropStack flip_horizontal(const CropStack& stack) {
  CropStack out = stack;
  for (auto& f : out.frames) {
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < f.height; ++y)
        for (Index x = 0; x < f.width / 2; ++x) std::swap(f.at(c, y, x), f.at(c, y, f.width - 1 - x));
  }
  return out;
}

CropStack apply_augmentation(const CropStack& stack, const Augmentation& aug, double crop_ratio) {
  CropStack out = stack;
  for (auto& f : out.frames) {
    const Index ch = std::max<Index>(1, static_cast<Index>(std::lround(crop_ratio * static_cast<double>(f.height))));
    const Index cw = std::max<Index>(1, static_cast<Index>(std::lround(crop_ratio * static_cast<double>(f.width))));
    Index y0 = 0, x0 = 0;
    switch (aug.corner) {
      case CropCorner::top_left: break;
      case CropCorner::top_right: x0 = f.width - cw; break;
      case CropCorner::bottom_left: y0 = f.height - ch; break;
      case CropCorner::bottom_right: y0 = f.height - ch; x0 = f.width - cw; break;
      case CropCorner::center: y0 = (f.height - ch) / 2; x0 = (f.width - cw) / 2; break;
    }
    f = resize_bilinear(crop_image(f, y0, x0, ch, cw), f.height, f.width);
  }
  return aug.flip ? flip_horizontal(out) : out;
}

CropStack augment(const CropStack& stack, Rng& rng, double crop_ratio) {
  return apply_augmentation(stack, draw_augmentation(rng), crop_ratio);
}

Tensor visual_tensor(const CropStack& stack) {
  if (stack.frames.empty()) throw ShapeError("visual_tensor: empty stack");
  const Index h = stack.frames[0].height, w = stack.frames[0].width;
  Buffer v;
  v.reserve(static_cast<std::size_t>(3 * stack.k() * h * w));
  for (const auto& f : stack.frames) {
    if (f.height != h || f.width != w) throw ShapeError("visual_tensor: frames differ in size");
    v.insert(v.end(), f.pixels.begin(), f.pixels.end());
  }
  return Tensor({3 * stack.k(), h, w}, std::move(v));
}

Tensor audio_tensor(const MelSpectrogram& mel) {
  Buffer v(mel.values.data(), mel.values.data() + mel.values.size());
  return Tensor({1, mel.bands(), mel.frames()}, std::move(v));
}

}  // namespace asc
