#include "asc/encoder.hpp"

#include <cmath>

namespace asc {

namespace {

Tensor he_conv(Index out, Index in, Index kernel, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  return Tensor::randn({out, in, kernel, kernel}, rng, stddev, true);
}

Tensor bn_tensor(const Buffer& v) { return Tensor({static_cast<Index>(v.size())}, v); }

}  // namespace

void EncoderConfig::validate() const {
  if (frame_height < 1 || frame_width < 1 || frames_per_clip < 1 || mel_bands < 1 || mel_frames < 1) {
    throw ShapeError("encoder config: input dimensions must be positive");
  }
  if (stage_widths.empty() || blocks_per_stage < 1 || stem_kernel < 1 || stem_stride < 1) {
    throw ShapeError("encoder config: backbone needs at least one stage and one block");
  }
  for (Index w : stage_widths) {
    if (w < 1) throw ShapeError("encoder config: stage widths must be positive");
  }
}

Tensor build_visual_stem(const Tensor& base_weights, Index k, bool rescale) {
  if (base_weights.rank() != 4 || base_weights.dim(1) != 3) throw ShapeError("visual stem: base must be [C,3,kh,kw]");
  if (k < 1) throw ShapeError("visual stem: k must be >= 1");
  const Index c = base_weights.dim(0), kh = base_weights.dim(2), kw = base_weights.dim(3);
  const Index plane = 3 * kh * kw;
  const Scalar factor = rescale ? Scalar(1) / static_cast<Scalar>(k) : Scalar(1);
  Buffer out(static_cast<std::size_t>(c * k * plane));
  const auto& base = base_weights.values();
  for (Index o = 0; o < c; ++o)
    for (Index r = 0; r < k; ++r)
      for (Index i = 0; i < plane; ++i) {
        out[static_cast<std::size_t>((o * k + r) * plane + i)] = base[static_cast<std::size_t>(o * plane + i)] * factor;
      }
  return Tensor({c, 3 * k, kh, kw}, std::move(out));
}

Tensor build_audio_stem(const Tensor& base_weights) {
  if (base_weights.rank() != 4 || base_weights.dim(1) != 3) throw ShapeError("audio stem: base must be [C,3,kh,kw]");
  const Index c = base_weights.dim(0), area = base_weights.dim(2) * base_weights.dim(3);
  Buffer out(static_cast<std::size_t>(c * area));
  const auto& base = base_weights.values();
  for (Index o = 0; o < c; ++o)
    for (Index i = 0; i < area; ++i) {
      Scalar s = 0;
      for (Index ch = 0; ch < 3; ++ch) s += base[static_cast<std::size_t>((o * 3 + ch) * area + i)];
      out[static_cast<std::size_t>(o * area + i)] = s / 3;
    }
  return Tensor({c, 1, base_weights.dim(2), base_weights.dim(3)}, std::move(out));
}

Tensor ste_loss(const SteOutput& out, std::span<const int> labels) {
  for (int l : labels) {
    if (l != 0 && l != 1) throw ShapeError("ste_loss: labels must be 0 or 1");
  }
  return add(add(cross_entropy_with_logits(out.logits_av, labels), cross_entropy_with_logits(out.logits_a, labels)),
             cross_entropy_with_logits(out.logits_v, labels));
}

ShortTermEncoder::ShortTermEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  visual_ = make_stream(true, rng);
  audio_ = make_stream(false, rng);
  auto head = [&](Index in) {
    return Head{Tensor::randn({in, 2}, rng, std::sqrt(1.0 / static_cast<double>(in)), true), Tensor::zeros({2}, true)};
  };
  head_av_ = head(cfg_.embedding_dim());
  head_v_ = head(cfg_.visual_dim());
  head_a_ = head(cfg_.audio_dim());
}

ShortTermEncoder::Stream ShortTermEncoder::make_stream(bool visual, Rng& rng) {
  auto conv_bn = [&](Index out, Index in, Index kernel, Index stride) {
    ConvBn c;
    c.weight = he_conv(out, in, kernel, rng);
    c.gamma = Tensor::ones({out}, true);
    c.beta = Tensor::zeros({out}, true);
    c.bn = BatchNormState(out);
    c.stride = stride;
    c.padding = kernel / 2;
    return c;
  };
  Stream s;
  const Index w0 = cfg_.stage_widths.front();
  // Both stems start from an ordinary 3-channel kernel and are re-purposed.
  Tensor base = he_conv(w0, 3, cfg_.stem_kernel, rng);
  s.stem = conv_bn(w0, 3, cfg_.stem_kernel, cfg_.stem_stride);
  s.stem.weight = visual ? build_visual_stem(base, cfg_.frames_per_clip, cfg_.rescale_visual_stem)
                         : build_audio_stem(base);
  s.stem.weight.set_requires_grad(true);

  Index in = w0;
  for (std::size_t stage = 0; stage < cfg_.stage_widths.size(); ++stage) {
    const Index width = cfg_.stage_widths[stage];
    for (Index b = 0; b < cfg_.blocks_per_stage; ++b) {
      const Index stride = (stage > 0 && b == 0) ? 2 : 1;
      Block block;
      block.conv1 = conv_bn(width, in, 3, stride);
      block.conv2 = conv_bn(width, width, 3, 1);
      if (stride != 1 || in != width) block.shortcut = conv_bn(width, in, 1, stride);
      s.blocks.push_back(std::move(block));
      in = width;
    }
  }
  return s;
}

Tensor ShortTermEncoder::run_conv_bn(ConvBn& c, const Tensor& x, bool training) {
  return batch_norm(conv2d(x, c.weight, c.stride, c.padding), c.gamma, c.beta, c.bn, training);
}

Tensor ShortTermEncoder::run_stream(Stream& s, const Tensor& x, bool training) {
  Tensor h = relu(run_conv_bn(s.stem, x, training));
  if (cfg_.stem_pool && h.dim(2) >= 2 && h.dim(3) >= 2) h = max_pool2d(h, 3, 2, 1);
  for (auto& b : s.blocks) {
    Tensor y = relu(run_conv_bn(b.conv1, h, training));
    y = run_conv_bn(b.conv2, y, training);
    Tensor skip = b.shortcut ? run_conv_bn(*b.shortcut, h, training) : h;
    h = relu(add(y, skip));
  }
  return global_average_pool(h);
}

SteOutput ShortTermEncoder::forward(const Tensor& visual, const Tensor& audio, Mode mode) {
  const Shape vexp{visual.rank() == 4 ? visual.dim(0) : 0, 3 * cfg_.frames_per_clip, cfg_.frame_height, cfg_.frame_width};
  if (visual.rank() != 4 || visual.shape() != vexp) {
    throw ShapeError("encoder: visual input " + shape_string(visual.shape()) + ", expected " + shape_string(vexp));
  }
  const Shape aexp{visual.dim(0), 1, cfg_.mel_bands, cfg_.mel_frames};
  if (audio.shape() != aexp) {
    throw ShapeError("encoder: audio input " + shape_string(audio.shape()) + ", expected " + shape_string(aexp));
  }
  const bool training = mode == Mode::train;
  SteOutput out;
  out.u_v = run_stream(visual_, visual, training);
  out.u_a = run_stream(audio_, audio, training);
  std::vector<Tensor> parts{out.u_v, out.u_a};
  out.u = concat(parts);
  out.logits_av = linear(out.u, head_av_.weight, head_av_.bias);
  out.logits_v = linear(out.u_v, head_v_.weight, head_v_.bias);
  out.logits_a = linear(out.u_a, head_a_.weight, head_a_.bias);
  return out;
}

SteOutput ShortTermEncoder::encode_clip(const Tensor& visual, const MelSpectrogram& audio, Mode mode) {
  if (visual.rank() != 3) throw ShapeError("encode_clip: visual must be [3k,H,W]");
  Tensor v = reshape(visual, {1, visual.dim(0), visual.dim(1), visual.dim(2)});
  Tensor a = reshape(audio_tensor(audio), {1, 1, audio.bands(), audio.frames()});
  return forward(v, a, mode);
}

Buffer ShortTermEncoder::speaking_probability(const Tensor& logits) {
  NoGradGuard guard;
  Tensor p = softmax_rows(logits);
  Buffer out;
  for (Index i = 0; i < p.dim(0); ++i) out.push_back(p.at({i, 1}));
  return out;
}

Tensor ShortTermEncoder::fused_logits(const Tensor& embeddings) const {
  return linear(embeddings, head_av_.weight, head_av_.bias);
}

std::vector<std::pair<std::string, const ShortTermEncoder::ConvBn*>> ShortTermEncoder::conv_layers(bool visual,
                                                                                                    bool audio) const {
  std::vector<std::pair<std::string, const ConvBn*>> out;
  auto add_stream = [&](const Stream& s, const std::string& prefix) {
    out.emplace_back(prefix + ".stem", &s.stem);
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      const std::string p = prefix + ".block" + std::to_string(i);
      out.emplace_back(p + ".conv1", &s.blocks[i].conv1);
      out.emplace_back(p + ".conv2", &s.blocks[i].conv2);
      if (s.blocks[i].shortcut) out.emplace_back(p + ".shortcut", &*s.blocks[i].shortcut);
    }
  };
  if (visual) add_stream(visual_, "ste.visual");
  if (audio) add_stream(audio_, "ste.audio");
  return out;
}

namespace {

void append_conv(NamedTensors& out, const std::string& name, const Tensor& w, const Tensor& g, const Tensor& b) {
  out.emplace_back(name + ".weight", w);
  out.emplace_back(name + ".bn.gamma", g);
  out.emplace_back(name + ".bn.beta", b);
}

}  // namespace

NamedTensors ShortTermEncoder::visual_parameters() const {
  NamedTensors out;
  for (const auto& [name, c] : conv_layers(true, false)) append_conv(out, name, c->weight, c->gamma, c->beta);
  return out;
}

NamedTensors ShortTermEncoder::audio_parameters() const {
  NamedTensors out;
  for (const auto& [name, c] : conv_layers(false, true)) append_conv(out, name, c->weight, c->gamma, c->beta);
  return out;
}

NamedTensors ShortTermEncoder::parameters() const {
  NamedTensors out = visual_parameters();
  for (auto& p : audio_parameters()) out.push_back(std::move(p));
  out.emplace_back("ste.heads.av.weight", head_av_.weight);
  out.emplace_back("ste.heads.av.bias", head_av_.bias);
  out.emplace_back("ste.heads.v.weight", head_v_.weight);
  out.emplace_back("ste.heads.v.bias", head_v_.bias);
  out.emplace_back("ste.heads.a.weight", head_a_.weight);
  out.emplace_back("ste.heads.a.bias", head_a_.bias);
  return out;
}

NamedTensors ShortTermEncoder::state_dict() const {
  NamedTensors out;
  for (const auto& [name, t] : parameters()) out.emplace_back(name, t.detach());
  for (const auto& [name, c] : conv_layers(true, true)) {
    out.emplace_back(name + ".bn.running_mean", bn_tensor(c->bn.running_mean));
    out.emplace_back(name + ".bn.running_var", bn_tensor(c->bn.running_var));
  }
  return out;
}

void ShortTermEncoder::load_state_dict(const std::map<std::string, Tensor>& state) {
  assign_checkpoint(state, parameters());
  for (const auto& [name, c] : conv_layers(true, true)) {
    auto& bn = const_cast<ConvBn*>(c)->bn;
    for (auto [suffix, target] : {std::pair{".bn.running_mean", &bn.running_mean}, {".bn.running_var", &bn.running_var}}) {
      auto it = state.find(name + suffix);
      if (it == state.end()) throw DataError("checkpoint is missing " + name + suffix);
      if (it->second.numel() != static_cast<Index>(target->size())) throw DataError("checkpoint shape mismatch for " + name + suffix);
      target->assign(it->second.data().begin(), it->second.data().end());
    }
  }
}

}  // namespace asc
