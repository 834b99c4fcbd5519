#ifndef ASC_ENCODER_HPP
#define ASC_ENCODER_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asc/checkpoint.hpp"
#include "asc/ops.hpp"
#include "asc/signal.hpp"

namespace asc {

enum class Mode { train, eval };

struct EncoderConfig {
  Index frame_height = 32;
  Index frame_width = 32;
  Index frames_per_clip = 11;  // k
  Index mel_bands = 40;        // Q
  Index mel_frames = 45;       // P, 1 + 0.44 s / 10 ms hop
  std::vector<Index> stage_widths{8, 16, 32, 64};
  Index blocks_per_stage = 2;
  Index stem_kernel = 3;
  Index stem_stride = 2;
  bool stem_pool = true;
  /// Scale each replica of the tiled visual stem by 1/k.
  bool rescale_visual_stem = true;

  Index visual_dim() const { return stage_widths.back(); }
  Index audio_dim() const { return stage_widths.back(); }
  Index embedding_dim() const { return visual_dim() + audio_dim(); }
  void validate() const;
};

/// Batched encoder output; row i belongs to clip i.
struct SteOutput {
  Tensor u;    // [N, d_v + d_a]
  Tensor u_v;  // [N, d_v]
  Tensor u_a;  // [N, d_a]
  Tensor logits_av, logits_v, logits_a;  // [N, 2]
};

/// Tiles a 3-channel first-layer kernel across k stacked frames.
Tensor build_visual_stem(const Tensor& base_weights, Index k, bool rescale = true);
/// Collapses a 3-channel first-layer kernel to one channel by averaging.
Tensor build_audio_stem(const Tensor& base_weights);

/// L = L_av + L_a + L_v, each a two-class cross-entropy averaged over the batch.
Tensor ste_loss(const SteOutput& out, std::span<const int> labels);

/// Two-stream residual encoder. Each stream: stem conv/BN/ReLU (+ max pool),
/// stages of basic blocks, global average pooling.
class ShortTermEncoder {
 public:
  ShortTermEncoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  /// visual [N, 3k, H, W], audio [N, 1, Q, P].
  SteOutput forward(const Tensor& visual, const Tensor& audio, Mode mode);
  /// Single clip: visual [3k, H, W].
  SteOutput encode_clip(const Tensor& visual, const MelSpectrogram& audio, Mode mode);

  /// Softmax probability of the speaking class from the fused head.
  static Buffer speaking_probability(const Tensor& logits);

  NamedTensors parameters() const;
  NamedTensors visual_parameters() const;
  NamedTensors audio_parameters() const;
  /// Parameters plus batch-norm running statistics, as copies.
  NamedTensors state_dict() const;
  void load_state_dict(const std::map<std::string, Tensor>& state);

  /// Applies the fused head to precomputed embeddings [N, d].
  Tensor fused_logits(const Tensor& embeddings) const;

 private:
  struct ConvBn {
    Tensor weight, gamma, beta;
    BatchNormState bn;
    Index stride = 1, padding = 0;
  };
  struct Block {
    ConvBn conv1, conv2;
    std::optional<ConvBn> shortcut;
  };
  struct Stream {
    ConvBn stem;
    std::vector<Block> blocks;
  };
  struct Head {
    Tensor weight, bias;
  };

  Stream make_stream(bool visual, Rng& rng);
  Tensor run_stream(Stream& s, const Tensor& x, bool training);
  static Tensor run_conv_bn(ConvBn& c, const Tensor& x, bool training);
  std::vector<std::pair<std::string, const ConvBn*>> conv_layers(bool visual, bool audio) const;

  EncoderConfig cfg_;
  Stream visual_, audio_;
  Head head_av_, head_v_, head_a_;
};

}  // namespace asc

#endif  // ASC_ENCODER_HPP
