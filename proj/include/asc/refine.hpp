#ifndef ASC_REFINE_HPP
#define ASC_REFINE_HPP

#include <map>
#include <string>

#include "asc/checkpoint.hpp"
#include "asc/ops.hpp"

namespace asc {

/// Which refinement stages sit between the ensemble and the classifier.
enum class AscArchitecture {
  full,            // pairwise -> LSTM -> head at the reference position
  context_linear,  // one linear layer on the flattened ensemble
  pairwise_only,   // pairwise -> linear layer on the flattened result
  temporal_only,   // LSTM -> head, no pairwise stage
  mlp_head,        // pairwise -> two-layer perceptron on the flattened result
};

const char* architecture_name(AscArchitecture a);
AscArchitecture parse_architecture(const std::string& name);

enum class Pooling { reference, mean };

struct AscConfig {
  Index L = 11;
  Index S = 3;
  Index d = 128;
  Index hidden = 128;      // d'
  Index bottleneck = 0;    // 0 selects d / 2
  Index mlp_hidden = 128;
  AscArchitecture architecture = AscArchitecture::full;
  Pooling pooling = Pooling::reference;

  Index steps() const { return L * S; }
  Index bottleneck_dim() const { return bottleneck > 0 ? bottleneck : std::max<Index>(1, d / 2); }
  /// Sequence index of (time t, slot 0) under time-major flattening.
  Index reference_step() const { return (L / 2) * S; }
  bool uses_pairwise() const;
  bool uses_lstm() const;
  void validate() const;
};

struct AscParams {
  Tensor w_alpha, w_beta, w_gamma;  // [d, d/2]
  Tensor w_delta;                   // [d/2, d]
  Tensor lstm_wx, lstm_wh, lstm_b;  // [d, 4d'], [d', 4d'], [4d']
  Tensor head_w, head_b;            // [d', 2], [2]  or flattened [LSd, 2] / [LSd, m]
  Tensor mlp_w2, mlp_b2;            // [m, 2], [2]   (mlp_head only)
};

struct AttentionState {
  Tensor B;        // [LS, LS] or batched [N, LS, LS]
  Tensor refined;  // same shape as the input ensemble
};

/// Eq. 1-2 style refinement on one ensemble [L,S,d] or a batch [N,L,S,d].
AttentionState pairwise_refine(const Tensor& C, const AscParams& p);
/// Runs the LSTM over the time-major flattened ensemble; returns all LS hidden
/// states, [LS, d'] (or [N, LS, d'] for a batch).
Tensor temporal_refine(const Tensor& refined, const AscParams& p);
/// Speaking probability from the hidden state at `position` of a [LS, d'] sequence.
Scalar score(const Tensor& sequence, const AscParams& p, Index position);

class AscModel {
 public:
  AscModel(const AscConfig& cfg, Rng& rng);

  struct Output {
    Tensor logits;     // [N, 2]
    Tensor attention;  // [N, LS, LS] when the pairwise stage is used
    Tensor refined;    // [N, L, S, d]
  };

  /// C is [N, L, S, d]. With `full_sequence` false the LSTM stops at the
  /// reference step when pooling is by reference (same scores, less work).
  Output forward(const Tensor& C, bool full_sequence = false) const;
  /// Probability of the speaking class for each ensemble.
  Buffer predict(const Tensor& C) const;
  /// Single ensemble [L,S,d]: score and attention state.
  std::pair<Scalar, AttentionState> asc_forward(const Tensor& C) const;

  const AscConfig& config() const { return cfg_; }
  AscParams& params() { return p_; }
  const AscParams& params() const { return p_; }
  NamedTensors parameters() const;
  NamedTensors state_dict() const;
  void load_state_dict(const std::map<std::string, Tensor>& state);

 private:
  AscConfig cfg_;
  AscParams p_;
};

/// Single-term cross-entropy on the reference labels.
Tensor asc_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace asc

#endif  // ASC_REFINE_HPP
