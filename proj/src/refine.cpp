#include "asc/refine.hpp"

#include <cmath>

namespace asc {

namespace {

struct ArchName {
  AscArchitecture arch;
  const char* name;
};

constexpr ArchName kArchNames[] = {{AscArchitecture::full, "full"},
                                   {AscArchitecture::context_linear, "context_linear"},
                                   {AscArchitecture::pairwise_only, "pairwise_only"},
                                   {AscArchitecture::temporal_only, "temporal_only"},
                                   {AscArchitecture::mlp_head, "mlp_head"}};

Tensor dense(Index in, Index out, Rng& rng, double gain = 1.0) {
  return Tensor::randn({in, out}, rng, gain * std::sqrt(1.0 / static_cast<double>(in)), true);
}

// [N,L,S,d] or [L,S,d] -> (input was batched, [N, LS, d])
std::pair<bool, Tensor> as_batch(const Tensor& C) {
  if (C.rank() == 3) return {false, reshape(C, {1, C.dim(0) * C.dim(1), C.dim(2)})};
  if (C.rank() == 4) return {true, reshape(C, {C.dim(0), C.dim(1) * C.dim(2), C.dim(3)})};
  throw ShapeError("ensemble must be [L,S,d] or [N,L,S,d], got " + shape_string(C.shape()));
}

// Applies a [in, out] projection to the last axis of x [N, M, in].
Tensor project(const Tensor& x, const Tensor& w) {
  const Index n = x.dim(0), m = x.dim(1);
  return reshape(matmul(reshape(x, {n * m, x.dim(2)}), w), {n, m, w.dim(1)});
}

}  // namespace

const char* architecture_name(AscArchitecture a) {
  for (const auto& e : kArchNames) {
    if (e.arch == a) return e.name;
  }
  return "?";
}

AscArchitecture parse_architecture(const std::string& name) {
  for (const auto& e : kArchNames) {
    if (name == e.name) return e.arch;
  }
  throw ShapeError("unknown architecture '" + name + "'");
}

bool AscConfig::uses_pairwise() const {
  return architecture == AscArchitecture::full || architecture == AscArchitecture::pairwise_only ||
         architecture == AscArchitecture::mlp_head;
}

bool AscConfig::uses_lstm() const {
  return architecture == AscArchitecture::full || architecture == AscArchitecture::temporal_only;
}

void AscConfig::validate() const {
  if (L < 1 || S < 1 || d < 1 || hidden < 1 || mlp_hidden < 1 || bottleneck < 0) {
    throw ShapeError("asc config: sizes must be positive");
  }
}

AttentionState pairwise_refine(const Tensor& C, const AscParams& p) {
  auto [batched, x] = as_batch(C);
  if (x.dim(2) != p.w_alpha.dim(0)) {
    throw ShapeError("pairwise_refine: ensemble has " + std::to_string(x.dim(2)) + " channels, params expect " +
                     std::to_string(p.w_alpha.dim(0)));
  }
  Tensor q = project(x, p.w_alpha);
  Tensor k = project(x, p.w_beta);
  Tensor v = project(x, p.w_gamma);
  Tensor B = softmax_rows(batched_matmul(q, k, true));
  Tensor refined = add(project(batched_matmul(B, v), p.w_delta), x);
  if (!batched) B = reshape(B, {B.dim(1), B.dim(2)});
  return {B, reshape(refined, C.shape())};
}

Tensor temporal_refine(const Tensor& refined, const AscParams& p) {
  auto [batched, x] = as_batch(refined);
  Tensor h = lstm(x, p.lstm_wx, p.lstm_wh, p.lstm_b);
  return batched ? h : reshape(h, {h.dim(1), h.dim(2)});
}

Scalar score(const Tensor& sequence, const AscParams& p, Index position) {
  if (sequence.rank() != 2 || sequence.dim(0) < 1) throw ShapeError("score: expected a nonempty [LS, d'] sequence");
  if (position < 0 || position >= sequence.dim(0)) throw ShapeError("score: position out of range");
  NoGradGuard guard;
  Tensor logits = linear(slice(sequence, 0, position, position + 1), p.head_w, p.head_b);
  return softmax_rows(logits)[1];
}

AscModel::AscModel(const AscConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const Index d = cfg_.d, b = cfg_.bottleneck_dim(), h = cfg_.hidden, flat = cfg_.steps() * d;
  if (cfg_.uses_pairwise()) {
    p_.w_alpha = dense(d, b, rng);
    p_.w_beta = dense(d, b, rng);
    p_.w_gamma = dense(d, b, rng);
    p_.w_delta = dense(b, d, rng, 0.1);
  }
  if (cfg_.uses_lstm()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    p_.lstm_wx = Tensor::uniform({d, 4 * h}, rng, -bound, bound, true);
    p_.lstm_wh = Tensor::uniform({h, 4 * h}, rng, -bound, bound, true);
    Buffer bias(static_cast<std::size_t>(4 * h), 0.0);
    std::fill(bias.begin() + h, bias.begin() + 2 * h, 1.0);  // forget gate
    p_.lstm_b = Tensor({4 * h}, bias, true);
    p_.head_w = dense(h, 2, rng);
  } else if (cfg_.architecture == AscArchitecture::mlp_head) {
    p_.head_w = dense(flat, cfg_.mlp_hidden, rng, std::sqrt(2.0));
    p_.mlp_w2 = dense(cfg_.mlp_hidden, 2, rng);
    p_.mlp_b2 = Tensor::zeros({2}, true);
  } else {
    p_.head_w = dense(flat, 2, rng);
  }
  p_.head_b = Tensor::zeros({p_.head_w.dim(1)}, true);
}

AscModel::Output AscModel::forward(const Tensor& C, bool full_sequence) const {
  if (C.rank() != 4 || C.dim(1) != cfg_.L || C.dim(2) != cfg_.S || C.dim(3) != cfg_.d) {
    throw ShapeError("asc: ensemble batch " + shape_string(C.shape()) + " does not match L=" + std::to_string(cfg_.L) +
                     " S=" + std::to_string(cfg_.S) + " d=" + std::to_string(cfg_.d));
  }
  const Index n = C.dim(0);
  Output out;
  Tensor x = C;
  if (cfg_.uses_pairwise()) {
    AttentionState st = pairwise_refine(C, p_);
    out.attention = st.B;
    x = st.refined;
  }
  out.refined = x;

  if (cfg_.uses_lstm()) {
    Tensor seq = reshape(x, {n, cfg_.steps(), cfg_.d});
    const Index ref = cfg_.reference_step();
    if (cfg_.pooling == Pooling::reference && !full_sequence) seq = slice(seq, 1, 0, ref + 1);
    Tensor h = lstm(seq, p_.lstm_wx, p_.lstm_wh, p_.lstm_b);
    Tensor pooled;
    if (cfg_.pooling == Pooling::reference) {
      pooled = select(h, 1, ref);
    } else {
      Tensor avg = Tensor::full({n, 1, h.dim(1)}, 1.0 / static_cast<double>(h.dim(1)));
      pooled = reshape(batched_matmul(avg, h), {n, cfg_.hidden});
    }
    out.logits = linear(pooled, p_.head_w, p_.head_b);
  } else {
    Tensor flat = reshape(x, {n, cfg_.steps() * cfg_.d});
    if (cfg_.architecture == AscArchitecture::mlp_head) {
      out.logits = linear(relu(linear(flat, p_.head_w, p_.head_b)), p_.mlp_w2, p_.mlp_b2);
    } else {
      out.logits = linear(flat, p_.head_w, p_.head_b);
    }
  }
  return out;
}

Buffer AscModel::predict(const Tensor& C) const {
  NoGradGuard guard;
  Tensor p = softmax_rows(forward(C).logits);
  Buffer out;
  for (Index i = 0; i < p.dim(0); ++i) out.push_back(p.at({i, 1}));
  return out;
}

std::pair<Scalar, AttentionState> AscModel::asc_forward(const Tensor& C) const {
  NoGradGuard guard;
  Output o = forward(reshape(C, {1, C.dim(0), C.dim(1), C.dim(2)}), true);
  AttentionState st;
  if (o.attention.defined()) st.B = reshape(o.attention, {cfg_.steps(), cfg_.steps()});
  st.refined = reshape(o.refined, C.shape());
  return {softmax_rows(o.logits)[1], st};
}

NamedTensors AscModel::parameters() const {
  NamedTensors out;
  auto put = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.emplace_back(std::string("asc.") + name, t);
  };
  put("pairwise.w_alpha", p_.w_alpha);
  put("pairwise.w_beta", p_.w_beta);
  put("pairwise.w_gamma", p_.w_gamma);
  put("pairwise.w_delta", p_.w_delta);
  put("lstm.w_x", p_.lstm_wx);
  put("lstm.w_h", p_.lstm_wh);
  put("lstm.bias", p_.lstm_b);
  put("head.weight", p_.head_w);
  put("head.bias", p_.head_b);
  put("mlp.weight", p_.mlp_w2);
  put("mlp.bias", p_.mlp_b2);
  return out;
}

NamedTensors AscModel::state_dict() const {
  NamedTensors out;
  for (const auto& [name, t] : parameters()) out.emplace_back(name, t.detach());
  return out;
}

void AscModel::load_state_dict(const std::map<std::string, Tensor>& state) { assign_checkpoint(state, parameters()); }

Tensor asc_loss(const Tensor& logits, std::span<const int> labels) { return cross_entropy_with_logits(logits, labels); }

}  // namespace asc
