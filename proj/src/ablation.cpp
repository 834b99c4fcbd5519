#include "asc/ablation.hpp"

#include <istream>
#include <ostream>
#include <sstream>

namespace asc {

namespace {

struct ArmName {
  AblationArm arm;
  const char* name;
};

constexpr ArmName kArms[] = {{AblationArm::no_context, "no_context"},
                             {AblationArm::context_linear, "context_linear"},
                             {AblationArm::pairwise_only, "pairwise_only"},
                             {AblationArm::temporal_only, "temporal_only"},
                             {AblationArm::full, "full"},
                             {AblationArm::mlp_head, "mlp_head"},
                             {AblationArm::shuffle_time, "shuffle_time"},
                             {AblationArm::out_of_context, "out_of_context"},
                             {AblationArm::smoothing, "smoothing"}};

std::vector<ScoredDetection> train_and_score(const AblationData& data, AscTrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  Rng rng(seed);
  AscModel model(AscConfig{}, rng);
  TrainResult r = train_asc(model, data.train, data.val, cfg);
  model.load_state_dict({r.best_state.begin(), r.best_state.end()});
  return score_asc(model, data.test, cfg.ensemble, cfg.distortion, seed + 1000);
}

}  // namespace

const char* arm_name(AblationArm arm) {
  for (const auto& a : kArms) {
    if (a.arm == arm) return a.name;
  }
  return "?";
}

AblationArm parse_arm(const std::string& name) {
  for (const auto& a : kArms) {
    if (name == a.name) return a.arm;
  }
  throw DataError("unknown ablation arm '" + name + "'");
}

std::vector<AblationArm> suite_arms(const std::string& suite) {
  using A = AblationArm;
  if (suite == "table2") return {A::no_context, A::context_linear, A::pairwise_only, A::temporal_only, A::full, A::mlp_head};
  if (suite == "table3") return {A::full, A::smoothing};
  if (suite == "table5") return {A::context_linear, A::full, A::shuffle_time, A::out_of_context};
  if (suite == "all") {
    return {A::no_context, A::context_linear, A::pairwise_only, A::temporal_only, A::full,
            A::mlp_head,   A::shuffle_time,   A::out_of_context, A::smoothing};
  }
  throw DataError("unknown ablation suite '" + suite + "' (table2, table3, table4, table5 or all)");
}

std::vector<AblationRow> run_ablation(const std::string& suite, const std::vector<AblationArm>& arms,
                                      const AblationData& data, const AblationConfig& cfg, std::ostream* progress) {
  if (arms.empty()) throw DataError("run_ablation: no arms");
  if (cfg.seeds.empty()) throw DataError("run_ablation: no seeds");
  const Index L = cfg.asc.ensemble.L, S = cfg.asc.ensemble.S;
  std::vector<AblationRow> rows;
  auto emit = [&](AblationArm arm, double window, std::uint64_t seed, const std::vector<ScoredDetection>& dets) {
    rows.push_back({suite, arm_name(arm), L, S, window, seed, mean_ap(dets, cfg.metric)});
    if (progress) {
      *progress << suite << ' ' << rows.back().arm << (window > 0 ? "@" + std::to_string(window) : "") << " seed "
                << seed << ": " << rows.back().map << std::endl;
    }
  };

  for (std::uint64_t seed : cfg.seeds) {
    std::vector<ScoredDetection> full_scores;
    auto full = [&]() -> const std::vector<ScoredDetection>& {
      if (full_scores.empty()) {
        AscTrainConfig c = cfg.asc;
        c.model.architecture = AscArchitecture::full;
        c.distortion = Distortion::none;
        full_scores = train_and_score(data, c, seed);
      }
      return full_scores;
    };
    for (AblationArm arm : arms) {
      AscTrainConfig c = cfg.asc;
      c.distortion = Distortion::none;
      switch (arm) {
        case AblationArm::no_context:
          if (!data.encoder) throw DataError("run_ablation: no_context needs the encoder");
          emit(arm, 0, seed, score_ste(*data.encoder, data.test));
          break;
        case AblationArm::full:
          emit(arm, 0, seed, full());
          break;
        case AblationArm::context_linear:
        case AblationArm::pairwise_only:
        case AblationArm::temporal_only:
        case AblationArm::mlp_head:
          c.model.architecture = parse_architecture(arm_name(arm));
          emit(arm, 0, seed, train_and_score(data, c, seed));
          break;
        case AblationArm::shuffle_time:
        case AblationArm::out_of_context:
          c.model.architecture = AscArchitecture::full;
          c.distortion = arm == AblationArm::shuffle_time ? Distortion::shuffle_time : Distortion::out_of_context;
          emit(arm, 0, seed, train_and_score(data, c, seed));
          break;
        case AblationArm::smoothing: {
          const double long_window = cfg.long_window > 0 ? cfg.long_window : cfg.asc.ensemble.T;
          for (double w : {cfg.short_window, long_window}) emit(arm, w, seed, smooth_scores(full(), w));
          break;
        }
      }
    }
  }
  return rows;
}

std::vector<AblationRow> run_context_size_grid(const AblationData& data, const AblationConfig& cfg,
                                               std::ostream* progress) {
  if (!(cfg.clip_spacing > 0)) throw ShapeError("context size grid: clip spacing must be positive");
  std::vector<AblationRow> rows;
  for (Index S : cfg.S_grid) {
    for (Index L : cfg.L_grid) {
      AscTrainConfig c = cfg.asc;
      c.model.architecture = AscArchitecture::full;
      c.distortion = Distortion::none;
      c.ensemble.L = L;
      c.ensemble.S = S;
      // A single clip sits at t whatever the window, so L=1 keeps the configured T.
      if (L > 1) c.ensemble.T = static_cast<double>(L - 1) * cfg.clip_spacing;
      for (std::uint64_t seed : cfg.seeds) {
        rows.push_back({"table4", "full", L, S, 0, seed, mean_ap(train_and_score(data, c, seed), cfg.metric)});
        if (progress) *progress << "table4 L=" << L << " S=" << S << " seed " << seed << ": " << rows.back().map << std::endl;
      }
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  const auto old = os.precision(17);
  os << "suite,arm,L,S,window,seed,map\n";
  for (const auto& r : rows) {
    os << r.suite << ',' << r.arm << ',' << r.L << ',' << r.S << ',' << r.window << ',' << r.seed << ',' << r.map << '\n';
  }
  os.precision(old);
}

std::vector<AblationRow> read_ablation_csv(std::istream& is) {
  std::vector<AblationRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("suite", 0) == 0)) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 7) throw DataError("ablation line " + std::to_string(lineno) + ": expected 7 columns");
    try {
      rows.push_back({f[0], f[1], std::stol(f[2]), std::stol(f[3]), std::stod(f[4]), std::stoull(f[5]), std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw DataError("ablation line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

std::map<std::string, double> mean_by_arm(const std::vector<AblationRow>& rows) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    std::string key;
    if (r.suite == "table4") {
      key = "L=" + std::to_string(r.L) + ",S=" + std::to_string(r.S);
    } else {
      std::ostringstream k;
      k << r.arm;
      if (r.window > 0) k << '@' << r.window;
      key = k.str();
    }
    acc[key].first += r.map;
    acc[key].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

}  // namespace asc
