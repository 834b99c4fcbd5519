#ifndef ASC_ABLATION_HPP
#define ASC_ABLATION_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "asc/train.hpp"

namespace asc {

enum class AblationArm {
  no_context,
  context_linear,
  pairwise_only,
  temporal_only,
  full,
  mlp_head,
  shuffle_time,
  out_of_context,
  smoothing,
};

const char* arm_name(AblationArm arm);
AblationArm parse_arm(const std::string& name);

/// Arms of a named suite: table2, table3, table5 or all. The context-size
/// grid (table4) is run by run_context_size_grid instead.
std::vector<AblationArm> suite_arms(const std::string& suite);

/// Cached embeddings shared by every arm. `encoder` scores the no_context arm.
struct AblationData {
  const ShortTermEncoder* encoder = nullptr;
  EmbeddingTable train, val, test;
};

struct AblationConfig {
  AscTrainConfig asc;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  MetricKind metric = MetricKind::per_video;
  double short_window = 0.5;
  /// 0 means the ensemble window T.
  double long_window = 0;
  std::vector<Index> L_grid{1, 3, 5, 7, 9, 11};
  std::vector<Index> S_grid{1, 2};
  /// Seconds between consecutive clips in the context-size grid.
  double clip_spacing = 0.225;
};

struct AblationRow {
  std::string suite;
  std::string arm;
  Index L = 0;
  Index S = 0;
  double window = 0;  // smoothing window, 0 when unsmoothed
  std::uint64_t seed = 0;
  double map = 0;
};

/// One row per arm and seed (two per seed for smoothing: short and long window).
std::vector<AblationRow> run_ablation(const std::string& suite, const std::vector<AblationArm>& arms,
                                      const AblationData& data, const AblationConfig& cfg,
                                      std::ostream* progress = nullptr);

/// The full model over L_grid x S_grid with clip spacing held fixed.
std::vector<AblationRow> run_context_size_grid(const AblationData& data, const AblationConfig& cfg,
                                               std::ostream* progress = nullptr);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(std::istream& is);

/// Mean mAP over seeds keyed by "arm", "arm@window" for smoothed rows or
/// "L=<L>,S=<S>" for grid rows.
std::map<std::string, double> mean_by_arm(const std::vector<AblationRow>& rows);

}  // namespace asc

#endif  // ASC_ABLATION_HPP
