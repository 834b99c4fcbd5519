#include <gtest/gtest.h>

#include <sstream>

#include "asc/ablation.hpp"

using namespace asc;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.stage_widths = {2, 3};
  cfg.blocks_per_stage = 1;
  return cfg;
}

EmbeddingTable tiny_table(std::uint64_t seed, Index d) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  EmbeddingTable table;
  for (int v = 0; v < 2; ++v)
    for (int k = 0; k < 2; ++k) {
      TrackEmbeddings t;
      t.video_id = "v" + std::to_string(v);
      t.track_id = t.video_id + ":" + std::to_string(k);
      for (int i = 0; i <= 20; ++i) t.timestamps.push_back(0.2 * i);
      t.values = Matrix(21, d);
      for (Index i = 0; i < 21; ++i) {
        const int label = (i / 5 + k) % 2;
        t.labels.push_back(label);
        for (Index j = 0; j < d; ++j) t.values(i, j) = g(rng) + (j == 0 ? 2.0 * label : 0.0);
      }
      table.add(t);
    }
  return table;
}

AblationConfig tiny_config() {
  AblationConfig cfg;
  cfg.asc.ensemble.L = 3;
  cfg.asc.ensemble.S = 2;
  cfg.asc.ensemble.T = 0.8;
  cfg.asc.model.hidden = 4;
  cfg.asc.model.mlp_hidden = 4;
  cfg.asc.schedule = Schedule{1e-2, 0.1, 10};
  cfg.asc.epochs = 2;
  cfg.seeds = {0, 1};
  cfg.metric = MetricKind::pooled;
  cfg.L_grid = {1, 3};
  return cfg;
}

struct Fixture {
  Rng rng{3};
  ShortTermEncoder encoder{tiny_encoder(), rng};
  AblationData data;
  Fixture() {
    const Index d = tiny_encoder().embedding_dim();
    data.encoder = &encoder;
    data.train = tiny_table(1, d);
    data.val = tiny_table(2, d);
    data.test = tiny_table(3, d);
  }
};

}  // namespace

TEST(Suites, ArmNamesRoundTrip) {
  for (auto arm : suite_arms("all")) EXPECT_EQ(parse_arm(arm_name(arm)), arm);
  std::vector<std::string> names;
  for (auto arm : suite_arms("table2")) names.push_back(arm_name(arm));
  EXPECT_EQ(names, (std::vector<std::string>{"no_context", "context_linear", "pairwise_only", "temporal_only", "full",
                                             "mlp_head"}));
  EXPECT_THROW(suite_arms("table9"), DataError);
  EXPECT_THROW(parse_arm("transformer"), DataError);
}

TEST(AblationCsv, RoundTripIsExact) {
  std::vector<AblationRow> rows{{"table2", "full", 11, 3, 0, 2, 0.8123456789012345},
                                {"table3", "smoothing", 11, 3, 2.25, 0, 1.0 / 3},
                                {"table4", "full", 1, 2, 0, 1, 0.5}};
  std::stringstream ss;
  write_ablation_csv(ss, rows);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "suite,arm,L,S,window,seed,map");
  auto back = read_ablation_csv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].suite, rows[i].suite);
    EXPECT_EQ(back[i].arm, rows[i].arm);
    EXPECT_EQ(back[i].L, rows[i].L);
    EXPECT_EQ(back[i].S, rows[i].S);
    EXPECT_EQ(back[i].window, rows[i].window);
    EXPECT_EQ(back[i].seed, rows[i].seed);
    EXPECT_EQ(back[i].map, rows[i].map);
  }
}

TEST(MeanByArm, KeysAndAverages) {
  std::vector<AblationRow> rows{{"table2", "full", 11, 3, 0, 0, 0.8},   {"table2", "full", 11, 3, 0, 1, 0.6},
                                {"table3", "smoothing", 11, 3, 0.5, 0, 0.7}, {"table3", "smoothing", 11, 3, 2.25, 0, 0.4},
                                {"table4", "full", 3, 2, 0, 0, 0.9},    {"table4", "full", 3, 2, 0, 1, 0.7}};
  auto m = mean_by_arm(rows);
  EXPECT_DOUBLE_EQ(m.at("full"), 0.7);
  EXPECT_DOUBLE_EQ(m.at("smoothing@0.5"), 0.7);
  EXPECT_DOUBLE_EQ(m.at("smoothing@2.25"), 0.4);
  EXPECT_DOUBLE_EQ(m.at("L=3,S=2"), 0.8);
  EXPECT_EQ(m.size(), 4u);
}

TEST(RunAblation, RowsPerArmAndSeed) {
  Fixture f;
  AblationConfig cfg = tiny_config();
  cfg.short_window = 0.1;  // below the detection spacing: smoothing is the identity
  auto rows = run_ablation("t", {AblationArm::no_context, AblationArm::full, AblationArm::smoothing}, f.data, cfg);
  ASSERT_EQ(rows.size(), 8u);
  for (int s = 0; s < 2; ++s) {
    const auto* r = &rows[static_cast<std::size_t>(4 * s)];
    EXPECT_EQ(r[0].arm, "no_context");
    EXPECT_EQ(r[1].arm, "full");
    EXPECT_EQ(r[2].arm, "smoothing");
    EXPECT_EQ(r[2].window, 0.1);
    EXPECT_EQ(r[3].window, cfg.asc.ensemble.T);
    EXPECT_EQ(r[2].map, r[1].map);
    for (int i = 0; i < 4; ++i) {
      EXPECT_EQ(r[i].seed, static_cast<std::uint64_t>(s));
      EXPECT_GE(r[i].map, 0);
      EXPECT_LE(r[i].map, 1);
    }
  }
  EXPECT_EQ(rows[0].map, rows[4].map);  // the encoder does not depend on the seed

  auto again = run_ablation("t", {AblationArm::no_context, AblationArm::full, AblationArm::smoothing}, f.data, cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(again[i].map, rows[i].map);
}

TEST(RunAblation, Errors) {
  Fixture f;
  AblationConfig cfg = tiny_config();
  EXPECT_THROW(run_ablation("t", {}, f.data, cfg), DataError);
  f.data.encoder = nullptr;
  EXPECT_THROW(run_ablation("t", {AblationArm::no_context}, f.data, cfg), DataError);
  cfg.seeds.clear();
  EXPECT_THROW(run_ablation("t", {AblationArm::full}, f.data, cfg), DataError);
}

TEST(ContextSizeGrid, CoversEveryCellIncludingASingleClip) {
  Fixture f;
  AblationConfig cfg = tiny_config();
  cfg.seeds = {0};
  auto rows = run_context_size_grid(f.data, cfg);
  ASSERT_EQ(rows.size(), 4u);
  std::vector<std::pair<Index, Index>> cells;
  for (const auto& r : rows) {
    EXPECT_EQ(r.suite, "table4");
    EXPECT_EQ(r.arm, "full");
    cells.emplace_back(r.L, r.S);
  }
  EXPECT_EQ(cells, (std::vector<std::pair<Index, Index>>{{1, 1}, {3, 1}, {1, 2}, {3, 2}}));
  cfg.clip_spacing = 0;
  EXPECT_THROW(run_context_size_grid(f.data, cfg), ShapeError);
}
