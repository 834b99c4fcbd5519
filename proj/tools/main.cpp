#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "run_config.hpp"

using namespace asc;
using asc::cli::RunConfig;
using asc::cli::UsageError;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Args {
  std::string config_path;
  std::string data_dir = "data";
  std::string run_dir = "run";
  std::string suite = "table2";
  std::string track;
  double time = -1;
  std::string prefix;
  std::map<std::string, std::string> flags;
};

constexpr const char* kSplitNames[] = {"train", "val", "test"};

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(1) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// defaults < run's saved config < --config file < flags.
RunConfig resolve(const Args& a, const fs::path& run_dir) {
  RunConfig cfg;
  if (!run_dir.empty() && fs::exists(run_dir / "config.json")) cfg.merge(read_json(run_dir / "config.json"));
  if (!a.config_path.empty()) cfg.merge_file(a.config_path);
  for (const auto& [k, v] : a.flags) cfg.set_from_string(k, v);
  cfg.validate();
  return cfg;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg, const Args& a) {
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg.values());
  write_json(dir / ("manifest_" + command + ".json"), {{"command", command},
                                                       {"version", version_string()},
                                                       {"seed", cfg.seed()},
                                                       {"data", a.data_dir},
                                                       {"config", cfg.values()}});
}

struct Dataset {
  SyntheticConfig cfg;
  std::vector<SyntheticConversation> conversations;
  std::vector<FaceTrack> tracks;
};

Dataset load_data(const fs::path& dir) {
  Dataset d;
  std::tie(d.cfg, d.conversations) = load_synthetic_manifest(dir / "manifest.json");
  d.tracks = parse_ava_csv(dir / "tracks.csv");
  return d;
}

/// Track splits are drawn once by train-ste and stored in the run.
std::vector<std::vector<FaceTrack>> load_splits(const fs::path& run, const std::vector<FaceTrack>& tracks) {
  json j = read_json(run / "splits.json");
  std::map<std::string, const FaceTrack*> by_id;
  for (const auto& t : tracks) by_id[t.track_id] = &t;
  std::vector<std::vector<FaceTrack>> parts;
  for (const char* name : kSplitNames) {
    parts.emplace_back();
    for (const auto& id : j.at(name)) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw DataError("split track " + id.get<std::string>() + " is not in the dataset");
      parts.back().push_back(*it->second);
    }
  }
  return parts;
}

ShortTermEncoder load_encoder(const fs::path& run, const RunConfig& cfg) {
  Rng rng(cfg.seed());
  ShortTermEncoder enc(cfg.encoder(), rng);
  enc.load_state_dict(load_checkpoint(run / "ste.ckpt"));
  return enc;
}

EmbeddingTable load_split_embeddings(const fs::path& run, const char* split) {
  return load_embedding_cache(run / ("embeddings_" + std::string(split) + ".bin"));
}

AscModel load_asc(const fs::path& run, const RunConfig& cfg, Index d) {
  AscTrainConfig a = cfg.asc();
  AscConfig mc = a.model;
  mc.L = a.ensemble.L;
  mc.S = a.ensemble.S;
  mc.d = d;
  Rng rng(cfg.seed());
  AscModel model(mc, rng);
  model.load_state_dict(load_checkpoint(run / "asc.ckpt"));
  return model;
}

int cmd_gen_data(const Args& a) {
  RunConfig cfg = resolve(a, {});
  const fs::path out = a.data_dir;
  fs::create_directories(out);
  const SyntheticConfig sc = cfg.data();
  Rng rng(cfg.seed());
  SyntheticDataset ds = generate_synthetic(sc, rng);
  save_synthetic_manifest(out / "manifest.json", sc, ds.conversations);
  std::ofstream csv(out / "tracks.csv");
  if (!csv) throw DataError("cannot write " + (out / "tracks.csv").string());
  write_ava_csv(csv, ds.tracks);
  write_manifest(out, "gen-data", cfg, a);
  std::cerr << "wrote " << ds.conversations.size() << " videos, " << ds.tracks.size() << " tracks to " << out << '\n';
  return 0;
}

int cmd_train_ste(const Args& a) {
  const fs::path run = a.run_dir;
  RunConfig cfg = resolve(a, run);
  write_manifest(run, "train-ste", cfg, a);
  Dataset d = load_data(a.data_dir);
  Rng split_rng(cfg.seed());
  auto parts = split_by_video(d.tracks, cfg.split_fractions(), split_rng);
  json splits;
  for (std::size_t i = 0; i < 3; ++i) {
    splits[kSplitNames[i]] = json::array();
    for (const auto& t : parts[i]) splits[kSplitNames[i]].push_back(t.track_id);
  }
  write_json(run / "splits.json", splits);

  SyntheticMedia media(d.conversations, d.cfg);
  SteTrainConfig sc = cfg.ste();
  Rng rng(cfg.seed());
  ShortTermEncoder enc(sc.encoder, rng);
  std::ofstream log(run / "ste_metrics.csv");
  write_metrics_header(log);
  TrainResult r = train_ste(enc, media, parts[0], parts[1], sc, &log);
  save_checkpoint(run / "ste.ckpt", r.best_state);
  std::cerr << "ste: best epoch " << r.best_epoch << " ap " << r.best_ap << '\n';
  return 0;
}

int cmd_embed(const Args& a) {
  const fs::path run = a.run_dir;
  RunConfig cfg = resolve(a, run);
  write_manifest(run, "embed", cfg, a);
  Dataset d = load_data(a.data_dir);
  auto parts = load_splits(run, d.tracks);
  SyntheticMedia media(d.conversations, d.cfg);
  ShortTermEncoder enc = load_encoder(run, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    EmbeddingTable t = embed(enc, media, parts[i], cfg.clips());
    save_embedding_cache(run / ("embeddings_" + std::string(kSplitNames[i]) + ".bin"), t);
    std::cerr << "embedded " << kSplitNames[i] << ": " << parts[i].size() << " tracks\n";
  }
  return 0;
}

int cmd_train_asc(const Args& a) {
  const fs::path run = a.run_dir;
  RunConfig cfg = resolve(a, run);
  write_manifest(run, "train-asc", cfg, a);
  EmbeddingTable train = load_split_embeddings(run, "train"), val = load_split_embeddings(run, "val");
  Rng rng(cfg.seed());
  AscModel model(AscConfig{}, rng);
  std::ofstream log(run / "asc_metrics.csv");
  write_metrics_header(log);
  TrainResult r = train_asc(model, train, val, cfg.asc(), &log);
  save_checkpoint(run / "asc.ckpt", r.best_state);
  std::cerr << "asc: best epoch " << r.best_epoch << " ap " << r.best_ap << '\n';
  return 0;
}

int cmd_eval(const Args& a) {
  const fs::path run = a.run_dir;
  RunConfig cfg = resolve(a, run);
  write_manifest(run, "eval", cfg, a);
  Dataset d = load_data(a.data_dir);
  auto parts = load_splits(run, d.tracks);
  EmbeddingTable test = load_split_embeddings(run, "test");
  AscModel model = load_asc(run, cfg, test.dim());
  AscTrainConfig ac = cfg.asc();
  auto dets = score_asc(model, test, ac.ensemble, ac.distortion, cfg.seed() + 1000);
  if (cfg.smooth_window() > 0) dets = smooth_scores(dets, cfg.smooth_window());
  annotate_detections(dets, parts[2], d.cfg.frame_width_px, ac.ensemble.cooccurrence_tolerance);
  std::ofstream csv(run / "detections.csv");
  write_detections_csv(csv, dets);

  ShortTermEncoder enc = load_encoder(run, cfg);
  auto ste = score_ste(enc, test);
  const BreakdownReport br = breakdown(dets, cfg.metric());
  json out{{"metric", cfg.values()["eval_metric"]},
           {"map", mean_ap(dets, cfg.metric())},
           {"pooled_ap", average_precision(dets)},
           {"per_video_map", map_over_videos(dets)},
           {"no_context_pooled_ap", average_precision(ste)},
           {"no_context_per_video_map", map_over_videos(ste)},
           {"by_face_count", br.by_face_count},
           {"by_face_size", br.by_face_size}};
  write_json(run / "eval.json", out);
  print_breakdown(std::cerr, br);
  std::cout << "mAP " << std::setprecision(17) << out["map"].get<double>() << '\n';
  return 0;
}

int cmd_ablate(const Args& a) {
  const fs::path run = a.run_dir;
  RunConfig cfg = resolve(a, run);
  write_manifest(run, "ablate", cfg, a);
  ShortTermEncoder enc = load_encoder(run, cfg);
  AblationData data{&enc, load_split_embeddings(run, "train"), load_split_embeddings(run, "val"),
                    load_split_embeddings(run, "test")};
  const AblationConfig ac = cfg.ablation();
  std::vector<AblationRow> rows = a.suite == "table4" ? run_context_size_grid(data, ac, &std::cerr)
                                                      : run_ablation(a.suite, suite_arms(a.suite), data, ac, &std::cerr);
  const fs::path out = run / ("ablation_" + a.suite + ".csv");
  std::ofstream csv(out);
  if (!csv) throw DataError("cannot write " + out.string());
  write_ablation_csv(csv, rows);
  for (const auto& [k, v] : mean_by_arm(rows)) std::cerr << k << ' ' << v << '\n';
  return 0;
}

int cmd_export_attention(const Args& a) {
  const fs::path run = a.run_dir;
  RunConfig cfg = resolve(a, run);
  write_manifest(run, "export-attention", cfg, a);
  if (a.track.empty() || a.time < 0) throw UsageError("export-attention needs --track and --time");
  AscTrainConfig ac = cfg.asc();
  for (const char* split : kSplitNames) {
    EmbeddingTable t = load_split_embeddings(run, split);
    if (!t.contains(a.track)) continue;
    AscModel model = load_asc(run, cfg, t.dim());
    if (!model.config().uses_pairwise()) throw UsageError("architecture " + cfg.values()["asc_arch"].get<std::string>() + " has no attention");
    Rng rng(cfg.seed());
    ContextEnsemble e = assemble(t, a.time, a.track, ac.ensemble, rng, ac.distortion);
    auto [score, st] = model.asc_forward(e.values);
    const fs::path prefix = a.prefix.empty() ? run / "attention" : fs::path(a.prefix);
    AttentionFiles f = export_attention(e, st, prefix);
    std::cerr << "score " << score << ", wrote " << f.matrix << ' ' << f.metadata << ' ' << f.image << '\n';
    return 0;
  }
  throw DataError("track " + a.track + " is not in the run's embedding caches");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active speaker context: synthetic data, training, evaluation and ablations"};
  app.require_subcommand(1);
  Args args;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Args&);
  };
  const Command commands[] = {
      {"gen-data", "generate a synthetic dataset into --data", cmd_gen_data},
      {"train-ste", "split --data by video and train the short-term encoder into --run", cmd_train_ste},
      {"embed", "cache encoder embeddings for every split of --run", cmd_embed},
      {"train-asc", "train the context model on cached embeddings", cmd_train_asc},
      {"eval", "score the test split and write detections, mAP and breakdowns", cmd_eval},
      {"ablate", "run an ablation suite (table2, table3, table4, table5, all) to CSV", cmd_ablate},
      {"export-attention", "write the attention matrix for one reference detection", cmd_export_attention},
  };

  std::map<std::string, std::string> raw;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", args.config_path, "JSON file of config keys");
    sub->add_option("--data", args.data_dir, "dataset directory")->capture_default_str();
    sub->add_option("--run", args.run_dir, "run directory")->capture_default_str();
    if (std::string(c.name) == "ablate") sub->add_option("--suite", args.suite, "table2, table3, table4, table5 or all")->capture_default_str();
    if (std::string(c.name) == "export-attention") {
      sub->add_option("--track", args.track, "reference track id");
      sub->add_option("--time", args.time, "reference time, seconds");
      sub->add_option("--prefix", args.prefix, "output path prefix (default <run>/attention)");
    }
    for (const auto& k : RunConfig::keys()) sub->add_option(RunConfig::flag_for(k.key), raw[k.key], k.help);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      for (const auto& k : RunConfig::keys()) {
        if (sub->count(RunConfig::flag_for(k.key)) > 0) args.flags[k.key] = raw[k.key];
      }
      return cmd->run(args);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
