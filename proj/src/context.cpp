#include "asc/context.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "asc/checkpoint.hpp"

namespace asc {

void EnsembleConfig::validate() const {
  if (L < 1 || S < 1) throw ShapeError("ensemble config: L and S must be >= 1");
  if (!(T > tau) || tau <= 0) throw ShapeError("ensemble config: need T > tau > 0");
  if (cooccurrence_tolerance < 0) throw ShapeError("ensemble config: negative co-occurrence tolerance");
}

void EmbeddingTable::add(TrackEmbeddings track) {
  if (index_.count(track.track_id)) throw DataError("embedding table: duplicate track " + track.track_id);
  if (track.timestamps.empty()) throw DataError("embedding table: track " + track.track_id + " is empty");
  if (static_cast<Index>(track.timestamps.size()) != track.values.rows()) {
    throw ShapeError("embedding table: timestamp count does not match rows for " + track.track_id);
  }
  if (!track.labels.empty() && track.labels.size() != track.timestamps.size()) {
    throw ShapeError("embedding table: label count does not match rows for " + track.track_id);
  }
  for (std::size_t i = 1; i < track.timestamps.size(); ++i) {
    if (!(track.timestamps[i] > track.timestamps[i - 1])) {
      throw DataError("embedding table: timestamps of " + track.track_id + " not increasing");
    }
  }
  if (dim_ == 0) dim_ = track.values.cols();
  if (track.values.cols() != dim_) throw ShapeError("embedding table: mixed embedding dims");

  auto& times = video_times_[track.video_id];
  times.insert(times.end(), track.timestamps.begin(), track.timestamps.end());
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  index_[track.track_id] = tracks_.size();
  by_video_[track.video_id].push_back(tracks_.size());
  tracks_.push_back(std::move(track));
}

const TrackEmbeddings& EmbeddingTable::track(const std::string& track_id) const {
  auto it = index_.find(track_id);
  if (it == index_.end()) throw DataError("embedding table: unknown track " + track_id);
  return tracks_[it->second];
}

Index EmbeddingTable::nearest(const TrackEmbeddings& track, double t) const {
  const auto& ts = track.timestamps;
  auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.begin()) return 0;
  if (it == ts.end()) return static_cast<Index>(ts.size()) - 1;
  const auto hi = static_cast<Index>(it - ts.begin());
  return (t - ts[static_cast<std::size_t>(hi - 1)] <= *it - t) ? hi - 1 : hi;
}

std::vector<std::string> EmbeddingTable::present_at(const std::string& video_id, double t, double tolerance) const {
  std::vector<std::string> out;
  auto it = by_video_.find(video_id);
  if (it == by_video_.end()) return out;
  for (std::size_t i : it->second) {
    const auto& tr = tracks_[i];
    const double ts = tr.timestamps[static_cast<std::size_t>(nearest(tr, t))];
    if (std::abs(ts - t) <= tolerance) out.push_back(tr.track_id);
  }
  return out;
}

const std::vector<double>& EmbeddingTable::video_timestamps(const std::string& video_id) const {
  auto it = video_times_.find(video_id);
  if (it == video_times_.end()) throw DataError("embedding table: unknown video " + video_id);
  return it->second;
}

void EmbeddingTable::set_labels(const std::string& track_id, std::vector<int> labels) {
  auto it = index_.find(track_id);
  if (it == index_.end()) throw DataError("embedding table: unknown track " + track_id);
  if (labels.size() != tracks_[it->second].timestamps.size()) throw ShapeError("embedding table: label count mismatch");
  tracks_[it->second].labels = std::move(labels);
}

// Entry: video id | track id | u64 count | u32 d | u32 has_labels |
//        count x (f64 timestamp, d x f64) | count x u32 label (when present)
void save_embedding_cache(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  archive::write_header(os, ArchiveKind::embedding_cache, table.tracks().size());
  for (const auto& t : table.tracks()) {
    archive::write_string(os, t.video_id);
    archive::write_string(os, t.track_id);
    archive::write_u64(os, t.timestamps.size());
    archive::write_u32(os, static_cast<std::uint32_t>(t.values.cols()));
    archive::write_u32(os, t.labels.empty() ? 0 : 1);
    for (std::size_t i = 0; i < t.timestamps.size(); ++i) {
      archive::write_f64(os, t.timestamps[i]);
      for (Index j = 0; j < t.values.cols(); ++j) archive::write_f64(os, t.values(static_cast<Index>(i), j));
    }
    for (int l : t.labels) archive::write_u32(os, static_cast<std::uint32_t>(l));
  }
  if (!os) throw DataError("write failed for " + path.string());
}

EmbeddingTable load_embedding_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::uint64_t count = archive::read_header(is, ArchiveKind::embedding_cache);
  EmbeddingTable table;
  for (std::uint64_t k = 0; k < count; ++k) {
    TrackEmbeddings t;
    t.video_id = archive::read_string(is);
    t.track_id = archive::read_string(is);
    const std::uint64_t n = archive::read_u64(is);
    const std::uint32_t d = archive::read_u32(is);
    const std::uint32_t has_labels = archive::read_u32(is);
    if (n > (1ULL << 32) || d > (1U << 20)) throw DataError(path.string() + ": implausible cache entry size");
    t.values.resize(static_cast<Index>(n), static_cast<Index>(d));
    for (std::uint64_t i = 0; i < n; ++i) {
      t.timestamps.push_back(archive::read_f64(is));
      for (std::uint32_t j = 0; j < d; ++j) t.values(static_cast<Index>(i), j) = archive::read_f64(is);
    }
    if (has_labels) {
      for (std::uint64_t i = 0; i < n; ++i) t.labels.push_back(static_cast<int>(archive::read_u32(is)));
    }
    table.add(std::move(t));
  }
  return table;
}

std::vector<double> sample_clip_times(double t, double T, Index L) {
  if (L < 1) throw ShapeError("sample_clip_times: L must be >= 1");
  if (L == 1) return {t};
  std::vector<double> out;
  const double step = T / static_cast<double>(L - 1);
  for (Index i = 0; i < L; ++i) out.push_back(t + (static_cast<double>(i) - static_cast<double>(L - 1) / 2) * step);
  return out;
}

std::vector<std::string> select_speaker_slots(const std::vector<std::string>& present, const std::string& reference,
                                              Index S, Rng& rng) {
  if (S < 1) throw ShapeError("select_speaker_slots: S must be >= 1");
  if (std::find(present.begin(), present.end(), reference) == present.end()) {
    throw DataError("select_speaker_slots: reference " + reference + " is not present");
  }
  std::vector<std::string> others;
  for (const auto& id : present) {
    if (id != reference && std::find(others.begin(), others.end(), id) == others.end()) others.push_back(id);
  }
  std::vector<std::string> slots{reference};
  const auto need = static_cast<std::size_t>(S - 1);
  if (others.empty()) {
    slots.insert(slots.end(), need, reference);
  } else if (others.size() >= need) {
    // Partial Fisher-Yates: the first `need` entries are a uniform sample.
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, others.size() - 1);
      std::swap(others[i], others[pick(rng)]);
      slots.push_back(others[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
    for (std::size_t i = 0; i < need; ++i) slots.push_back(others[pick(rng)]);
  }
  return slots;
}

ContextEnsemble assemble(const EmbeddingTable& table, double t, const std::string& reference, const EnsembleConfig& cfg,
                         Rng& rng, Distortion distortion) {
  cfg.validate();
  const TrackEmbeddings& ref = table.track(reference);
  const Index ref_row = table.nearest(ref, t);
  if (std::abs(ref.timestamps[static_cast<std::size_t>(ref_row)] - t) > cfg.cooccurrence_tolerance) {
    throw DataError("assemble: reference " + reference + " has no detection at t=" + std::to_string(t));
  }

  ContextEnsemble e;
  e.reference_track_id = reference;
  e.reference_time = t;
  e.label = ref.labels.empty() ? 0 : ref.labels[static_cast<std::size_t>(ref_row)];
  e.slot_track_ids = select_speaker_slots(table.present_at(ref.video_id, t, cfg.cooccurrence_tolerance), reference,
                                          cfg.S, rng);
  std::vector<double> slot_center(static_cast<std::size_t>(cfg.S), t);

  if (distortion == Distortion::out_of_context && cfg.S > 1) {
    const auto& times = table.video_timestamps(ref.video_id);
    std::vector<double> candidates;
    for (double x : times) {
      if (std::abs(x - t) > cfg.cooccurrence_tolerance) candidates.push_back(x);
    }
    if (!candidates.empty()) {
      const double t2 = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
      auto present = table.present_at(ref.video_id, t2, cfg.cooccurrence_tolerance);
      if (std::find(present.begin(), present.end(), reference) == present.end()) present.push_back(reference);
      auto shifted = select_speaker_slots(present, reference, cfg.S, rng);
      for (Index s = 1; s < cfg.S; ++s) {
        e.slot_track_ids[static_cast<std::size_t>(s)] = shifted[static_cast<std::size_t>(s)];
        slot_center[static_cast<std::size_t>(s)] = t2;
      }
    }
  }

  const Index L = cfg.L, S = cfg.S, d = table.dim();
  std::vector<std::vector<Index>> order(static_cast<std::size_t>(S));
  for (auto& o : order) {
    for (Index l = 0; l < L; ++l) o.push_back(l);
  }
  if (distortion == Distortion::shuffle_time) {
    const Index center = cfg.reference_index();
    for (auto& o : order) {
      std::vector<Index> movable;
      for (Index l = 0; l < L; ++l) {
        if (l != center) movable.push_back(l);
      }
      std::vector<Index> shuffled = movable;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      for (std::size_t i = 0; i < movable.size(); ++i) o[static_cast<std::size_t>(movable[i])] = shuffled[i];
    }
  }

  Buffer values(static_cast<std::size_t>(L * S * d));
  e.clip_times.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(L)));
  for (Index s = 0; s < S; ++s) {
    const TrackEmbeddings& tr = table.track(e.slot_track_ids[static_cast<std::size_t>(s)]);
    const auto times = sample_clip_times(slot_center[static_cast<std::size_t>(s)], cfg.T, L);
    for (Index l = 0; l < L; ++l) {
      const Index src = order[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)];
      const Index row = table.nearest(tr, times[static_cast<std::size_t>(src)]);
      e.clip_times[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)] = tr.timestamps[static_cast<std::size_t>(row)];
      std::copy_n(tr.values.row(row).data(), d, values.begin() + (l * S + s) * d);
    }
  }
  e.values = Tensor({L, S, d}, std::move(values));
  return e;
}

std::pair<Tensor, std::vector<int>> batch_ensembles(const std::vector<ContextEnsemble>& ensembles) {
  if (ensembles.empty()) throw ShapeError("batch_ensembles: empty batch");
  const Shape inner = ensembles.front().values.shape();
  Buffer values;
  std::vector<int> labels;
  values.reserve(ensembles.size() * static_cast<std::size_t>(shape_numel(inner)));
  for (const auto& e : ensembles) {
    if (e.values.shape() != inner) throw ShapeError("batch_ensembles: mixed ensemble shapes");
    values.insert(values.end(), e.values.values().begin(), e.values.values().end());
    labels.push_back(e.label);
  }
  Shape shape{static_cast<Index>(ensembles.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return {Tensor(shape, std::move(values)), labels};
}

}  // namespace asc
