#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "parley/core.hpp"
#include "parley/rollout.hpp"
#include "parley/train.hpp"

namespace parley {

// Persisted form of one episode: everything needed for replay and analysis,
// but not the opaque environment payload. Field names are fixed by
// docs/trajectory_schema.md.
struct EpisodeRecord {
  std::int64_t episode_id = 0;
  std::string env_id;
  std::uint64_t seed = 0;
  std::vector<RoleSpec> roles;
  std::vector<Utterance> history;
  std::vector<std::string> history_text;  // rendered symbols, one per utterance
  std::vector<TrajectoryRecord> trajectories;
  EpisodeOutcome outcome;
  bool aborted = false;
  std::string abort_reason;

  bool operator==(const EpisodeRecord&) const = default;
};

EpisodeRecord to_record(const EpisodeResult& result, const Vocabulary& vocab);

std::string episode_record_to_json(const EpisodeRecord& record);
EpisodeRecord episode_record_from_json(const std::string& line);

void append_episodes_jsonl(std::ostream& out, const std::vector<EpisodeRecord>& records);
std::vector<EpisodeRecord> read_episodes_jsonl(const std::string& path);

// Transcript rendering for the replay command; output is golden-file stable.
std::string render_transcript(const EpisodeRecord& record);

// Metrics CSV: fixed column order, one row per logged step, full precision.
std::string metrics_csv_header();
std::string metrics_csv_row(const TrainingMetrics& m);
std::string format_double(double v);  // shortest exact round-trip form

}  // namespace parley
