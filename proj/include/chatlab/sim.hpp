#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "chatlab/export.hpp"
#include "chatlab/forms.hpp"

namespace chatlab::sim {

enum class AnnotationPolicy { kNever, kAlwaysLike, kRandom };
enum class AnswerPolicy { kRandom, kMin, kMax, kFixed };

struct PhaseAnswers {
  AnswerPolicy policy = AnswerPolicy::kRandom;
  Answers values;  // kFixed; keys not listed fall back to random
};

/// Word-count generator for synthetic user messages.
struct MessageGenerator {
  int count = 5;
  int min_words = 3;
  int max_words = 12;
};

/// What each synthetic participant does. Loaded from JSON:
///   {"username_pattern": "sim-{seed}-{i}",
///    "messages": ["hi", ...]  |  "generator": {"count": 5, "min_words": 3, "max_words": 12},
///    "annotation": "never" | "always_like" | {"random": 0.3},
///    "conversations": 1, "stream": false, "age": 30, "gender": "female",
///    "answers": {"registration": {...}, "before": {...}, "after": {...}}}
/// where each phase is {"policy": "random"|"min"|"max"|"fixed", "values": {...}}.
struct ParticipantScript {
  std::string username_pattern = "sim-{seed}-{i}";
  std::vector<std::string> messages;
  std::optional<MessageGenerator> generator;
  AnnotationPolicy annotation = AnnotationPolicy::kNever;
  double annotation_p = 0.5;
  int conversations = 1;
  bool stream = false;
  int age = 30;
  std::string gender = "unspecified";
  PhaseAnswers registration;
  PhaseAnswers before;
  PhaseAnswers after;
};

/// Throws kInvalidArgument; a script must yield at least one message.
ParticipantScript script_from_json(const nlohmann::json& j);
nlohmann::json script_to_json(const ParticipantScript& script);
Violations validate_script(const ParticipantScript& script);

std::string username_for(const ParticipantScript& script, std::uint64_t seed, int index);

/// A legal answer set for `form` under `policy`, drawn from `rng` where random.
Answers synthesize_answers(const FormDefinition& form, const PhaseAnswers& policy, std::mt19937_64& rng);

struct ConditionStats {
  int participants = 0;
  int sessions = 0;
  int user_messages = 0;
  int agent_messages = 0;
  double mean_words_per_user_message = 0;
  std::optional<double> pre_mean;
  std::optional<double> post_mean;
  std::optional<double> mood_delta;
  int likes = 0;
  int dislikes = 0;

  bool operator==(const ConditionStats&) const = default;
};

struct SimReport {
  int attempted = 0;
  int registered = 0;
  std::map<std::string, int> rejections;  // error code -> count
  std::map<std::string, ConditionStats> conditions;  // condition label -> stats
  int open_sessions = 0;
  bool reconciled = true;
  std::vector<std::string> discrepancies;

  bool operator==(const SimReport&) const = default;
};

nlohmann::json to_json(const SimReport& report);

struct SimOptions {
  std::string base_url;  // http://host:port
  std::string slug;
  int participants = 0;
  ParticipantScript script;
  std::uint64_t seed = 1;
  int concurrency = 16;
  std::string admin_username;
  std::string admin_password;
  std::filesystem::path export_dir;  // when set, the downloaded export files are written here
};

/// Registers and runs every participant against a live server, then downloads the
/// export and reports on it. Protocol rejections are counted, not thrown.
SimReport run_simulation(const SimOptions& options);

/// Descriptive report from an export; pre/post scale keys are taken from the linked forms.
SimReport report_from_export(const ExportBundle& bundle);

/// Counts recomputed from the CSV files; returns the mismatches against `report`.
std::vector<std::string> reconcile_with_csv(const SimReport& report, const std::map<std::string, std::string>& csv_files);

/// Per condition: mean over sessions of (mean Post_ keys - mean Pre_ keys). Keys may
/// be given with or without their prefix. Sessions missing any key are skipped.
std::map<std::string, double> report_mood_delta(const ExportBundle& bundle, const std::vector<std::string>& pre_keys,
                                                const std::vector<std::string>& post_keys);

/// Reads {id}.json, or the four {id}_{table}.csv files, from a directory.
ExportBundle load_export_dir(const std::filesystem::path& dir);

}  // namespace chatlab::sim
