#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chatlab/store.hpp"

namespace chatlab {

enum class ExportFormat { kJson, kCsv };

/// One flat export table. Every row is a JSON object holding exactly `columns`.
struct ExportTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<nlohmann::json> rows;
};

/// Analysis-ready dataset for one experiment.
///
/// Column orders (fixed):
///   participants: experiment_id, username, condition, agent_id, age, gender,
///                 registered_at, then registration keys (form order, extras sorted)
///   sessions:     experiment_id, session_id, username, condition, agent_id,
///                 started_at, finished_at, status, user_messages, agent_messages
///   messages:     experiment_id, username, condition, agent_id, session_id,
///                 message_id, position, author, text, sent_at, annotation, status
///   responses:    experiment_id, username, condition, agent_id, session_id,
///                 then Pre_ keys, then Post_ keys (form order, extras sorted)
struct ExportBundle {
  nlohmann::json metadata;  // experiment config, agents, forms, summary
  ExportTable participants;
  ExportTable sessions;
  ExportTable messages;
  ExportTable responses;

  std::vector<const ExportTable*> tables() const { return {&participants, &sessions, &messages, &responses}; }
};

/// The fixed leading columns of the participants table.
const std::vector<std::string>& participant_columns();

ExportBundle build_export(const ExperimentSnapshot& snapshot);

/// Referential integrity and count consistency across the four tables.
Violations check_integrity(const ExportBundle& bundle);

/// The {experiment_id}.json document.
std::string to_json_document(const ExportBundle& bundle);

std::string to_csv(const ExportTable& table);

/// File name → content: {experiment_id}.json, or {experiment_id}_{table}.csv per table.
std::map<std::string, std::string> export_files(const ExportBundle& bundle, ExportFormat format);

/// Rebuilds a snapshot from a JSON export document, the inverse of build_export.
ExperimentSnapshot snapshot_from_export(const nlohmann::json& document);

/// Re-reads an ExportBundle from a JSON export document.
ExportBundle bundle_from_json(const nlohmann::json& document);

}  // namespace chatlab
