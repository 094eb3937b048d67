#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chatlab/domain.hpp"

namespace chatlab {

inline constexpr std::size_t kMaxQuestionsPerForm = 15;
inline constexpr int kMaxScaleSpan = 10;
inline constexpr std::string_view kPrePrefix = "Pre_";
inline constexpr std::string_view kPostPrefix = "Post_";

enum class QuestionKind { kShortText, kLongText, kNumber, kSingleChoice, kScale };
enum class FormPhase { kRegistration, kBefore, kAfter };

std::string_view to_string(QuestionKind kind);
std::string_view to_string(FormPhase phase);

struct ChoiceOption {
  std::string label;
  std::string value;

  bool operator==(const ChoiceOption&) const = default;
};

struct ScaleSpec {
  int min = 1;
  int max = 7;
  std::string left_label;
  std::string right_label;

  bool operator==(const ScaleSpec&) const = default;
};

struct Question {
  std::string key;
  std::string text;
  QuestionKind kind = QuestionKind::kShortText;
  std::vector<ChoiceOption> options;  // single_choice only
  std::optional<ScaleSpec> scale;     // scale only
  bool required = false;
  std::optional<nlohmann::json> default_value;
  bool numbered = false;

  bool operator==(const Question&) const = default;
};

struct FormDefinition {
  FormId id;
  std::string name;
  std::string display_title;
  std::string instructions;
  std::vector<Question> questions;

  const Question* find(std::string_view key) const;

  bool operator==(const FormDefinition&) const = default;
};

struct FormResponse {
  FormId form_id;
  FormPhase phase = FormPhase::kRegistration;
  Answers answers;
  Timestamp submitted_at{};
};

Violations validate_form_definition(const FormDefinition& form);

/// Checks one submission: required coverage, per-kind legality, no unknown keys.
/// Absent answers for questions with a default are treated as the default.
Violations validate_response(const FormDefinition& form, const Answers& answers);

/// Canonical stored form of a valid submission: defaults filled in, numeric strings
/// converted to numbers, empty optional answers dropped.
Answers normalize_response(const FormDefinition& form, const Answers& answers);

std::string dataset_key(std::string_view question_key, FormPhase phase);
std::map<std::string, std::string> dataset_keys(const FormDefinition& form, FormPhase phase);

/// Re-keys answers into the phase's dataset namespace.
Answers to_dataset_answers(const Answers& answers, FormPhase phase);

/// Arithmetic mean of the selected scale answers. Throws on a missing answer or
/// a key that is not a scale question.
double mean_scale_score(const FormDefinition& form, const Answers& answers, const std::vector<std::string>& keys);

std::vector<std::string> scale_keys(const FormDefinition& form);

/// Sample instruments: SUS (10 items, 1-5), raw TLX (6 items, 0-10) and a 12-item
/// 7-point mood scale. Item texts are placeholders.
std::vector<FormDefinition> builtin_form_templates();

void to_json(nlohmann::json& j, QuestionKind k);
void from_json(const nlohmann::json& j, QuestionKind& k);
void to_json(nlohmann::json& j, FormPhase p);
void from_json(const nlohmann::json& j, FormPhase& p);
void to_json(nlohmann::json& j, const ChoiceOption& v);
void from_json(const nlohmann::json& j, ChoiceOption& v);
void to_json(nlohmann::json& j, const ScaleSpec& v);
void from_json(const nlohmann::json& j, ScaleSpec& v);
void to_json(nlohmann::json& j, const Question& v);
void from_json(const nlohmann::json& j, Question& v);
void to_json(nlohmann::json& j, const FormDefinition& v);
void from_json(const nlohmann::json& j, FormDefinition& v);
void to_json(nlohmann::json& j, const FormResponse& v);
void from_json(const nlohmann::json& j, FormResponse& v);

}  // namespace chatlab
