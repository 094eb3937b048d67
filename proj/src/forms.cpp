#include "chatlab/forms.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include "json_util.hpp"

namespace chatlab {

using nlohmann::json;

std::string_view to_string(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::kShortText: return "short_text";
    case QuestionKind::kLongText: return "long_text";
    case QuestionKind::kNumber: return "number";
    case QuestionKind::kSingleChoice: return "single_choice";
    case QuestionKind::kScale: return "scale";
  }
  return "short_text";
}

std::string_view to_string(FormPhase phase) {
  switch (phase) {
    case FormPhase::kRegistration: return "registration";
    case FormPhase::kBefore: return "before";
    case FormPhase::kAfter: return "after";
  }
  return "registration";
}

const Question* FormDefinition::find(std::string_view key) const {
  for (const auto& q : questions) {
    if (q.key == key) return &q;
  }
  return nullptr;
}

namespace {

bool valid_key(std::string_view key) {
  if (key.empty() || key.size() > 64) return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::optional<double> as_number(const json& value) {
  if (value.is_number()) return value.get<double>();
  if (!value.is_string()) return std::nullopt;
  const auto& s = value.get_ref<const std::string&>();
  if (s.empty()) return std::nullopt;
  double out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(out)) return std::nullopt;
  return out;
}

std::optional<long long> as_integer(const json& value) {
  auto number = as_number(value);
  if (!number || std::floor(*number) != *number || std::abs(*number) > 1e15) return std::nullopt;
  return static_cast<long long>(*number);
}

std::optional<std::string> as_choice(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  return std::nullopt;
}

bool is_blank(const json& value) {
  return value.is_null() || (value.is_string() && value.get_ref<const std::string&>().empty());
}

// Empty string when the answer is legal for the question, otherwise the violated rule.
std::string check_answer(const Question& q, const json& value) {
  switch (q.kind) {
    case QuestionKind::kShortText:
    case QuestionKind::kLongText:
      return value.is_string() ? "" : "expected text";
    case QuestionKind::kNumber:
      return as_number(value) ? "" : "expected a number";
    case QuestionKind::kSingleChoice: {
      auto choice = as_choice(value);
      if (!choice) return "expected one of the options";
      for (const auto& option : q.options) {
        if (option.value == *choice) return "";
      }
      return "not one of the options";
    }
    case QuestionKind::kScale: {
      auto integer = as_integer(value);
      if (!integer) return "expected an integer scale point";
      if (!q.scale || *integer < q.scale->min || *integer > q.scale->max) return "out of range";
      return "";
    }
  }
  return "unsupported question kind";
}

json canonical_answer(const Question& q, const json& value) {
  switch (q.kind) {
    case QuestionKind::kNumber: {
      const double number = *as_number(value);
      if (std::floor(number) == number && std::abs(number) < 1e15) return static_cast<long long>(number);
      return number;
    }
    case QuestionKind::kScale: return *as_integer(value);
    case QuestionKind::kSingleChoice: return *as_choice(value);
    default: return value;
  }
}

}  // namespace

Violations validate_form_definition(const FormDefinition& form) {
  Violations out;
  if (form.questions.empty()) out.push_back({"questions", "form needs at least 1 question"});
  if (form.questions.size() > kMaxQuestionsPerForm) {
    out.push_back({"questions", "form exceeds " + std::to_string(kMaxQuestionsPerForm) + " questions"});
  }
  std::set<std::string> keys;
  for (std::size_t i = 0; i < form.questions.size(); ++i) {
    const auto& q = form.questions[i];
    const std::string field = "questions[" + std::to_string(i) + "] (" + q.key + ")";
    if (!valid_key(q.key)) {
      out.push_back({field, "key must be 1-64 characters of [A-Za-z0-9_.-]"});
    } else if (starts_with(q.key, kPrePrefix) || starts_with(q.key, kPostPrefix)) {
      out.push_back({field, "keys may not start with the reserved Pre_/Post_ prefixes"});
    }
    if (!keys.insert(q.key).second) out.push_back({field, "duplicate key"});
    if (q.text.empty()) out.push_back({field, "question text must not be empty"});

    if (q.kind == QuestionKind::kScale) {
      if (!q.scale) {
        out.push_back({field, "scale question needs a scale range"});
      } else if (q.scale->min >= q.scale->max) {
        out.push_back({field, "scale min must be below max"});
      } else if (q.scale->max - q.scale->min > kMaxScaleSpan) {
        out.push_back({field, "scale spans more than " + std::to_string(kMaxScaleSpan) + " points"});
      }
    }
    if (q.kind == QuestionKind::kSingleChoice) {
      if (q.options.size() < 2) out.push_back({field, "single_choice needs at least 2 options"});
      std::set<std::string> values;
      for (const auto& option : q.options) {
        if (!values.insert(option.value).second) {
          out.push_back({field, "duplicate option value '" + option.value + "'"});
        }
      }
    }
    const bool scale_ok = q.kind != QuestionKind::kScale || (q.scale && q.scale->min < q.scale->max);
    if (q.default_value && !is_blank(*q.default_value) && scale_ok) {
      if (auto rule = check_answer(q, *q.default_value); !rule.empty()) {
        out.push_back({field, "default is not a legal answer (" + rule + ")"});
      }
    }
  }
  return out;
}

Violations validate_response(const FormDefinition& form, const Answers& answers) {
  Violations out;
  for (const auto& [key, value] : answers) {
    if (!form.find(key)) out.push_back({key, "unknown key"});
  }
  for (const auto& q : form.questions) {
    auto it = answers.find(q.key);
    const json* value = (it != answers.end() && !is_blank(it->second)) ? &it->second : nullptr;
    if (!value && q.default_value && !is_blank(*q.default_value)) value = &*q.default_value;
    if (!value) {
      if (q.required) out.push_back({q.key, "required"});
      continue;
    }
    if (auto rule = check_answer(q, *value); !rule.empty()) out.push_back({q.key, rule});
  }
  return out;
}

Answers normalize_response(const FormDefinition& form, const Answers& answers) {
  Answers out;
  for (const auto& q : form.questions) {
    auto it = answers.find(q.key);
    const json* value = (it != answers.end() && !is_blank(it->second)) ? &it->second : nullptr;
    if (!value && q.default_value && !is_blank(*q.default_value)) value = &*q.default_value;
    if (!value || !check_answer(q, *value).empty()) continue;
    out[q.key] = canonical_answer(q, *value);
  }
  return out;
}

std::string dataset_key(std::string_view question_key, FormPhase phase) {
  switch (phase) {
    case FormPhase::kBefore: return std::string(kPrePrefix) + std::string(question_key);
    case FormPhase::kAfter: return std::string(kPostPrefix) + std::string(question_key);
    case FormPhase::kRegistration: break;
  }
  return std::string(question_key);
}

std::map<std::string, std::string> dataset_keys(const FormDefinition& form, FormPhase phase) {
  std::map<std::string, std::string> out;
  for (const auto& q : form.questions) out.emplace(q.key, dataset_key(q.key, phase));
  return out;
}

Answers to_dataset_answers(const Answers& answers, FormPhase phase) {
  Answers out;
  for (const auto& [key, value] : answers) out.emplace(dataset_key(key, phase), value);
  return out;
}

double mean_scale_score(const FormDefinition& form, const Answers& answers, const std::vector<std::string>& keys) {
  if (keys.empty()) throw Error(ErrorCode::kInvalidArgument, "no keys selected for scale score");
  double sum = 0;
  for (const auto& key : keys) {
    const Question* q = form.find(key);
    if (!q || q->kind != QuestionKind::kScale) {
      throw Error(ErrorCode::kInvalidArgument, "'" + key + "' is not a scale question");
    }
    auto it = answers.find(key);
    if (it == answers.end() || is_blank(it->second)) {
      throw Error(ErrorCode::kInvalidArgument, "missing answer for '" + key + "'");
    }
    auto value = as_number(it->second);
    if (!value) throw Error(ErrorCode::kInvalidArgument, "answer for '" + key + "' is not numeric");
    sum += *value;
  }
  return sum / static_cast<double>(keys.size());
}

std::vector<std::string> scale_keys(const FormDefinition& form) {
  std::vector<std::string> out;
  for (const auto& q : form.questions) {
    if (q.kind == QuestionKind::kScale) out.push_back(q.key);
  }
  return out;
}

std::vector<FormDefinition> builtin_form_templates() {
  auto scale_item = [](std::string key, std::string text, int min, int max, std::string left, std::string right) {
    Question q;
    q.key = std::move(key);
    q.text = std::move(text);
    q.kind = QuestionKind::kScale;
    q.scale = ScaleSpec{min, max, std::move(left), std::move(right)};
    q.required = true;
    q.numbered = true;
    return q;
  };

  FormDefinition sus;
  sus.id = FormId("template_sus");
  sus.name = "sus";
  sus.display_title = "System Usability";
  sus.instructions = "Please rate your agreement with each statement.";
  for (int i = 1; i <= 10; ++i) {
    sus.questions.push_back(scale_item("sus" + std::to_string(i), "Usability statement " + std::to_string(i), 1, 5,
                                       "Strongly disagree", "Strongly agree"));
  }

  FormDefinition tlx;
  tlx.id = FormId("template_tlx_raw");
  tlx.name = "tlx_raw";
  tlx.display_title = "Workload";
  tlx.instructions = "Rate the workload you experienced on each dimension.";
  const char* dimensions[] = {"mental", "physical", "temporal", "performance", "effort", "frustration"};
  for (const char* dim : dimensions) {
    tlx.questions.push_back(
        scale_item(std::string("tlx_") + dim, std::string("Workload dimension: ") + dim, 0, 10, "Very low", "Very high"));
  }

  FormDefinition mood;
  mood.id = FormId("template_mood12");
  mood.name = "mood12";
  mood.display_title = "How do you feel right now?";
  mood.instructions = "For each pair, choose the point that best describes your current mood.";
  for (int i = 1; i <= 12; ++i) {
    mood.questions.push_back(scale_item("mood" + std::to_string(i), "Mood item " + std::to_string(i), 1, 7,
                                        "Negative pole " + std::to_string(i), "Positive pole " + std::to_string(i)));
  }

  return {sus, tlx, mood};
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, QuestionKind k) { j = std::string(to_string(k)); }

void from_json(const json& j, QuestionKind& k) {
  const auto text = j.get<std::string>();
  for (auto kind : {QuestionKind::kShortText, QuestionKind::kLongText, QuestionKind::kNumber,
                    QuestionKind::kSingleChoice, QuestionKind::kScale}) {
    if (text == to_string(kind)) {
      k = kind;
      return;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown question kind '" + text + "'");
}

void to_json(json& j, FormPhase p) { j = std::string(to_string(p)); }

void from_json(const json& j, FormPhase& p) {
  const auto text = j.get<std::string>();
  for (auto phase : {FormPhase::kRegistration, FormPhase::kBefore, FormPhase::kAfter}) {
    if (text == to_string(phase)) {
      p = phase;
      return;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown form phase '" + text + "'");
}

void to_json(json& j, const ChoiceOption& v) { j = json{{"label", v.label}, {"value", v.value}}; }

void from_json(const json& j, ChoiceOption& v) {
  v.value = j.at("value").is_string() ? j.at("value").get<std::string>() : j.at("value").dump();
  v.label = j.value("label", v.value);
}

void to_json(json& j, const ScaleSpec& v) {
  j = json{{"min", v.min}, {"max", v.max}, {"left_label", v.left_label}, {"right_label", v.right_label}};
}

void from_json(const json& j, ScaleSpec& v) {
  v.min = j.at("min").get<int>();
  v.max = j.at("max").get<int>();
  v.left_label = j.value("left_label", "");
  v.right_label = j.value("right_label", "");
}

void to_json(json& j, const Question& v) {
  j = json{{"key", v.key},
           {"text", v.text},
           {"kind", v.kind},
           {"options", v.options},
           {"scale", detail::optional_to_json(v.scale)},
           {"required", v.required},
           {"default", v.default_value ? *v.default_value : json(nullptr)},
           {"numbered", v.numbered}};
}

void from_json(const json& j, Question& v) {
  v.key = j.at("key").get<std::string>();
  v.text = j.value("text", "");
  v.kind = j.value("kind", QuestionKind::kShortText);
  v.options = j.value("options", std::vector<ChoiceOption>{});
  v.scale = detail::optional_from_json<ScaleSpec>(j, "scale");
  v.required = j.value("required", false);
  auto it = j.find("default");
  v.default_value = (it == j.end() || it->is_null()) ? std::nullopt : std::optional<json>(*it);
  v.numbered = j.value("numbered", false);
}

void to_json(json& j, const FormDefinition& v) {
  j = json{{"id", v.id},
           {"name", v.name},
           {"display_title", v.display_title},
           {"instructions", v.instructions},
           {"questions", v.questions}};
}

void from_json(const json& j, FormDefinition& v) {
  v.id = FormId(j.value("id", ""));
  v.name = j.value("name", "");
  v.display_title = j.value("display_title", "");
  v.instructions = j.value("instructions", "");
  v.questions = j.value("questions", std::vector<Question>{});
}

void to_json(json& j, const FormResponse& v) {
  j = json{{"form_id", v.form_id},
           {"phase", v.phase},
           {"answers", v.answers},
           {"submitted_at", detail::timestamp_to_json(v.submitted_at)}};
}

void from_json(const json& j, FormResponse& v) {
  v.form_id = j.at("form_id").get<FormId>();
  v.phase = j.at("phase").get<FormPhase>();
  v.answers = j.value("answers", Answers{});
  v.submitted_at = detail::timestamp_from_json(j, "submitted_at");
}

}  // namespace chatlab
