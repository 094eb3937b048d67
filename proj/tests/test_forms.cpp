#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chatlab/forms.hpp"
#include "support.hpp"

using namespace chatlab;
using nlohmann::json;

namespace {

bool has(const Violations& violations, std::string_view field, std::string_view rule) {
  for (const auto& v : violations) {
    if (v.field == field && v.rule.find(rule) != std::string::npos) return true;
  }
  return false;
}

bool any_rule(const Violations& violations, std::string_view rule) {
  for (const auto& v : violations) {
    if (v.rule.find(rule) != std::string::npos) return true;
  }
  return false;
}

FormDefinition mixed_form() {
  FormDefinition form;
  form.id = FormId("mixed");
  form.name = "mixed";
  Question name{"nickname", "Your nickname", QuestionKind::kShortText};
  name.required = true;
  Question note{"note", "Anything else?", QuestionKind::kLongText};
  Question hours{"hours", "Hours of sleep", QuestionKind::kNumber};
  hours.required = true;
  Question pet{"pet", "Pet", QuestionKind::kSingleChoice};
  pet.options = {{"Cat", "cat"}, {"Dog", "dog"}};
  pet.default_value = "cat";
  Question mood{"mood", "Mood", QuestionKind::kScale};
  mood.scale = ScaleSpec{1, 7, "bad", "good"};
  mood.required = true;
  form.questions = {name, note, hours, pet, mood};
  return form;
}

}  // namespace

TEST_CASE("a form holds at most 15 questions") {
  CHECK(validate_form_definition(testing::make_scale_form("f", 15)).empty());
  CHECK(any_rule(validate_form_definition(testing::make_scale_form("f", 16)), "exceeds 15"));
  CHECK(any_rule(validate_form_definition(testing::make_scale_form("f", 0)), "at least 1"));
}

TEST_CASE("question definitions") {
  auto form = testing::make_scale_form("f", 3);

  SUBCASE("duplicate keys") {
    form.questions[2].key = "q1";
    CHECK(any_rule(validate_form_definition(form), "duplicate key"));
  }
  SUBCASE("reserved prefixes") {
    form.questions[0].key = "Pre_mood";
    form.questions[1].key = "Post_mood";
    CHECK(validate_form_definition(form).size() == 2);
  }
  SUBCASE("key charset and length") {
    form.questions[0].key = "has space";
    form.questions[1].key = std::string(65, 'k');
    CHECK(validate_form_definition(form).size() == 2);
  }
  SUBCASE("scale span") {
    form.questions[0].scale = ScaleSpec{0, 10};
    CHECK(validate_form_definition(form).empty());
    form.questions[0].scale = ScaleSpec{0, 11};
    CHECK(any_rule(validate_form_definition(form), "spans more than 10"));
    form.questions[0].scale = ScaleSpec{3, 3};
    CHECK(any_rule(validate_form_definition(form), "min must be below max"));
  }
  SUBCASE("single choice options") {
    Question q{"c", "Choose", QuestionKind::kSingleChoice};
    q.options = {{"Only", "only"}};
    form.questions.push_back(q);
    CHECK(any_rule(validate_form_definition(form), "at least 2 options"));
    form.questions.back().options = {{"One", "x"}, {"Two", "x"}};
    CHECK(any_rule(validate_form_definition(form), "duplicate option value"));
  }
  SUBCASE("defaults must be legal") {
    form.questions[0].default_value = 9;
    CHECK(any_rule(validate_form_definition(form), "default is not a legal answer"));
    form.questions[0].default_value = 3;
    CHECK(validate_form_definition(form).empty());
  }
}

TEST_CASE("response validation") {
  const auto form = mixed_form();
  REQUIRE(validate_form_definition(form).empty());
  const Answers good = {{"nickname", "fox"}, {"hours", 7.5}, {"pet", "dog"}, {"mood", 4}};
  CHECK(validate_response(form, good).empty());

  SUBCASE("required fields") {
    const auto v = validate_response(form, {{"hours", 7}});
    CHECK(has(v, "nickname", "required"));
    CHECK(has(v, "mood", "required"));
    CHECK_FALSE(has(v, "pet", "required"));  // has a default
  }
  SUBCASE("blank counts as missing") {
    auto answers = good;
    answers["nickname"] = "";
    CHECK(has(validate_response(form, answers), "nickname", "required"));
    answers["nickname"] = nullptr;
    CHECK(has(validate_response(form, answers), "nickname", "required"));
  }
  SUBCASE("scale range") {
    auto answers = good;
    answers["mood"] = 8;
    CHECK(has(validate_response(form, answers), "mood", "out of range"));
    answers["mood"] = 0;
    CHECK(has(validate_response(form, answers), "mood", "out of range"));
    answers["mood"] = 7;
    CHECK(validate_response(form, answers).empty());
  }
  SUBCASE("types") {
    auto answers = good;
    answers["hours"] = "many";
    answers["pet"] = "fish";
    answers["nickname"] = 12;
    const auto v = validate_response(form, answers);
    CHECK(has(v, "hours", "expected a number"));
    CHECK(has(v, "pet", "not one of the options"));
    CHECK(has(v, "nickname", "expected text"));
  }
  SUBCASE("unknown keys") {
    auto answers = good;
    answers["extra"] = 1;
    CHECK(has(validate_response(form, answers), "extra", "unknown key"));
  }
  SUBCASE("normalization fills defaults and canonicalises numbers") {
    const auto normalized = normalize_response(form, {{"nickname", "fox"}, {"hours", "8"}, {"mood", "5"}});
    CHECK(normalized.at("pet") == "cat");
    CHECK(normalized.at("hours") == 8);
    CHECK(normalized.at("mood") == 5);
    CHECK_FALSE(normalized.contains("note"));
  }
}

TEST_CASE("dataset keys carry exact phase prefixes") {
  CHECK(dataset_key("mood1", FormPhase::kBefore) == "Pre_mood1");
  CHECK(dataset_key("mood1", FormPhase::kAfter) == "Post_mood1");
  CHECK(dataset_key("mood1", FormPhase::kRegistration) == "mood1");
  const auto answers = to_dataset_answers({{"a", 1}, {"b", 2}}, FormPhase::kAfter);
  CHECK(answers.size() == 2);
  CHECK(answers.count("Post_a") == 1);
  CHECK(answers.count("Post_b") == 1);
}

TEST_CASE("mean scale score") {
  const auto form = testing::make_scale_form("f", 3, 1, 7);
  const Answers answers = {{"q1", 2}, {"q2", 4}, {"q3", 6}};
  CHECK(mean_scale_score(form, answers, {"q1", "q2", "q3"}) == doctest::Approx(4.0));
  CHECK(mean_scale_score(form, answers, {"q3"}) == doctest::Approx(6.0));
  CHECK_THROWS_AS(mean_scale_score(form, {{"q1", 2}}, {"q1", "q2"}), Error);
  CHECK(scale_keys(form) == std::vector<std::string>{"q1", "q2", "q3"});
}

TEST_CASE("built-in templates are valid forms") {
  const auto templates = builtin_form_templates();
  REQUIRE(templates.size() == 3);
  for (const auto& form : templates) {
    CAPTURE(form.id.str());
    CHECK(validate_form_definition(form).empty());
    CHECK(json(form).get<FormDefinition>() == form);
  }
  CHECK(templates[0].questions.size() == 10);
  CHECK(templates[1].questions.size() == 6);
  CHECK(templates[2].questions.size() == 12);
}
