#pragma once

// Fixtures shared by the test binaries.

#include <cmath>
#include <memory>
#include <string>

#include "chatlab/auth.hpp"
#include "chatlab/mock_provider.hpp"
#include "chatlab/service.hpp"

namespace testing {

inline constexpr const char* kAdminUser = "admin";
inline constexpr const char* kAdminPassword = "correct horse";

inline chatlab::AgentConfig make_agent(const std::string& id, std::string before = {}, std::string after = {}) {
  chatlab::AgentConfig agent;
  agent.id = chatlab::AgentId(id);
  agent.title = "Agent " + id;
  agent.model_id = "mock-model";
  agent.first_chat_sentence = "Hello, how are you today?";
  agent.system_starter_prompt = "You are a friendly companion. (" + id + ")";
  agent.before_user_sentence_prompt = std::move(before);
  agent.after_user_sentence_prompt = std::move(after);
  return agent;
}

inline chatlab::FormDefinition make_scale_form(const std::string& id, int questions, int lo = 1, int hi = 5) {
  chatlab::FormDefinition form;
  form.id = chatlab::FormId(id);
  form.name = id;
  form.display_title = "Form " + id;
  for (int i = 1; i <= questions; ++i) {
    chatlab::Question q;
    q.key = "q" + std::to_string(i);
    q.text = "Question " + std::to_string(i);
    q.kind = chatlab::QuestionKind::kScale;
    q.scale = chatlab::ScaleSpec{lo, hi, "low", "high"};
    q.required = true;
    q.numbered = true;
    form.questions.push_back(q);
  }
  return form;
}

inline chatlab::ExperimentConfig make_experiment(const std::string& id, int weight_a = 50) {
  chatlab::ExperimentConfig config;
  config.id = chatlab::ExperimentId(id);
  config.title = "Study " + id;
  config.description = "test study";
  config.agents = {{chatlab::AgentId("agent-a"), weight_a}, {chatlab::AgentId("agent-b"), 100 - weight_a}};
  config.status = chatlab::ExperimentStatus::kActive;
  return config;
}

inline chatlab::ServiceConfig service_config(std::uint64_t seed = 42) {
  chatlab::ServiceConfig config;
  config.admin = {kAdminUser, chatlab::hash_password(kAdminPassword, 1000)};
  config.seed = seed;
  config.retry = chatlab::RetryPolicy::immediate();
  config.public_base_url = "https://study.example.org";
  return config;
}

/// In-memory store, mock provider and service with two agents "agent-a" / "agent-b".
struct Rig {
  explicit Rig(std::uint64_t seed = 42, std::shared_ptr<chatlab::DocumentStore> backend =
                                            std::make_shared<chatlab::NullDocumentStore>())
      : store(std::move(backend), seed), service(store, provider, service_config(seed)) {
    if (!store.agent(chatlab::AgentId("agent-a"))) {
      service.create_agent(make_agent("agent-a", "[before]", "[after]"));
      service.create_agent(make_agent("agent-b"));
    }
  }

  chatlab::Store store;
  chatlab::MockProvider provider;
  chatlab::StudyService service;
};

inline chatlab::RegistrationRequest registration(const std::string& username) {
  chatlab::RegistrationRequest request;
  request.username = username;
  request.age = 30;
  request.gender = "female";
  return request;
}

/// Half-width of a 3-sigma binomial band for a share p over n draws.
inline double three_sigma_share(double p, int n) { return 3.0 * std::sqrt(p * (1.0 - p) / n); }

}  // namespace testing
