#pragma once

// Data-collection backend: session planning with gold-standard questions,
// durable answer storage, the exclusion rule and an HTTP/JSON front end.
//
// Storage layout under the data directory:
//
//   studies/<study>/plan.json
//   studies/<study>/sessions/<session>.log   one JSON object per line
//
// A session log starts with a header line and then holds one line per
// accepted answer. Each line is fsync'ed before the answer is acknowledged.
// The question list is not stored: it is re-derived from the plan, which
// makes planning a pure function of (plan, session slot).

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "triad/core.hpp"
#include "triad/error.hpp"
#include "triad/sampling.hpp"

namespace triad::service {

using json = nlohmann::json;

json sampling_plan_to_json(const SamplingPlan& p);
SamplingPlan sampling_plan_from_json(const json& j, const std::string& where = "plan");

struct Timing {
  std::uint32_t timeout_ms = 4500;
  std::uint32_t fixation_ms = 300;
  std::uint32_t break_interval = 200;
  std::uint32_t grace_ms = 1000;  // tolerated client overrun before a protocol error
};

struct GoldQuestion {
  Triplet triplet;
  std::uint8_t answer = 1;  // for the listed left/right order
};

struct StudyPlan {
  std::string name;
  std::size_t n_items = 0;
  std::vector<std::string> assets;  // per item, relative to the asset root
  SamplingPlan strategy;
  std::optional<SamplingPlan> test;
  std::size_t session_length = 2000;  // non-gold questions, test questions included
  std::size_t test_per_session = 0;
  std::size_t gold_count = 20;
  std::vector<GoldQuestion> gold;
  Timing timing;
  std::size_t n_sessions = 1;
  std::uint64_t seed = 0;
  double threshold = 0.20;
  std::optional<std::uint64_t> session_ttl_s;

  std::size_t questions_per_session() const { return session_length + gold_count; }

  /// Strict: unknown keys are validation errors.
  static StudyPlan from_json(const json& j);
  json to_json() const;
  void validate() const;
};

enum class QuestionKind { experimental, test, gold };
std::string to_string(QuestionKind k);

struct Question {
  Triplet triplet;  // as presented
  QuestionKind kind = QuestionKind::experimental;
  std::uint8_t gold_answer = 0;  // expected value for gold, in presented order
};

struct SessionTemplate {
  std::size_t slot = 0;
  std::vector<Question> questions;
};

/// Deterministic in (plan, n_sessions, seed). Throws planning errors that
/// state the shortfall when the strategy yields too few questions.
std::vector<SessionTemplate> plan_sessions(const StudyPlan& plan, std::size_t n_sessions, std::uint64_t seed);

enum class Choice { left, right, timeout };
std::string to_string(Choice c);
Choice choice_from_string(const std::string& s);

struct StoredAnswer {
  std::size_t index = 0;  // 1-based question index
  Choice choice = Choice::left;
  double response_ms = 0.0;
  std::int64_t at_ms = 0;

  bool same_payload(const StoredAnswer& o) const {
    return index == o.index && choice == o.choice && response_ms == o.response_ms;
  }
};

enum class SessionState { created, active, completed, expired };
std::string to_string(SessionState s);

struct ValidationReport {
  std::size_t gold_total = 0;
  std::size_t gold_errors = 0;
  double error_rate = 0.0;
  double threshold = 0.20;
  bool accepted = false;
};

/// Pure function of the questions and persisted answers.
ValidationReport validate_answers(const std::vector<Question>& questions, const std::vector<StoredAnswer>& answers,
                                  double threshold);

/// Raised for an out-of-order submission; carries the index the server expects.
class SequenceError : public Error {
 public:
  SequenceError(std::size_t expected, const std::string& message)
      : Error(ErrorCode::sequence, message), expected_(expected) {}
  std::size_t expected() const noexcept { return expected_; }

 private:
  std::size_t expected_;
};

struct Ack {
  std::size_t index = 0;
  bool completed = false;
  std::size_t next_index = 0;  // 0 when completed
  bool replay = false;
};

struct SessionInfo {
  std::string id;
  std::string token;
  std::string study;
  std::size_t slot = 0;
  SessionState state = SessionState::created;
  std::size_t answered = 0;
  std::size_t total = 0;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
};

struct ExportFilter {
  bool accepted_only = true;
};

struct SessionExport {
  std::string session;
  bool completed = false;
  bool accepted = false;
  AnswerSet experimental;
  AnswerSet test;
};

class StudyStore {
 public:
  /// Opens (creating if needed) the data directory and replays every log.
  explicit StudyStore(std::string data_dir);
  ~StudyStore();
  StudyStore(const StudyStore&) = delete;
  StudyStore& operator=(const StudyStore&) = delete;

  std::string create_study(const StudyPlan& plan);
  const StudyPlan& plan(const std::string& study) const;
  std::vector<std::string> studies() const;
  std::vector<SessionInfo> sessions(const std::string& study) const;

  SessionInfo create_session(const std::string& study);
  SessionInfo session(const std::string& session_id) const;

  /// Next unanswered question payload. Throws `completed` when done.
  json next_question(const std::string& session_id, const std::string& token);
  Ack submit_answer(const std::string& session_id, const std::string& token, std::size_t index, Choice choice,
                    double response_ms);
  ValidationReport validate_session(const std::string& session_id) const;
  std::vector<SessionExport> export_answers(const std::string& study, ExportFilter filter) const;
  /// Writes `<session>.csv` and, when present, `<session>_test.csv`.
  std::vector<std::string> export_to_directory(const std::string& study, ExportFilter filter,
                                               const std::string& dir) const;

  const std::string& data_dir() const noexcept { return dir_; }

 private:
  struct Study;
  struct Session;

  Study& study_ref(const std::string& id) const;
  Session& session_ref(const std::string& id) const;
  void load();
  void load_session_log(Study& study, const std::string& path);
  SessionState state_of(const Session& s) const;
  static std::int64_t now_ms();

  std::string dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::unique_ptr<Study>> studies_;
  std::map<std::string, Session*> sessions_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string assets_dir;
};

class HttpServer {
 public:
  HttpServer(StudyStore& store, ServerOptions options);
  ~HttpServer();

  /// Binds the socket; returns the bound port.
  int bind();
  /// Serves until stop(); call bind() first.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// {code, message, expected_state} body and HTTP status for an error.
std::pair<int, json> error_response(const Error& e);

}  // namespace triad::service
