#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "triad/evaluation.hpp"
#include "triad/oracle.hpp"
#include "triad/service.hpp"

using namespace triad;
using namespace triad::service;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("triad_service_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const VectorDataset& points() {
  static const VectorDataset ds = sample_unit_cube(100, 3, 77);
  return ds;
}

// Gold questions with the largest distance gap among a candidate pool.
std::vector<GoldQuestion> make_gold(std::size_t n, std::size_t count) {
  std::vector<GoldQuestion> gold;
  std::set<QuestionKey> used;
  Rng rng(5);
  while (gold.size() < count) {
    const auto idx = rng.sample_without_replacement(n, 3);
    const Triplet t{static_cast<ItemId>(idx[0]), static_cast<ItemId>(idx[1]), static_cast<ItemId>(idx[2])};
    if (!used.insert(QuestionKey::of(t)).second) continue;
    gold.push_back({t, true_answer(points(), t).value});
  }
  return gold;
}

StudyPlan random_plan(std::size_t m, std::size_t session_length, std::size_t n_sessions, std::size_t gold_count = 20) {
  StudyPlan p;
  p.name = "random";
  p.n_items = 100;
  p.strategy.strategy = Strategy::random;
  p.strategy.m = m;
  p.strategy.seed = 11;
  p.session_length = session_length;
  p.gold_count = gold_count;
  p.gold = make_gold(100, gold_count);
  p.n_sessions = n_sessions;
  p.seed = 3;
  return p;
}

Choice correct(const Question& q) {
  if (q.kind == QuestionKind::gold) return q.gold_answer ? Choice::left : Choice::right;
  return true_answer(points(), q.triplet).value ? Choice::left : Choice::right;
}

Choice wrong(Choice c) { return c == Choice::left ? Choice::right : Choice::left; }

// Answers a whole session, getting `gold_errors` gold questions wrong.
void run_session(StudyStore& store, const SessionInfo& s, std::size_t gold_errors, bool gold_timeouts = false) {
  const auto& plan = store.plan(s.study);
  const auto questions = plan_sessions(plan, plan.n_sessions, plan.seed)[s.slot].questions;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    Choice c = correct(q);
    double ms = 800;
    if (q.kind == QuestionKind::gold && errors < gold_errors) {
      ++errors;
      if (gold_timeouts) {
        c = Choice::timeout;
        ms = plan.timing.timeout_ms;
      } else {
        c = wrong(c);
      }
    }
    store.submit_answer(s.id, s.token, i + 1, c, ms);
  }
}

template <class E>
E caught(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e;
  }
  FAIL("expected an exception");
  throw;
}

std::set<QuestionKey> keys_of(const std::vector<Question>& qs, QuestionKind kind) {
  std::set<QuestionKey> out;
  for (const auto& q : qs)
    if (q.kind == kind) out.insert(QuestionKey::of(q.triplet));
  return out;
}

}  // namespace

TEST_CASE("random plan: three sessions of 2000 plus 20 gold") {
  const auto plan = random_plan(6000, 2000, 3);
  CHECK(plan.questions_per_session() == 2020);
  const auto sessions = plan_sessions(plan, 3, plan.seed);
  REQUIRE(sessions.size() == 3);
  std::set<QuestionKey> gold;
  for (const auto& g : plan.gold) gold.insert(QuestionKey::of(g.triplet));
  std::size_t left_first = 0, total = 0;
  for (const auto& s : sessions) {
    CHECK(s.questions.size() == 2020);
    std::size_t n_gold = 0;
    for (const auto& q : s.questions) {
      CHECK_NOTHROW(q.triplet.validate(100));
      if (q.kind == QuestionKind::gold) {
        ++n_gold;
        CHECK(gold.contains(QuestionKey::of(q.triplet)));
        // The expected answer follows the presented order.
        CHECK(q.gold_answer == true_answer(points(), q.triplet).value);
      } else {
        CHECK_FALSE(gold.contains(QuestionKey::of(q.triplet)));
        left_first += q.triplet.left < q.triplet.right;
        ++total;
      }
    }
    CHECK(n_gold == 20);
  }
  CHECK(std::abs(static_cast<double>(left_first) / total - 0.5) < 0.03);
  // Planning is a pure function of its inputs.
  const auto again = plan_sessions(plan, 3, plan.seed);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 2020; ++i) CHECK(again[s].questions[i].triplet == sessions[s].questions[i].triplet);
}

TEST_CASE("landmark plan: 2000 landmark and 500 test questions per session") {
  StudyPlan plan;
  plan.n_items = 100;
  plan.strategy.strategy = Strategy::landmark;
  plan.strategy.random_landmarks = 12;
  plan.strategy.cap = 6000;
  plan.strategy.seed = 4;
  SamplingPlan test;
  test.strategy = Strategy::random;
  test.m = 1500;
  test.seed = 5;
  plan.test = test;
  plan.session_length = 2500;
  plan.test_per_session = 500;
  plan.gold = make_gold(100, 20);
  plan.n_sessions = 3;
  plan.seed = 8;
  CHECK_NOTHROW(plan.validate());
  const auto sessions = plan_sessions(plan, 3, plan.seed);
  std::multiset<std::uint64_t> all_landmark;
  for (const auto& s : sessions) {
    CHECK(s.questions.size() == 2520);
    std::map<QuestionKind, std::size_t> kinds;
    for (const auto& q : s.questions) {
      ++kinds[q.kind];
      if (q.kind == QuestionKind::experimental) all_landmark.insert(QuestionKey::of(q.triplet).packed());
    }
    CHECK(kinds[QuestionKind::experimental] == 2000);
    CHECK(kinds[QuestionKind::test] == 500);
    CHECK(kinds[QuestionKind::gold] == 20);
  }
  // The three sessions split the capped landmark set without overlap.
  CHECK(all_landmark.size() == 6000);
  CHECK(std::set<std::uint64_t>(all_landmark.begin(), all_landmark.end()).size() <= 6000);
}

TEST_CASE("repeated design reuses the base questions in a new order") {
  StudyPlan plan = random_plan(600, 200, 3);
  plan.strategy.strategy = Strategy::repeated;
  plan.strategy.l = 3;
  const auto sessions = plan_sessions(plan, 3, plan.seed);
  const auto base = keys_of(sessions[0].questions, QuestionKind::experimental);
  for (const auto& s : sessions) CHECK(keys_of(s.questions, QuestionKind::experimental) == base);
  std::size_t same_position = 0;
  for (std::size_t i = 0; i < sessions[0].questions.size(); ++i)
    same_position += QuestionKey::of(sessions[0].questions[i].triplet) == QuestionKey::of(sessions[1].questions[i].triplet);
  CHECK(same_position < 20);
}

TEST_CASE("gold positions depend on the seed") {
  const auto plan = random_plan(6000, 2000, 3);
  auto positions = [&](std::uint64_t seed) {
    std::vector<std::size_t> pos;
    const auto s = plan_sessions(plan, 1, seed);
    for (std::size_t i = 0; i < s[0].questions.size(); ++i)
      if (s[0].questions[i].kind == QuestionKind::gold) pos.push_back(i);
    return pos;
  };
  CHECK(positions(1) != positions(2));
  CHECK(positions(1) == positions(1));
}

TEST_CASE("planning shortfall is reported") {
  const auto plan = random_plan(1000, 2000, 3);
  const auto e = caught<Error>([&] { plan_sessions(plan, 3, plan.seed); });
  CHECK(e.code() == ErrorCode::planning);
  CHECK(std::string(e.what()).find("short by") != std::string::npos);
}

TEST_CASE("plan documents are strict and round trip") {
  const auto plan = random_plan(300, 100, 3);
  const auto back = StudyPlan::from_json(plan.to_json());
  CHECK(back.to_json() == plan.to_json());
  auto j = plan.to_json();
  j["sesion_length"] = 5;
  CHECK(caught<Error>([&] { StudyPlan::from_json(j); }).code() == ErrorCode::validation);
  auto g = plan.to_json();
  g["gold"].erase(0);
  CHECK_THROWS_AS(StudyPlan::from_json(g).validate(), Error);
  auto s = plan.to_json();
  s["strategy"]["l"] = 2;
  s["strategy"]["strategy"] = "repeated";
  CHECK_THROWS_AS(StudyPlan::from_json(s).validate(), Error);
}

TEST_CASE("session flow") {
  TempDir tmp("flow");
  StudyStore store(tmp.path.string());
  const auto study = store.create_study(random_plan(1200, 400, 3));
  const auto s = store.create_session(study);
  CHECK(s.total == 420);

  const auto q1 = store.next_question(s.id, s.token);
  CHECK(q1["index"] == 1);
  CHECK(q1["break"] == false);
  CHECK(q1["timing"]["timeout_ms"] == 4500);

  CHECK(caught<Error>([&] { store.next_question(s.id, "nope"); }).code() == ErrorCode::unauthorized);
  CHECK(caught<Error>([&] { store.next_question("se-missing", s.token); }).code() == ErrorCode::not_found);

  const auto ack = store.submit_answer(s.id, s.token, 1, Choice::left, 900);
  CHECK(ack.next_index == 2);
  CHECK_FALSE(ack.replay);
  CHECK(store.next_question(s.id, s.token)["index"] == 2);

  const auto replay = store.submit_answer(s.id, s.token, 1, Choice::left, 900);
  CHECK(replay.replay);
  CHECK(replay.next_index == 2);
  CHECK(store.session(s.id).answered == 1);

  CHECK(caught<Error>([&] { store.submit_answer(s.id, s.token, 1, Choice::right, 900); }).code() ==
        ErrorCode::conflict);
  const auto seq = caught<SequenceError>([&] { store.submit_answer(s.id, s.token, 5, Choice::left, 900); });
  CHECK(seq.expected() == 2);
  const auto [status, body] = error_response(seq);
  CHECK(status == 409);
  CHECK(body["expected_index"] == 2);

  // Timing rules.
  CHECK(caught<Error>([&] { store.submit_answer(s.id, s.token, 2, Choice::left, 4500 + 1001); }).code() ==
        ErrorCode::protocol);
  CHECK(caught<Error>([&] { store.submit_answer(s.id, s.token, 2, Choice::timeout, 3000); }).code() ==
        ErrorCode::protocol);
  CHECK(caught<Error>([&] { store.submit_answer(s.id, s.token, 2, Choice::left, -1); }).code() ==
        ErrorCode::protocol);
  CHECK(store.submit_answer(s.id, s.token, 2, Choice::timeout, 4500).next_index == 3);

  for (std::size_t i = 3; i < 200; ++i) store.submit_answer(s.id, s.token, i, Choice::right, 700);
  CHECK(store.next_question(s.id, s.token)["break"] == true);
  CHECK(store.next_question(s.id, s.token)["index"] == 200);
  for (std::size_t i = 200; i < 420; ++i) {
    const auto a = store.submit_answer(s.id, s.token, i, Choice::left, 700);
    CHECK(a.completed == (i == 420));
  }
  const auto last = store.submit_answer(s.id, s.token, 420, Choice::left, 700);
  CHECK(last.completed);
  CHECK(caught<Error>([&] { store.next_question(s.id, s.token); }).code() == ErrorCode::completed);
  CHECK(caught<Error>([&] { store.submit_answer(s.id, s.token, 421, Choice::left, 700); }).code() ==
        ErrorCode::completed);
  CHECK(store.session(s.id).state == SessionState::completed);
}

TEST_CASE("exclusion threshold") {
  TempDir tmp("validate");
  StudyStore store(tmp.path.string());
  const auto study = store.create_study(random_plan(900, 100, 9));
  auto report = [&](std::size_t errors, bool timeouts = false) {
    const auto s = store.create_session(study);
    CHECK(caught<Error>([&] { store.validate_session(s.id); }).code() == ErrorCode::state);
    run_session(store, s, errors, timeouts);
    return store.validate_session(s.id);
  };
  const auto zero = report(0);
  CHECK(zero.accepted);
  CHECK(zero.gold_total == 20);
  const auto four = report(4);
  CHECK(four.gold_errors == 4);
  CHECK(four.error_rate == doctest::Approx(0.20));
  CHECK(four.accepted);
  const auto five = report(5);
  CHECK(five.error_rate == doctest::Approx(0.25));
  CHECK_FALSE(five.accepted);
  const auto timeouts = report(5, true);
  CHECK(timeouts.gold_errors == 5);
  CHECK_FALSE(timeouts.accepted);
}

TEST_CASE("export filters and re-ingestion") {
  TempDir tmp("export");
  StudyStore store(tmp.path.string());
  const auto plan = random_plan(900, 300, 3);
  const auto study = store.create_study(plan);
  std::vector<SessionInfo> s;
  for (std::size_t errors : {0u, 2u, 9u}) {
    s.push_back(store.create_session(study));
    run_session(store, s.back(), errors);
  }
  const auto accepted = store.export_answers(study, {true});
  CHECK(accepted.size() == 2);
  CHECK(store.export_answers(study, {false}).size() == 3);

  std::set<QuestionKey> gold;
  for (const auto& g : plan.gold) gold.insert(QuestionKey::of(g.triplet));
  for (const auto& e : accepted) {
    CHECK(e.experimental.size() == 300);
    for (const auto& r : e.experimental.records()) CHECK_FALSE(gold.contains(QuestionKey::of(r.triplet)));
  }

  const auto files = store.export_to_directory(study, {true}, (tmp.path / "export").string());
  REQUIRE(files.size() == 2);
  // The answers were the true ones, so the truth embedding scores 1.0 on them.
  Embedding truth;
  truth.n = 100;
  truth.d = 3;
  truth.coords = points().coords();
  for (const auto& f : files) {
    const auto records = read_records(f, 100);
    CHECK(records.size() == 300);
    CHECK(evaluate(truth, records).accuracy == 1.0);
  }
  // Validation recomputed offline from the plan and the exported state matches.
  const auto questions = plan_sessions(plan, plan.n_sessions, plan.seed)[s[2].slot].questions;
  std::vector<StoredAnswer> answers;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    Choice c = correct(questions[i]);
    if (questions[i].kind == QuestionKind::gold && errors < 9) {
      c = wrong(c);
      ++errors;
    }
    answers.push_back({i + 1, c, 800, 0});
  }
  const auto offline = validate_answers(questions, answers, plan.threshold);
  const auto online = store.validate_session(s[2].id);
  CHECK(offline.gold_errors == online.gold_errors);
  CHECK(offline.accepted == online.accepted);
}

TEST_CASE("test questions are exported separately") {
  TempDir tmp("export_test");
  StudyStore store(tmp.path.string());
  StudyPlan plan = random_plan(300, 150, 2);
  SamplingPlan test;
  test.m = 100;
  test.seed = 2;
  plan.test = test;
  plan.test_per_session = 50;
  const auto study = store.create_study(plan);
  const auto s = store.create_session(study);
  run_session(store, s, 0);
  const auto e = store.export_answers(study, {true});
  REQUIRE(e.size() == 1);
  CHECK(e[0].experimental.size() == 100);
  CHECK(e[0].test.size() == 50);
}

TEST_CASE("restart keeps every acknowledged answer and drops a torn tail") {
  TempDir tmp("recover");
  std::string study, id, token;
  fs::path log;
  {
    StudyStore store(tmp.path.string());
    study = store.create_study(random_plan(600, 200, 3));
    const auto s = store.create_session(study);
    id = s.id;
    token = s.token;
    for (std::size_t i = 1; i <= 37; ++i) store.submit_answer(id, token, i, i % 2 ? Choice::left : Choice::right, 500 + i);
    for (const auto& entry : fs::recursive_directory_iterator(tmp.path))
      if (entry.path().extension() == ".log") log = entry.path();
  }
  REQUIRE_FALSE(log.empty());
  const auto intact_size = fs::file_size(log);
  {
    std::ofstream torn(log, std::ios::app);
    torn << R"({"type":"answer","index":38,"cho)";
  }
  {
    StudyStore store(tmp.path.string());
    const auto info = store.session(id);
    CHECK(info.answered == 37);
    CHECK(fs::file_size(log) == intact_size);
    CHECK(store.next_question(id, token)["index"] == 38);
    // A retry of the last acknowledged answer is still recognised.
    CHECK(store.submit_answer(id, token, 37, Choice::left, 537).replay);
    CHECK(store.submit_answer(id, token, 38, Choice::right, 640).next_index == 39);
  }
  StudyStore reopened(tmp.path.string());
  CHECK(reopened.session(id).answered == 38);
  CHECK(reopened.studies() == std::vector<std::string>{study});
}

TEST_CASE("study slots run out") {
  TempDir tmp("slots");
  StudyStore store(tmp.path.string());
  const auto study = store.create_study(random_plan(300, 100, 2));
  store.create_session(study);
  store.create_session(study);
  CHECK(caught<Error>([&] { store.create_session(study); }).code() == ErrorCode::state);
}

TEST_CASE("HTTP API") {
  TempDir tmp("http");
  StudyStore store(tmp.path.string());
  fs::create_directories(tmp.path / "assets");
  std::ofstream(tmp.path / "assets" / "a.txt") << "pixel";
  HttpServer server(store, {"127.0.0.1", 0, (tmp.path / "assets").string()});
  const int port = server.bind();
  std::thread t([&] { server.serve(); });
  httplib::Client cli("127.0.0.1", port);

  auto plan_json = random_plan(300, 100, 3).to_json();
  auto r = cli.Post("/studies", plan_json.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 201);
  const auto created = json::parse(r->body);
  const std::string study = created["study_id"];
  CHECK(created["questions_per_session"] == 120);

  r = cli.Post("/studies", R"({"n_items": 10, "bogus": 1})", "application/json");
  CHECK(r->status == 400);
  CHECK(json::parse(r->body)["code"] == "validation");
  CHECK(cli.Post("/studies", "{not json", "application/json")->status == 400);

  r = cli.Post("/studies/" + study + "/sessions", "", "application/json");
  CHECK(r->status == 201);
  const auto session = json::parse(r->body);
  const std::string sid = session["session_id"], token = session["token"];

  r = cli.Get("/sessions/" + sid + "/next?token=" + token);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["index"] == 1);
  CHECK(cli.Get("/sessions/" + sid + "/next?token=bad")->status == 401);
  CHECK(cli.Get("/sessions/se-nothing/next?token=" + token)->status == 404);

  json answer{{"token", token}, {"index", 1}, {"choice", "left"}, {"response_ms", 812}};
  r = cli.Post("/sessions/" + sid + "/answers", answer.dump(), "application/json");
  CHECK(r->status == 200);
  CHECK(json::parse(r->body) == json{{"index", 1}, {"completed", false}, {"next_index", 2}, {"replay", false}});
  r = cli.Post("/sessions/" + sid + "/answers", answer.dump(), "application/json");
  CHECK(json::parse(r->body)["replay"] == true);

  answer["index"] = 3;
  r = cli.Post("/sessions/" + sid + "/answers", answer.dump(), "application/json");
  CHECK(r->status == 409);
  const auto err = json::parse(r->body);
  CHECK(err["code"] == "sequence");
  CHECK(err["expected_index"] == 2);
  CHECK(err.contains("expected_state"));

  answer["index"] = 2;
  answer["choice"] = "maybe";
  CHECK(cli.Post("/sessions/" + sid + "/answers", answer.dump(), "application/json")->status == 400);
  answer.erase("choice");
  CHECK(cli.Post("/sessions/" + sid + "/answers", answer.dump(), "application/json")->status == 400);

  r = cli.Get("/sessions/" + sid + "/validation");
  CHECK(r->status == 409);
  CHECK(json::parse(r->body)["code"] == "state");

  // Finish the session over HTTP with correct answers.
  const auto info = store.session(sid);
  const auto& plan = store.plan(study);
  const auto questions = plan_sessions(plan, plan.n_sessions, plan.seed)[info.slot].questions;
  for (std::size_t i = 2; i <= questions.size(); ++i) {
    json a{{"token", token},
           {"index", i},
           {"choice", to_string(correct(questions[i - 1]))},
           {"response_ms", 700.5}};
    r = cli.Post("/sessions/" + sid + "/answers", a.dump(), "application/json");
    REQUIRE(r->status == 200);
  }
  CHECK(json::parse(r->body)["completed"] == true);
  CHECK(json::parse(r->body)["next_index"].is_null());
  r = cli.Get("/sessions/" + sid + "/next?token=" + token);
  CHECK(r->status == 409);
  CHECK(json::parse(r->body)["code"] == "completed");

  r = cli.Get("/sessions/" + sid + "/validation");
  CHECK(json::parse(r->body)["accepted"] == true);

  r = cli.Get("/studies/" + study + "/export?filter=accepted");
  const auto exported = json::parse(r->body);
  REQUIRE(exported["sessions"].size() == 1);
  std::istringstream csv(exported["sessions"][0]["records"].get<std::string>());
  CHECK(read_records(csv, 100).size() == 100);
  CHECK(cli.Get("/studies/" + study + "/export?filter=some")->status == 400);

  r = cli.Get("/studies/" + study);
  CHECK(json::parse(r->body)["sessions"].size() == 1);
  r = cli.Get("/assets/a.txt");
  REQUIRE(r);
  CHECK(r->body == "pixel");

  server.stop();
  t.join();
}
