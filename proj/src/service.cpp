#include "triad/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "triad/rng.hpp"

namespace fs = std::filesystem;

namespace triad::service {

namespace {

[[noreturn]] void invalid(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::validation, where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) invalid(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) invalid(where + "." + key, "unknown key");
  }
}

std::uint64_t get_uint(const json& j, const std::string& where) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0)) {
    invalid(where, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

double get_number(const json& j, const std::string& where) {
  if (!j.is_number()) invalid(where, "expected a number");
  return j.get<double>();
}

std::string get_str(const json& j, const std::string& where) {
  if (!j.is_string()) invalid(where, "expected a string");
  return j.get<std::string>();
}

Triplet get_triplet(const json& j, const std::string& where) {
  Triplet t;
  t.anchor = static_cast<ItemId>(get_uint(j.at("anchor"), where + ".anchor"));
  t.left = static_cast<ItemId>(get_uint(j.at("left"), where + ".left"));
  t.right = static_cast<ItemId>(get_uint(j.at("right"), where + ".right"));
  return t;
}

json triplet_json(const Triplet& t) { return json{{"anchor", t.anchor}, {"left", t.left}, {"right", t.right}}; }

std::string random_hex(std::size_t chars) {
  static std::mutex m;
  static std::random_device rd;
  static std::mt19937_64 engine((std::uint64_t{rd()} << 32) ^ rd());
  std::lock_guard lock(m);
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < chars; ++i) out.push_back(digits[engine() & 15]);
  return out;
}

void fsync_path(const fs::path& p, bool directory) {
  const int fd = ::open(p.c_str(), directory ? O_RDONLY | O_DIRECTORY : O_RDONLY);
  if (fd < 0) throw Error(ErrorCode::io, "cannot open '" + p.string() + "' for sync");
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw Error(ErrorCode::io, "fsync failed for '" + p.string() + "'");
}

// Appends one line and syncs it to disk before returning.
void append_durable(const fs::path& p, const std::string& line) {
  const int fd = ::open(p.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw Error(ErrorCode::io, "cannot open '" + p.string() + "' for append");
  const std::string data = line + "\n";
  std::size_t written = 0;
  while (written < data.size()) {
    const auto rc = ::write(fd, data.data() + written, data.size() - written);
    if (rc < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::io, "write failed for '" + p.string() + "'");
    }
    written += static_cast<std::size_t>(rc);
  }
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw Error(ErrorCode::io, "fsync failed for '" + p.string() + "'");
}

void write_atomic(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed for '" + tmp.string() + "'");
  }
  fsync_path(tmp, false);
  fs::rename(tmp, p);
  fsync_path(p.parent_path(), true);
}

class StateError : public Error {
 public:
  StateError(std::string expected, const std::string& message)
      : Error(ErrorCode::state, message), expected_(std::move(expected)) {}
  const std::string& expected_state() const noexcept { return expected_; }

 private:
  std::string expected_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Plan documents

json sampling_plan_to_json(const SamplingPlan& p) {
  json j;
  j["strategy"] = to_string(p.strategy);
  j["seed"] = p.seed;
  switch (p.strategy) {
    case Strategy::random:
      j["m"] = p.m;
      break;
    case Strategy::repeated:
      j["m"] = p.m;
      j["l"] = p.l;
      break;
    case Strategy::landmark:
      if (!p.landmarks.empty()) j["landmarks"] = p.landmarks;
      if (p.random_landmarks) j["random_landmarks"] = p.random_landmarks;
      break;
  }
  if (p.cap) j["cap"] = *p.cap;
  return j;
}

SamplingPlan sampling_plan_from_json(const json& j, const std::string& where) {
  check_keys(j, where, {"strategy", "m", "l", "landmarks", "random_landmarks", "cap", "seed"});
  SamplingPlan p;
  if (!j.contains("strategy")) invalid(where + ".strategy", "required");
  try {
    p.strategy = strategy_from_string(get_str(j["strategy"], where + ".strategy"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::validation) throw;
    invalid(where + ".strategy", e.what());
  }
  if (j.contains("m")) p.m = get_uint(j["m"], where + ".m");
  if (j.contains("l")) p.l = get_uint(j["l"], where + ".l");
  if (j.contains("landmarks")) {
    if (!j["landmarks"].is_array()) invalid(where + ".landmarks", "expected an array");
    for (const auto& v : j["landmarks"]) p.landmarks.push_back(static_cast<ItemId>(get_uint(v, where + ".landmarks")));
  }
  if (j.contains("random_landmarks")) p.random_landmarks = get_uint(j["random_landmarks"], where + ".random_landmarks");
  if (j.contains("cap")) p.cap = get_uint(j["cap"], where + ".cap");
  if (j.contains("seed")) p.seed = get_uint(j["seed"], where + ".seed");
  return p;
}

StudyPlan StudyPlan::from_json(const json& j) {
  check_keys(j, "plan",
             {"name", "n_items", "assets", "strategy", "test", "session_length", "test_per_session", "gold_count",
              "gold", "timing", "n_sessions", "seed", "threshold", "session_ttl_s"});
  StudyPlan p;
  if (j.contains("name")) p.name = get_str(j["name"], "plan.name");
  if (!j.contains("n_items")) invalid("plan.n_items", "required");
  p.n_items = get_uint(j["n_items"], "plan.n_items");
  if (j.contains("assets")) {
    if (!j["assets"].is_array()) invalid("plan.assets", "expected an array");
    for (const auto& a : j["assets"]) p.assets.push_back(get_str(a, "plan.assets"));
  }
  if (!j.contains("strategy")) invalid("plan.strategy", "required");
  p.strategy = sampling_plan_from_json(j["strategy"], "plan.strategy");
  if (j.contains("test") && !j["test"].is_null()) p.test = sampling_plan_from_json(j["test"], "plan.test");
  if (j.contains("session_length")) p.session_length = get_uint(j["session_length"], "plan.session_length");
  if (j.contains("test_per_session")) p.test_per_session = get_uint(j["test_per_session"], "plan.test_per_session");
  if (j.contains("gold_count")) p.gold_count = get_uint(j["gold_count"], "plan.gold_count");
  if (j.contains("gold")) {
    if (!j["gold"].is_array()) invalid("plan.gold", "expected an array");
    for (std::size_t i = 0; i < j["gold"].size(); ++i) {
      const auto& g = j["gold"][i];
      const std::string where = "plan.gold[" + std::to_string(i) + "]";
      check_keys(g, where, {"anchor", "left", "right", "answer"});
      if (!g.contains("anchor") || !g.contains("left") || !g.contains("right") || !g.contains("answer")) {
        invalid(where, "needs anchor, left, right and answer");
      }
      GoldQuestion q;
      q.triplet = get_triplet(g, where);
      const auto a = get_uint(g["answer"], where + ".answer");
      if (a > 1) invalid(where + ".answer", "must be 0 or 1");
      q.answer = static_cast<std::uint8_t>(a);
      p.gold.push_back(q);
    }
  }
  if (j.contains("timing")) {
    const auto& t = j["timing"];
    check_keys(t, "plan.timing", {"timeout_ms", "fixation_ms", "break_interval", "grace_ms"});
    if (t.contains("timeout_ms")) p.timing.timeout_ms = static_cast<std::uint32_t>(get_uint(t["timeout_ms"], "plan.timing.timeout_ms"));
    if (t.contains("fixation_ms")) p.timing.fixation_ms = static_cast<std::uint32_t>(get_uint(t["fixation_ms"], "plan.timing.fixation_ms"));
    if (t.contains("break_interval")) p.timing.break_interval = static_cast<std::uint32_t>(get_uint(t["break_interval"], "plan.timing.break_interval"));
    if (t.contains("grace_ms")) p.timing.grace_ms = static_cast<std::uint32_t>(get_uint(t["grace_ms"], "plan.timing.grace_ms"));
  }
  if (j.contains("n_sessions")) p.n_sessions = get_uint(j["n_sessions"], "plan.n_sessions");
  if (j.contains("seed")) p.seed = get_uint(j["seed"], "plan.seed");
  if (j.contains("threshold")) p.threshold = get_number(j["threshold"], "plan.threshold");
  if (j.contains("session_ttl_s") && !j["session_ttl_s"].is_null()) p.session_ttl_s = get_uint(j["session_ttl_s"], "plan.session_ttl_s");
  p.validate();
  return p;
}

json StudyPlan::to_json() const {
  json j;
  j["name"] = name;
  j["n_items"] = n_items;
  if (!assets.empty()) j["assets"] = assets;
  j["strategy"] = sampling_plan_to_json(strategy);
  if (test) j["test"] = sampling_plan_to_json(*test);
  j["session_length"] = session_length;
  j["test_per_session"] = test_per_session;
  j["gold_count"] = gold_count;
  json g = json::array();
  for (const auto& q : gold) {
    g.push_back(json{{"anchor", q.triplet.anchor}, {"left", q.triplet.left}, {"right", q.triplet.right}, {"answer", q.answer}});
  }
  j["gold"] = g;
  j["timing"] = json{{"timeout_ms", timing.timeout_ms},
                     {"fixation_ms", timing.fixation_ms},
                     {"break_interval", timing.break_interval},
                     {"grace_ms", timing.grace_ms}};
  j["n_sessions"] = n_sessions;
  j["seed"] = seed;
  j["threshold"] = threshold;
  if (session_ttl_s) j["session_ttl_s"] = *session_ttl_s;
  return j;
}

void StudyPlan::validate() const {
  if (n_items < 3) invalid("plan.n_items", "need at least 3 items");
  if (!assets.empty() && assets.size() != n_items) {
    invalid("plan.assets", "expected one asset per item (" + std::to_string(n_items) + "), got " + std::to_string(assets.size()));
  }
  for (const auto& a : assets) {
    if (a.empty() || a.front() == '/' || a.find("..") != std::string::npos) {
      invalid("plan.assets", "asset paths must be relative and stay inside the asset root: '" + a + "'");
    }
  }
  try {
    strategy.validate(n_items);
    if (test) test->validate(n_items);
  } catch (const Error& e) {
    invalid("plan.strategy", e.what());
  }
  if (session_length == 0) invalid("plan.session_length", "must be >= 1");
  if (test_per_session >= session_length) invalid("plan.test_per_session", "must be smaller than session_length");
  if (test_per_session > 0 && !test) invalid("plan.test", "test_per_session needs a test plan");
  if (gold_count > session_length) invalid("plan.gold_count", "must not exceed session_length");
  if (gold.size() < gold_count) {
    invalid("plan.gold", "need at least gold_count=" + std::to_string(gold_count) + " gold questions, got " +
                             std::to_string(gold.size()));
  }
  std::unordered_set<QuestionKey, QuestionKeyHash> keys;
  for (const auto& g : gold) {
    try {
      g.triplet.validate(n_items);
    } catch (const Error& e) {
      invalid("plan.gold", e.what());
    }
    if (!keys.insert(QuestionKey::of(g.triplet)).second) invalid("plan.gold", "duplicate gold question");
  }
  if (timing.timeout_ms == 0) invalid("plan.timing.timeout_ms", "must be >= 1");
  if (timing.break_interval == 0) invalid("plan.timing.break_interval", "must be >= 1");
  if (n_sessions == 0) invalid("plan.n_sessions", "must be >= 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) invalid("plan.threshold", "must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// Planning

std::string to_string(QuestionKind k) {
  switch (k) {
    case QuestionKind::experimental:
      return "experimental";
    case QuestionKind::test:
      return "test";
    case QuestionKind::gold:
      return "gold";
  }
  return "experimental";
}

namespace {

using KeySet = std::unordered_set<QuestionKey, QuestionKeyHash>;

// Uniform questions avoiding `excluded`.
std::vector<Triplet> draw_avoiding(std::size_t n, std::size_t count, const KeySet& excluded, Rng& rng) {
  std::vector<Triplet> out;
  out.reserve(count);
  while (out.size() < count) {
    const auto t = sample_random(n, 1, rng).front();
    if (!excluded.contains(QuestionKey::of(t))) out.push_back(t);
  }
  return out;
}

// Strategy output with gold questions kept out.
std::vector<Triplet> strategy_questions(const SamplingPlan& p, std::size_t n, const KeySet& gold) {
  if (p.strategy == Strategy::random) {
    Rng rng(p.seed, Stream::triplets);
    return draw_avoiding(n, p.m, gold, rng);
  }
  auto out = execute_plan(p, n);
  std::erase_if(out, [&](const Triplet& t) { return gold.contains(QuestionKey::of(t)); });
  return out;
}

[[noreturn]] void shortfall(const std::string& what, std::size_t need, std::size_t have) {
  throw Error(ErrorCode::planning, what + ": need " + std::to_string(need) + ", have " + std::to_string(have) +
                                       " (short by " + std::to_string(need - have) + ")");
}

}  // namespace

std::vector<SessionTemplate> plan_sessions(const StudyPlan& plan, std::size_t n_sessions, std::uint64_t seed) {
  plan.validate();
  if (n_sessions == 0) throw Error(ErrorCode::planning, "need at least one session");
  const std::size_t n = plan.n_items;
  const std::size_t per_exp = plan.session_length - plan.test_per_session;

  KeySet gold_keys;
  for (const auto& g : plan.gold) gold_keys.insert(QuestionKey::of(g.triplet));

  // Experimental questions for each session slot.
  std::vector<std::vector<Triplet>> exp(n_sessions);
  if (plan.strategy.strategy == Strategy::repeated) {
    // Each base chunk is asked l times, in a fresh order per session.
    const std::size_t l = plan.strategy.l;
    Rng rng(plan.strategy.seed, Stream::triplets);
    const auto base = draw_avoiding(n, plan.strategy.m / l, gold_keys, rng);
    const std::size_t chunks = base.size() / per_exp;
    const std::size_t need_chunks = (n_sessions + l - 1) / l;
    if (chunks < need_chunks) {
      shortfall("repeated base questions for " + std::to_string(n_sessions) + " sessions", need_chunks * per_exp,
                base.size());
    }
    for (std::size_t s = 0; s < n_sessions; ++s) {
      const std::size_t c = s / l;
      exp[s].assign(base.begin() + static_cast<std::ptrdiff_t>(c * per_exp),
                    base.begin() + static_cast<std::ptrdiff_t>((c + 1) * per_exp));
      Rng order(seed, Stream::shuffle, s);
      order.shuffle(exp[s]);
    }
  } else {
    const auto all = strategy_questions(plan.strategy, n, gold_keys);
    if (all.size() < n_sessions * per_exp) {
      shortfall("experimental questions for " + std::to_string(n_sessions) + " sessions of " + std::to_string(per_exp),
                n_sessions * per_exp, all.size());
    }
    for (std::size_t s = 0; s < n_sessions; ++s) {
      exp[s].assign(all.begin() + static_cast<std::ptrdiff_t>(s * per_exp),
                    all.begin() + static_cast<std::ptrdiff_t>((s + 1) * per_exp));
    }
  }

  std::vector<std::vector<Triplet>> tests(n_sessions);
  if (plan.test_per_session > 0) {
    const auto all = strategy_questions(*plan.test, n, gold_keys);
    if (all.size() < n_sessions * plan.test_per_session) {
      shortfall("test questions for " + std::to_string(n_sessions) + " sessions of " +
                    std::to_string(plan.test_per_session),
                n_sessions * plan.test_per_session, all.size());
    }
    for (std::size_t s = 0; s < n_sessions; ++s) {
      tests[s].assign(all.begin() + static_cast<std::ptrdiff_t>(s * plan.test_per_session),
                      all.begin() + static_cast<std::ptrdiff_t>((s + 1) * plan.test_per_session));
    }
  }

  std::vector<SessionTemplate> out(n_sessions);
  for (std::size_t s = 0; s < n_sessions; ++s) {
    std::vector<Question> body;
    body.reserve(plan.session_length);
    for (const auto& t : exp[s]) body.push_back({t, QuestionKind::experimental, 0});
    for (const auto& t : tests[s]) body.push_back({t, QuestionKind::test, 0});
    if (!tests[s].empty()) {
      Rng mix(seed, Stream::shuffle, (std::uint64_t{1} << 32) | s);
      mix.shuffle(body);
    }

    // Gold questions at uniform random positions of the final sequence.
    Rng gold_rng(seed, Stream::gold, s);
    const auto picks = gold_rng.sample_without_replacement(plan.gold.size(), plan.gold_count);
    const std::size_t total = body.size() + plan.gold_count;
    auto positions = gold_rng.sample_without_replacement(total, plan.gold_count);
    std::sort(positions.begin(), positions.end());
    std::vector<Question> seq;
    seq.reserve(total);
    std::size_t next_body = 0, next_gold = 0;
    for (std::size_t pos = 0; pos < total; ++pos) {
      if (next_gold < positions.size() && positions[next_gold] == pos) {
        const auto& g = plan.gold[picks[next_gold]];
        seq.push_back({g.triplet, QuestionKind::gold, g.answer});
        ++next_gold;
      } else {
        seq.push_back(body[next_body++]);
      }
    }

    // Left/right counterbalancing.
    Rng side(seed, Stream::presentation, s);
    for (auto& q : seq) {
      if (side.bernoulli(0.5)) {
        q.triplet = q.triplet.swapped();
        if (q.kind == QuestionKind::gold) q.gold_answer = static_cast<std::uint8_t>(1 - q.gold_answer);
      }
    }
    out[s] = {s, std::move(seq)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Answers and validation

std::string to_string(Choice c) {
  switch (c) {
    case Choice::left:
      return "left";
    case Choice::right:
      return "right";
    case Choice::timeout:
      return "timeout";
  }
  return "left";
}

Choice choice_from_string(const std::string& s) {
  if (s == "left") return Choice::left;
  if (s == "right") return Choice::right;
  if (s == "timeout") return Choice::timeout;
  throw Error(ErrorCode::protocol, "choice must be left, right or timeout, got '" + s + "'");
}

std::string to_string(SessionState s) {
  switch (s) {
    case SessionState::created:
      return "created";
    case SessionState::active:
      return "active";
    case SessionState::completed:
      return "completed";
    case SessionState::expired:
      return "expired";
  }
  return "created";
}

ValidationReport validate_answers(const std::vector<Question>& questions, const std::vector<StoredAnswer>& answers,
                                  double threshold) {
  ValidationReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    if (q.kind != QuestionKind::gold) continue;
    ++r.gold_total;
    if (i >= answers.size()) {
      ++r.gold_errors;
      continue;
    }
    const auto& a = answers[i];
    const bool correct = (a.choice == Choice::left && q.gold_answer == 1) || (a.choice == Choice::right && q.gold_answer == 0);
    if (!correct) ++r.gold_errors;
  }
  r.error_rate = r.gold_total ? static_cast<double>(r.gold_errors) / static_cast<double>(r.gold_total) : 0.0;
  // Compare counts, not rounded rates: exactly at the threshold passes.
  r.accepted = static_cast<double>(r.gold_errors) <= threshold * static_cast<double>(r.gold_total) + 1e-9;
  return r;
}

// ---------------------------------------------------------------------------
// Store

struct StudyStore::Session {
  std::string id;
  std::string token;
  std::string study;
  std::size_t slot = 0;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::vector<StoredAnswer> answers;
  const std::vector<Question>* questions = nullptr;
  fs::path log;
  mutable std::mutex mutex;
};

struct StudyStore::Study {
  std::string id;
  StudyPlan plan;
  std::vector<SessionTemplate> templates;
  std::vector<std::unique_ptr<Session>> sessions;
  fs::path dir;
};

std::int64_t StudyStore::now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

StudyStore::StudyStore(std::string data_dir) : dir_(std::move(data_dir)) {
  fs::create_directories(fs::path(dir_) / "studies");
  load();
}

StudyStore::~StudyStore() = default;

void StudyStore::load() {
  const fs::path root = fs::path(dir_) / "studies";
  std::vector<fs::path> study_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) study_dirs.push_back(entry.path());
  }
  std::sort(study_dirs.begin(), study_dirs.end());
  for (const auto& sd : study_dirs) {
    const fs::path plan_path = sd / "plan.json";
    if (!fs::exists(plan_path)) continue;
    std::ifstream in(plan_path);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::io, plan_path.string() + ": " + e.what());
    }
    auto study = std::make_unique<Study>();
    study->id = sd.filename().string();
    study->plan = StudyPlan::from_json(doc);
    study->templates = plan_sessions(study->plan, study->plan.n_sessions, study->plan.seed);
    study->dir = sd;
    std::vector<fs::path> logs;
    if (fs::exists(sd / "sessions")) {
      for (const auto& entry : fs::directory_iterator(sd / "sessions")) {
        if (entry.path().extension() == ".log") logs.push_back(entry.path());
      }
    }
    std::sort(logs.begin(), logs.end());
    auto& ref = *study;
    studies_[study->id] = std::move(study);
    for (const auto& log : logs) load_session_log(ref, log.string());
    std::sort(ref.sessions.begin(), ref.sessions.end(),
              [](const auto& a, const auto& b) { return a->slot < b->slot; });
  }
}

void StudyStore::load_session_log(Study& study, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto session = std::make_unique<Session>();
  session->log = path;
  std::size_t good_end = 0, pos = 0;
  bool header = false;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail without newline
    const std::string line = content.substr(pos, nl - pos);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      break;
    }
    const std::string type = j.value("type", "");
    if (!header) {
      if (type != "session") break;
      session->id = j.at("id").get<std::string>();
      session->token = j.at("token").get<std::string>();
      session->study = study.id;
      session->slot = j.at("slot").get<std::size_t>();
      session->created_ms = j.at("created_ms").get<std::int64_t>();
      session->updated_ms = session->created_ms;
      header = true;
    } else if (type == "answer") {
      StoredAnswer a;
      a.index = j.at("index").get<std::size_t>();
      a.choice = choice_from_string(j.at("choice").get<std::string>());
      a.response_ms = j.at("response_ms").get<double>();
      a.at_ms = j.at("at_ms").get<std::int64_t>();
      if (a.index != session->answers.size() + 1) break;
      session->answers.push_back(a);
      session->updated_ms = a.at_ms;
    } else {
      break;
    }
    pos = nl + 1;
    good_end = pos;
  }
  if (good_end < content.size()) fs::resize_file(path, good_end);
  if (!header) return;
  if (session->slot >= study.templates.size()) {
    throw Error(ErrorCode::io, path + ": session slot " + std::to_string(session->slot) + " outside the plan");
  }
  session->questions = &study.templates[session->slot].questions;
  if (session->answers.size() > session->questions->size()) session->answers.resize(session->questions->size());
  sessions_[session->id] = session.get();
  study.sessions.push_back(std::move(session));
}

std::string StudyStore::create_study(const StudyPlan& plan) {
  auto study = std::make_unique<Study>();
  study->plan = plan;
  study->templates = plan_sessions(plan, plan.n_sessions, plan.seed);
  std::unique_lock lock(mutex_);
  do {
    study->id = "st-" + random_hex(12);
  } while (studies_.contains(study->id));
  study->dir = fs::path(dir_) / "studies" / study->id;
  fs::create_directories(study->dir / "sessions");
  write_atomic(study->dir / "plan.json", plan.to_json().dump(2) + "\n");
  fsync_path(study->dir.parent_path(), true);
  const auto id = study->id;
  studies_[id] = std::move(study);
  return id;
}

StudyStore::Study& StudyStore::study_ref(const std::string& id) const {
  const auto it = studies_.find(id);
  if (it == studies_.end()) throw Error(ErrorCode::not_found, "unknown study '" + id + "'");
  return *it->second;
}

StudyStore::Session& StudyStore::session_ref(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::not_found, "unknown session '" + id + "'");
  return *it->second;
}

const StudyPlan& StudyStore::plan(const std::string& study) const {
  std::shared_lock lock(mutex_);
  return study_ref(study).plan;
}

std::vector<std::string> StudyStore::studies() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : studies_) out.push_back(id);
  return out;
}

SessionState StudyStore::state_of(const Session& s) const {
  if (s.answers.size() >= s.questions->size()) return SessionState::completed;
  const auto& plan = study_ref(s.study).plan;
  if (plan.session_ttl_s && now_ms() - s.created_ms > static_cast<std::int64_t>(*plan.session_ttl_s) * 1000) {
    return SessionState::expired;
  }
  return s.answers.empty() ? SessionState::created : SessionState::active;
}

namespace {

SessionInfo info_of(const std::string& id, const std::string& token, const std::string& study, std::size_t slot,
                    SessionState state, std::size_t answered, std::size_t total, std::int64_t created,
                    std::int64_t updated) {
  return {id, token, study, slot, state, answered, total, created, updated};
}

}  // namespace

std::vector<SessionInfo> StudyStore::sessions(const std::string& study) const {
  std::shared_lock lock(mutex_);
  std::vector<SessionInfo> out;
  for (const auto& s : study_ref(study).sessions) {
    std::lock_guard sl(s->mutex);
    out.push_back(info_of(s->id, s->token, s->study, s->slot, state_of(*s), s->answers.size(), s->questions->size(),
                          s->created_ms, s->updated_ms));
  }
  return out;
}

SessionInfo StudyStore::create_session(const std::string& study_id) {
  std::unique_lock lock(mutex_);
  auto& study = study_ref(study_id);
  if (study.sessions.size() >= study.templates.size()) {
    throw StateError("open slot", "study '" + study_id + "' has no free session slot (all " +
                                      std::to_string(study.templates.size()) + " assigned)");
  }
  auto s = std::make_unique<Session>();
  do {
    s->id = "se-" + random_hex(16);
  } while (sessions_.contains(s->id));
  s->token = random_hex(32);
  s->study = study_id;
  s->slot = study.sessions.size();
  s->created_ms = now_ms();
  s->updated_ms = s->created_ms;
  s->questions = &study.templates[s->slot].questions;
  s->log = study.dir / "sessions" / (s->id + ".log");
  append_durable(s->log, json{{"type", "session"},
                              {"id", s->id},
                              {"token", s->token},
                              {"slot", s->slot},
                              {"created_ms", s->created_ms}}
                             .dump());
  fsync_path(s->log.parent_path(), true);
  const auto info = info_of(s->id, s->token, s->study, s->slot, SessionState::created, 0, s->questions->size(),
                            s->created_ms, s->updated_ms);
  sessions_[s->id] = s.get();
  study.sessions.push_back(std::move(s));
  return info;
}

SessionInfo StudyStore::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto& s = session_ref(session_id);
  std::lock_guard sl(s.mutex);
  return info_of(s.id, s.token, s.study, s.slot, state_of(s), s.answers.size(), s.questions->size(), s.created_ms,
                 s.updated_ms);
}

json StudyStore::next_question(const std::string& session_id, const std::string& token) {
  std::shared_lock lock(mutex_);
  auto& s = session_ref(session_id);
  if (token != s.token) throw Error(ErrorCode::unauthorized, "invalid token for session '" + session_id + "'");
  std::lock_guard sl(s.mutex);
  const auto state = state_of(s);
  const auto& plan = study_ref(s.study).plan;
  if (state == SessionState::completed) throw Error(ErrorCode::completed, "session '" + session_id + "' is complete");
  if (state == SessionState::expired) throw StateError("active", "session '" + session_id + "' has expired");
  const std::size_t index = s.answers.size() + 1;
  const auto& q = (*s.questions)[index - 1];
  json payload;
  payload["session"] = s.id;
  payload["index"] = index;
  payload["total"] = s.questions->size();
  payload["answered"] = s.answers.size();
  payload["triplet"] = triplet_json(q.triplet);
  if (!plan.assets.empty()) {
    payload["stimuli"] = json{{"anchor", "/assets/" + plan.assets[q.triplet.anchor]},
                              {"left", "/assets/" + plan.assets[q.triplet.left]},
                              {"right", "/assets/" + plan.assets[q.triplet.right]}};
  }
  payload["timing"] = json{{"timeout_ms", plan.timing.timeout_ms}, {"fixation_ms", plan.timing.fixation_ms}};
  payload["break"] = index % plan.timing.break_interval == 0;
  payload["state"] = to_string(state);
  return payload;
}

Ack StudyStore::submit_answer(const std::string& session_id, const std::string& token, std::size_t index,
                              Choice choice, double response_ms) {
  std::shared_lock lock(mutex_);
  auto& s = session_ref(session_id);
  if (token != s.token) throw Error(ErrorCode::unauthorized, "invalid token for session '" + session_id + "'");
  std::lock_guard sl(s.mutex);
  const auto& plan = study_ref(s.study).plan;
  const std::size_t total = s.questions->size();
  StoredAnswer a{index, choice, response_ms, now_ms()};

  auto ack_for = [&](std::size_t i, bool replay) {
    Ack ack;
    ack.index = i;
    ack.completed = i >= total;
    ack.next_index = ack.completed ? 0 : i + 1;
    ack.replay = replay;
    return ack;
  };

  if (index >= 1 && index <= s.answers.size()) {
    if (s.answers[index - 1].same_payload(a)) return ack_for(index, true);
    throw Error(ErrorCode::conflict, "question " + std::to_string(index) + " already has a different answer");
  }
  const auto state = state_of(s);
  if (state == SessionState::completed) throw Error(ErrorCode::completed, "session '" + session_id + "' is complete");
  if (state == SessionState::expired) throw StateError("active", "session '" + session_id + "' has expired");
  const std::size_t expected = s.answers.size() + 1;
  if (index != expected) {
    throw SequenceError(expected, "expected answer for question " + std::to_string(expected) + ", got " +
                                      std::to_string(index));
  }
  if (!std::isfinite(response_ms) || response_ms < 0.0) {
    throw Error(ErrorCode::protocol, "response_ms must be a finite non-negative number");
  }
  if (response_ms > static_cast<double>(plan.timing.timeout_ms) + plan.timing.grace_ms) {
    throw Error(ErrorCode::protocol, "response_ms " + std::to_string(response_ms) + " exceeds timeout " +
                                         std::to_string(plan.timing.timeout_ms) + " ms plus grace");
  }
  if (choice == Choice::timeout && response_ms < plan.timing.timeout_ms) {
    throw Error(ErrorCode::protocol, "timeout submitted after only " + std::to_string(response_ms) + " ms");
  }
  append_durable(s.log, json{{"type", "answer"},
                             {"index", a.index},
                             {"choice", to_string(a.choice)},
                             {"response_ms", a.response_ms},
                             {"at_ms", a.at_ms}}
                            .dump());
  s.answers.push_back(a);
  s.updated_ms = a.at_ms;
  return ack_for(index, false);
}

ValidationReport StudyStore::validate_session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto& s = session_ref(session_id);
  std::lock_guard sl(s.mutex);
  if (s.answers.size() < s.questions->size()) {
    throw StateError("completed", "session '" + session_id + "' is incomplete (" + std::to_string(s.answers.size()) +
                                      "/" + std::to_string(s.questions->size()) + " answered)");
  }
  return validate_answers(*s.questions, s.answers, study_ref(s.study).plan.threshold);
}

std::vector<SessionExport> StudyStore::export_answers(const std::string& study_id, ExportFilter filter) const {
  std::shared_lock lock(mutex_);
  const auto& study = study_ref(study_id);
  const auto items = std::make_shared<const ItemSet>(study.plan.n_items);
  std::vector<SessionExport> out;
  for (const auto& s : study.sessions) {
    std::lock_guard sl(s->mutex);
    SessionExport e{s->id, false, false, AnswerSet(items, "session:" + s->id), AnswerSet(items, "session:" + s->id + "#test")};
    e.completed = s->answers.size() >= s->questions->size();
    if (e.completed) e.accepted = validate_answers(*s->questions, s->answers, study.plan.threshold).accepted;
    if (filter.accepted_only && !e.accepted) continue;
    if (s->answers.empty()) continue;
    for (std::size_t i = 0; i < s->answers.size(); ++i) {
      const auto& q = (*s->questions)[i];
      const auto& a = s->answers[i];
      if (q.kind == QuestionKind::gold || a.choice == Choice::timeout) continue;
      Answer ans{static_cast<std::uint8_t>(a.choice == Choice::left ? 1 : 0), a.response_ms, "session:" + s->id};
      (q.kind == QuestionKind::test ? e.test : e.experimental).add(q.triplet, ans);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> StudyStore::export_to_directory(const std::string& study, ExportFilter filter,
                                                         const std::string& dir) const {
  fs::create_directories(dir);
  std::vector<std::string> files;
  for (const auto& e : export_answers(study, filter)) {
    const auto main = (fs::path(dir) / (e.session + ".csv")).string();
    write_records(main, e.experimental);
    files.push_back(main);
    if (!e.test.empty()) {
      const auto test = (fs::path(dir) / (e.session + "_test.csv")).string();
      write_records(test, e.test);
      files.push_back(test);
    }
  }
  return files;
}

// ---------------------------------------------------------------------------

std::pair<int, json> error_response(const Error& e) {
  int status = 400;
  std::string expected_state;
  switch (e.code()) {
    case ErrorCode::not_found:
      status = 404;
      break;
    case ErrorCode::unauthorized:
      status = 401;
      break;
    case ErrorCode::completed:
      status = 409;
      expected_state = "active";
      break;
    case ErrorCode::sequence:
    case ErrorCode::conflict:
      status = 409;
      break;
    case ErrorCode::state:
      status = 409;
      break;
    case ErrorCode::io:
      status = 500;
      break;
    default:
      status = 400;
      break;
  }
  json body{{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
  if (const auto* seq = dynamic_cast<const SequenceError*>(&e)) {
    body["expected_index"] = seq->expected();
    expected_state = "awaiting question " + std::to_string(seq->expected());
  }
  if (const auto* st = dynamic_cast<const StateError*>(&e)) expected_state = st->expected_state();
  body["expected_state"] = expected_state.empty() ? json(nullptr) : json(expected_state);
  return {status, body};
}

}  // namespace triad::service
