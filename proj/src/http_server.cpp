#include <sstream>

#include "httplib.h"
#include "triad/service.hpp"

namespace triad::service {

// Routes:
//   POST /studies                       plan document -> {study_id, ...}
//   GET  /studies/{id}                  plan and session summaries
//   POST /studies/{id}/sessions         -> {session_id, token, total}
//   GET  /sessions/{id}/next?token=     question payload
//   POST /sessions/{id}/answers         {token, index, choice, response_ms} -> ack
//   GET  /sessions/{id}/validation      validation report
//   GET  /studies/{id}/export?filter=   accepted (default) | all
//   GET  /assets/...                    stimulus files

struct HttpServer::Impl {
  StudyStore& store;
  ServerOptions options;
  httplib::Server server;
  int port = 0;

  Impl(StudyStore& s, ServerOptions o) : store(s), options(std::move(o)) {}

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        const auto [status, body] = error_response(e);
        send_json(res, status, body);
      } catch (const json::exception& e) {
        send_json(res, 400, json{{"code", "protocol"}, {"message", e.what()}, {"expected_state", nullptr}});
      } catch (const std::exception& e) {
        send_json(res, 500, json{{"code", "internal"}, {"message", e.what()}, {"expected_state", nullptr}});
      }
    };
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::protocol, std::string("request body is not JSON: ") + e.what());
    }
  }

  static json session_json(const SessionInfo& s, bool with_token) {
    json j{{"session_id", s.id},       {"study_id", s.study},         {"slot", s.slot},
           {"state", to_string(s.state)}, {"answered", s.answered}, {"total", s.total},
           {"created_ms", s.created_ms}, {"updated_ms", s.updated_ms}};
    if (with_token) j["token"] = s.token;
    return j;
  }

  void routes() {
    server.Post("/studies", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto plan = StudyPlan::from_json(parse_body(req));
                  const auto id = store.create_study(plan);
                  send_json(res, 201,
                            json{{"study_id", id},
                                 {"n_sessions", plan.n_sessions},
                                 {"questions_per_session", plan.questions_per_session()}});
                }));
    server.Get(R"(/studies/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 json sessions = json::array();
                 for (const auto& s : store.sessions(id)) sessions.push_back(session_json(s, false));
                 send_json(res, 200, json{{"study_id", id}, {"plan", store.plan(id).to_json()}, {"sessions", sessions}});
               }));
    server.Post(R"(/studies/([^/]+)/sessions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto info = store.create_session(req.matches[1]);
                  send_json(res, 201, session_json(info, true));
                }));
    server.Get(R"(/sessions/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, store.next_question(req.matches[1], req.get_param_value("token")));
               }));
    server.Post(R"(/sessions/([^/]+)/answers)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  for (const char* key : {"token", "index", "choice", "response_ms"}) {
                    if (!body.contains(key)) throw Error(ErrorCode::protocol, std::string("missing field '") + key + "'");
                  }
                  if (!body["index"].is_number_integer() || body["index"].get<long long>() < 1) {
                    throw Error(ErrorCode::protocol, "index must be a positive integer");
                  }
                  if (!body["response_ms"].is_number()) throw Error(ErrorCode::protocol, "response_ms must be a number");
                  const auto ack = store.submit_answer(req.matches[1], body["token"].get<std::string>(),
                                                       body["index"].get<std::size_t>(),
                                                       choice_from_string(body["choice"].get<std::string>()),
                                                       body["response_ms"].get<double>());
                  send_json(res, 200,
                            json{{"index", ack.index},
                                 {"completed", ack.completed},
                                 {"next_index", ack.completed ? json(nullptr) : json(ack.next_index)},
                                 {"replay", ack.replay}});
                }));
    server.Get(R"(/sessions/([^/]+)/validation)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto r = store.validate_session(req.matches[1]);
                 send_json(res, 200,
                           json{{"gold_total", r.gold_total},
                                {"gold_errors", r.gold_errors},
                                {"error_rate", r.error_rate},
                                {"threshold", r.threshold},
                                {"accepted", r.accepted}});
               }));
    server.Get(R"(/studies/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string filter = req.has_param("filter") ? req.get_param_value("filter") : "accepted";
                 if (filter != "accepted" && filter != "all") {
                   throw Error(ErrorCode::protocol, "filter must be 'accepted' or 'all'");
                 }
                 json sessions = json::array();
                 for (const auto& e : store.export_answers(req.matches[1], {filter == "accepted"})) {
                   std::ostringstream main, test;
                   write_records(main, e.experimental);
                   json s{{"session_id", e.session},
                          {"completed", e.completed},
                          {"accepted", e.accepted},
                          {"records", main.str()},
                          {"test_records", nullptr}};
                   if (!e.test.empty()) {
                     write_records(test, e.test);
                     s["test_records"] = test.str();
                   }
                   sessions.push_back(s);
                 }
                 send_json(res, 200, json{{"study_id", req.matches[1]}, {"filter", filter}, {"sessions", sessions}});
               }));
    if (!options.assets_dir.empty()) server.set_mount_point("/assets", options.assets_dir);
  }
};

HttpServer::HttpServer(StudyStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
  impl_->routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  if (impl_->options.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->options.host);
  } else if (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) {
    impl_->port = impl_->options.port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port < 0) {
    throw Error(ErrorCode::io, "cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  return impl_->port;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace triad::service
