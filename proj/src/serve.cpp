#include "ccic/serve.hpp"

#include <chrono>

#include <httplib.h>

#include "ccic/log.hpp"
#include "ccic/rbes.hpp"

namespace ccic::serve {

using nlohmann::json;

namespace {

Response error(int status, const std::string& message) { return {status, {{"error", message}}}; }

// Maps library errors onto HTTP status codes.
template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const NotFoundError& e) {
    return error(404, e.what());
  } catch (const ConflictError& e) {
    return error(409, e.what());
  } catch (const json::exception& e) {
    return error(400, std::string("malformed request: ") + e.what());
  } catch (const PreconditionError& e) {
    return error(400, e.what());
  } catch (const ParseError& e) {
    return error(400, e.what());
  } catch (const Error& e) {
    return error(500, e.what());
  }
}

json parse_body(const std::string& body) {
  auto j = json::parse(body);
  if (!j.is_object()) throw PreconditionError("request body must be a JSON object");
  return j;
}

}  // namespace

bool Session::step() {
  std::lock_guard lock(mu_);
  if (runner_->finished()) return false;
  runner_->step();
  return true;
}

void Session::run_paced(double speed, const std::atomic<bool>& stop) {
  using clock = std::chrono::steady_clock;
  const double dt = with([](scenario::Runner& r) { return r.script().dt; });
  auto next = clock::now();
  while (!stop && step()) {
    if (speed <= 0.0) continue;
    next += std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(dt / speed));
    std::this_thread::sleep_until(next);
  }
}

Response get_picture(Session& s) {
  return guarded([&] { return Response{200, s.with([](scenario::Runner& r) { return r.picture(); })}; });
}

Response get_advisories(Session& s, const std::string& site) {
  return guarded([&] {
    return Response{200, s.with([&](scenario::Runner& r) {
                      if (!r.has_site(site)) throw NotFoundError("unknown site '" + site + "'");
                      json out = json::array();
                      for (const auto& a : r.local_node(site).advisories()) out.push_back(rbes::to_json(a));
                      return out;
                    })};
  });
}

Response post_action(Session& s, const std::string& site, const std::string& body) {
  return guarded([&] {
    auto j = parse_body(body);
    if (!j.contains("site_id")) j["site_id"] = site;
    auto action = operator_action_from_json(j);
    if (action.site_id != site) throw PreconditionError("body site_id '" + action.site_id + "' does not match the URL");
    return Response{200, s.with([&](scenario::Runner& r) {
                      if (!r.has_site(site)) throw NotFoundError("unknown site '" + site + "'");
                      auto out = r.operator_action(action);
                      return out.event;
                    })};
  });
}

Response post_command(Session& s, const std::string& body) {
  return guarded([&] {
    auto j = parse_body(body);
    if (!j.contains("mode")) j["mode"] = "manual";
    auto command = command_from_json(j);
    if (command.mode != CommandMode::manual) throw PreconditionError("the console issues manual commands only");
    return Response{200, s.with([&](scenario::Runner& r) {
                      if (!r.community_node()) throw NotFoundError("the community layer is not running");
                      return to_json(r.community_command(command));
                    })};
  });
}

Response get_log(Session& s, const std::string& since) {
  return guarded([&] {
    std::size_t from = 0;
    if (!since.empty()) {
      std::size_t used = 0;
      long long v = -1;
      try {
        v = std::stoll(since, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != since.size() || v < 0) throw PreconditionError("'since' must be a non-negative integer");
      from = static_cast<std::size_t>(v);
    }
    return Response{200, s.with([&](scenario::Runner& r) {
                      json records = json::array();
                      for (const auto& rec : r.timeline().since(from)) records.push_back(events::to_json(rec));
                      return json{{"since", from}, {"next", r.timeline().size()}, {"records", records}};
                    })};
  });
}

struct ApiServer::Impl {
  explicit Impl(Session& s) : session(s) {}
  Session& session;
  httplib::Server server;
  std::atomic<bool> stopping{false};
};

namespace {

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

ApiServer::ApiServer(Session& session) : impl_(std::make_unique<Impl>(session)) {
  auto& srv = impl_->server;
  Impl* impl = impl_.get();
  srv.Get("/api/v1/picture", [impl](const httplib::Request&, httplib::Response& res) {
    reply(res, get_picture(impl->session));
  });
  srv.Get(R"(/api/v1/sites/([^/]+)/advisories)", [impl](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_advisories(impl->session, req.matches[1]));
  });
  srv.Post(R"(/api/v1/sites/([^/]+)/actions)", [impl](const httplib::Request& req, httplib::Response& res) {
    reply(res, post_action(impl->session, req.matches[1], req.body));
  });
  srv.Post("/api/v1/community/commands", [impl](const httplib::Request& req, httplib::Response& res) {
    reply(res, post_command(impl->session, req.body));
  });
  srv.Get("/api/v1/log", [impl](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_log(impl->session, req.has_param("since") ? req.get_param_value("since") : ""));
  });
  srv.Get("/api/v1/stream", [impl](const httplib::Request& req, httplib::Response& res) {
    auto next = std::make_shared<std::size_t>(0);
    if (req.has_param("since")) {
      const auto r = get_log(impl->session, req.get_param_value("since"));
      if (r.status != 200) return reply(res, r);
      *next = r.body.at("since").get<std::size_t>();
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [impl, next](std::size_t, httplib::DataSink& sink) {
      if (impl->stopping) return false;
      const auto batch =
          impl->session.with([&](scenario::Runner& r) { return r.timeline().since(*next); });
      if (batch.empty()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        return sink.is_writable();
      }
      for (const auto& rec : batch) {
        const auto frame = "id: " + std::to_string((*next)++) + "\ndata: " + events::to_json(rec).dump() + "\n\n";
        if (!sink.write(frame.data(), frame.size())) return false;
      }
      return true;
    });
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) res.set_content(json{{"error", "no such endpoint"}}.dump(), "application/json");
  });
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  port_ = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw Error("cannot listen on " + host + ":" + std::to_string(port) + " (port busy?)");
  thread_ = std::thread([&srv] { srv.listen_after_bind(); });
  logger()->info("serving console API on {}:{}", host, port_);
}

void ApiServer::stop() {
  impl_->stopping = true;
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace ccic::serve
