// Deterministic stand-in for a text-generation endpoint. Answers POST /generate
// with mock_llm_reply(prompt); `--port 0` binds a free port and prints it.
#include <atomic>
#include <iostream>

// relcat headers pull in Eigen, which must precede httplib (resolv.h defines _res).
#include "relcat/incontext.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

int main(int argc, char** argv) {
  CLI::App app{"mock text-generation server"};
  std::string host = "127.0.0.1";
  int port = 8089;
  int fail_every = 0;
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--fail-every", fail_every, "answer every Nth request with HTTP 503");
  CLI11_PARSE(app, argc, argv);

  httplib::Server server;
  std::atomic<int> seen{0};
  server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    if (fail_every > 0 && ++seen % fail_every == 0) {
      res.status = 503;
      return;
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const std::exception&) {
      res.status = 400;
      return;
    }
    nlohmann::ordered_json out;
    out["text"] = relcat::mock_llm_reply(body.value("prompt", ""));
    out["finish_reason"] = "stop";
    res.set_content(out.dump(), "application/json");
  });
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

  if (port == 0) port = server.bind_to_any_port(host);
  else if (!server.bind_to_port(host, port)) port = -1;
  if (port < 0) {
    std::cerr << "cannot bind " << host << "\n";
    return 1;
  }
  std::cout << port << std::endl;
  server.listen_after_bind();
  return 0;
}
