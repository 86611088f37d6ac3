// Stand-in external judge speaking the NDJSON wire protocol on
// stdin/stdout, or on one accepted TCP connection with --listen.
//
//   judge_stub [--fault none|wrong-id|garbage|silent|wrong-count] [--listen PORT]
//
// Generative infer requests are answered with the truth terms parsed from
// each caption, contrastive ones with loss 0 and every sample correct.

#include "rls3/prompt.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdio>
#include <iostream>
#include <string>
#include <functional>
#include <sstream>

namespace {

nlohmann::json answer(const nlohmann::json& req, const std::string& fault) {
  nlohmann::json resp;
  std::uint64_t id = req.value("id", std::uint64_t{0});
  resp["id"] = fault == "wrong-id" ? id + 1000 : id;
  const auto op = req.value("op", std::string{});
  if (op == "finetune") {
    resp["ok"] = true;
    return resp;
  }
  if (op != "infer") {
    resp["error"] = "unknown op";
    return resp;
  }
  const auto& samples = req.at("samples");
  if (req.value("mode", std::string{}) == "contrastive") {
    resp["loss"] = 0.0;
    resp["correct"] = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) resp["correct"].push_back(true);
    return resp;
  }
  resp["terms"] = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json terms = nlohmann::json::array();
    for (auto p : rls3::parse_caption(s.at("caption").get<std::string>()).terms.to_vector())
      terms.push_back(std::string(rls3::to_string(p)));
    resp["terms"].push_back(std::move(terms));
  }
  if (fault == "wrong-count" && !resp["terms"].empty()) resp["terms"].erase(resp["terms"].size() - 1);
  return resp;
}

void serve(std::istream& in, const std::function<void(const std::string&)>& emit, const std::string& fault) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (fault == "silent") continue;
    if (fault == "garbage") {
      emit("this is not json");
      continue;
    }
    try {
      emit(answer(nlohmann::json::parse(line), fault).dump());
    } catch (const std::exception& e) {
      emit(nlohmann::json{{"id", 0}, {"error", e.what()}}.dump());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NDJSON judge stub"};
  std::string fault = "none";
  int port = 0;
  app.add_option("--fault", fault)->check(CLI::IsMember({"none", "wrong-id", "garbage", "silent", "wrong-count"}));
  app.add_option("--listen", port, "serve one TCP connection on this port");
  CLI11_PARSE(app, argc, argv);

  if (port == 0) {
    serve(std::cin, [](const std::string& s) { std::cout << s << '\n' << std::flush; }, fault);
    return 0;
  }

  const int srv = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  ::setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(srv, 1) != 0) {
    std::perror("listen");
    return 2;
  }
  std::cout << "listening\n" << std::flush;
  const int fd = ::accept(srv, nullptr, nullptr);
  ::close(srv);
  if (fd < 0) return 2;
  std::string pending;
  char buf[4096];
  for (;;) {
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n <= 0) break;
    pending.append(buf, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = pending.find('\n')) != std::string::npos) {
      std::istringstream one_line(pending.substr(0, nl + 1));
      pending.erase(0, nl + 1);
      serve(one_line, [fd](const std::string& s) {
        const std::string out = s + "\n";
        (void)::send(fd, out.data(), out.size(), MSG_NOSIGNAL);
      }, fault);
    }
  }
  ::close(fd);
  return 0;
}
