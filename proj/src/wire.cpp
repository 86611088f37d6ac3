#include "rls3/wire.hpp"

#include "rls3/digest.hpp"

#include <arpa/inet.h>
#include <csignal>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>

namespace rls3 {

namespace {

class FdTransport : public WireTransport {
 public:
  void send_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = write_some(buf.data() + off, buf.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw WireClosed(std::string("write to judge endpoint failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = pending_.find('\n'); nl != std::string::npos) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw WireTimeout("judge endpoint did not answer within " + std::to_string(timeout.count()) + " ms");
      pollfd p{read_fd(), POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw WireClosed(std::string("poll failed: ") + std::strerror(errno));
      }
      if (r == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(read_fd(), chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw WireClosed(std::string("read from judge endpoint failed: ") + std::strerror(errno));
      }
      if (n == 0) throw WireClosed("judge endpoint closed the stream");
      pending_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  virtual int read_fd() const = 0;
  virtual ssize_t write_some(const char* data, std::size_t size) = 0;

 private:
  std::string pending_;
};

class ProcessTransport final : public FdTransport {
 public:
  explicit ProcessTransport(const std::string& command) {
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw WireError("pipe() failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw WireError("pipe() failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) throw WireError("fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  ~ProcessTransport() override {
    ::close(write_fd_);
    ::close(read_fd_);
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
      ::usleep(10000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
  }

 protected:
  int read_fd() const override { return read_fd_; }
  ssize_t write_some(const char* data, std::size_t size) override { return ::write(write_fd_, data, size); }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
};

class TcpTransport final : public FdTransport {
 public:
  TcpTransport(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
      throw WireError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd_ = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd_ < 0) continue;
      if (::connect(fd_, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw WireError("cannot connect to " + host + ":" + port);
  }
  ~TcpTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

 protected:
  int read_fd() const override { return fd_; }
  ssize_t write_some(const char* data, std::size_t size) override { return ::send(fd_, data, size, MSG_NOSIGNAL); }

 private:
  int fd_ = -1;
};

}  // namespace

std::unique_ptr<WireTransport> open_transport(const std::string& address) {
  constexpr std::string_view tcp = "tcp://";
  if (address.starts_with(tcp)) {
    const std::string rest = address.substr(tcp.size());
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
      throw std::invalid_argument("tcp address must look like tcp://host:port");
    return std::make_unique<TcpTransport>(rest.substr(0, colon), rest.substr(colon + 1));
  }
  if (address.empty()) throw std::invalid_argument("empty judge endpoint");
  return std::make_unique<ProcessTransport>(address);
}

WireClient::WireClient(std::unique_ptr<WireTransport> transport, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
  if (!transport_) throw std::invalid_argument("wire client needs a transport");
}

nlohmann::json WireClient::roundtrip(nlohmann::json request) {
  const std::uint64_t id = next_id_++;
  request["id"] = id;
  transport_->send_line(request.dump());
  const std::string line = transport_->read_line(timeout_);
  nlohmann::json response;
  try {
    response = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw WireMalformed(std::string("response is not JSON: ") + e.what());
  }
  if (!response.is_object() || !response.contains("id") || !response["id"].is_number_unsigned())
    throw WireMalformed("response lacks an unsigned id");
  if (response["id"].get<std::uint64_t>() != id)
    throw WireIdMismatch("expected response id " + std::to_string(id) + ", got " +
                         std::to_string(response["id"].get<std::uint64_t>()));
  if (response.contains("error"))
    throw WireError("judge endpoint reported: " + response["error"].dump());
  return response;
}

nlohmann::json wire_request(std::string_view op, JudgeKind mode, std::span<const SampleRecord> samples) {
  nlohmann::json req;
  req["id"] = 0;
  req["op"] = op;
  req["mode"] = to_string(mode);
  req["samples"] = nlohmann::json::array();
  for (const auto& s : samples) req["samples"].push_back(nlohmann::json::parse(to_jsonl_line(s)));
  return req;
}

ExternalJudge::ExternalJudge(std::string address, JudgeKind mode, std::unique_ptr<WireTransport> transport,
                             std::chrono::milliseconds timeout)
    : address_(std::move(address)), mode_(mode), client_(std::move(transport), timeout) {}

ExternalJudge::ExternalJudge(const std::string& address, JudgeKind mode)
    : ExternalJudge(address, mode, open_transport(address)) {}

InferenceResult ExternalJudge::infer(std::span<const SampleRecord> samples) {
  const auto response = client_.roundtrip(wire_request("infer", mode_, samples));
  InferenceResult result;
  for (const auto& s : samples) {
    JudgeVerdict v;
    v.sample_id = s.id;
    v.truth = truth_terms(s);
    if (v.truth.size() < 1 || v.truth.size() > 3) {
      v.flagged = true;
      v.flag_reason = "caption does not carry 1-3 spatial terms";
    }
    result.verdicts.push_back(std::move(v));
  }
  if (mode_ == JudgeKind::generative) {
    if (!response.contains("terms") || !response["terms"].is_array() || response["terms"].size() != samples.size())
      throw WireMalformed("generative response needs one term list per sample");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto& v = result.verdicts[i];
      const auto& terms = response["terms"][i];
      if (!terms.is_array()) throw WireMalformed("term list " + std::to_string(i) + " is not an array");
      for (const auto& t : terms) {
        const auto p = t.is_string() ? primitive_from_string(t.get<std::string>()) : std::nullopt;
        if (!p) throw WireMalformed("unknown spatial term " + t.dump());
        v.predicted.insert(*p);
      }
      if (!v.flagged) v.score = rubric_score(v.predicted, v.truth);
    }
  } else {
    if (!response.contains("loss") || !response["loss"].is_number())
      throw WireMalformed("contrastive response needs a numeric loss");
    result.batch_loss = response["loss"].get<double>();
    if (response.contains("correct")) {
      const auto& c = response["correct"];
      if (!c.is_array() || c.size() != samples.size()) throw WireMalformed("correct flags must match the sample count");
      for (std::size_t i = 0; i < samples.size(); ++i) result.verdicts[i].correct = c[i].get<bool>();
    }
  }
  return result;
}

FineTuneReport ExternalJudge::finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                                       const ValidationFn& validate) {
  if (batch.empty()) throw std::invalid_argument("fine-tuning batch is empty");
  auto req = wire_request("finetune", mode_, batch);
  req["steps"] = options.steps;
  const auto response = client_.roundtrip(std::move(req));
  if (!response.contains("ok") || response["ok"] != true) throw WireMalformed("fine-tune response lacks ok=true");
  ++finetunes_;
  FineTuneReport report;
  if (response.contains("losses") && response["losses"].is_array())
    for (const auto& l : response["losses"]) report.losses.push_back(l.get<double>());
  if (validate && options.cadence > 0 && options.steps % options.cadence == 0)
    report.validation.push_back({options.steps, validate()});
  return report;
}

std::string ExternalJudge::weight_digest() const {
  return sha256_hex(address_ + "#" + std::to_string(finetunes_));
}

void ExternalJudge::save(const std::filesystem::path& directory) const {
  std::filesystem::create_directories(directory);
  std::ofstream out(directory / "external.json", std::ios::trunc);
  out << nlohmann::json{{"address", address_}, {"mode", to_string(mode_)}, {"finetunes", finetunes_}}.dump() << '\n';
}

}  // namespace rls3
