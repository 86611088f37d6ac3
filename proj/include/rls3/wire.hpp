#pragma once

#include "rls3/judges.hpp"

#include <json.hpp>

#include <chrono>
#include <memory>
#include <string>
#include <string_view>

namespace rls3 {

class WireError : public JudgeError {
 public:
  using JudgeError::JudgeError;
};
class WireTimeout : public WireError {
 public:
  using WireError::WireError;
};
class WireMalformed : public WireError {
 public:
  using WireError::WireError;
};
class WireIdMismatch : public WireError {
 public:
  using WireError::WireError;
};
class WireClosed : public WireError {
 public:
  using WireError::WireError;
};

/// Line-oriented byte stream to an external judge process.
class WireTransport {
 public:
  virtual ~WireTransport() = default;
  virtual void send_line(std::string_view line) = 0;
  /// Next newline-terminated line without the newline. Throws WireTimeout
  /// or WireClosed.
  virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

/// `tcp://host:port` connects a socket; anything else is run as a shell
/// command with its stdin/stdout attached.
std::unique_ptr<WireTransport> open_transport(const std::string& address);

class WireClient {
 public:
  explicit WireClient(std::unique_ptr<WireTransport> transport,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

  /// Stamps `request` with the next id, sends it and returns the response
  /// whose id must match.
  nlohmann::json roundtrip(nlohmann::json request);
  std::uint64_t next_id() const { return next_id_; }

 private:
  std::unique_ptr<WireTransport> transport_;
  std::chrono::milliseconds timeout_;
  std::uint64_t next_id_ = 1;
};

nlohmann::json wire_request(std::string_view op, JudgeKind mode, std::span<const SampleRecord> samples);

/// Judge backed by an external process speaking the NDJSON protocol.
class ExternalJudge final : public Judge {
 public:
  ExternalJudge(std::string address, JudgeKind mode, std::unique_ptr<WireTransport> transport,
                std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));
  ExternalJudge(const std::string& address, JudgeKind mode);

  JudgeKind kind() const override { return mode_; }
  InferenceResult infer(std::span<const SampleRecord> samples) override;
  FineTuneReport finetune(std::span<const SampleRecord> batch, const FineTuneOptions& options,
                          const ValidationFn& validate) override;
  std::string weight_digest() const override;
  void save(const std::filesystem::path& directory) const override;

 private:
  std::string address_;
  JudgeKind mode_;
  WireClient client_;
  std::uint64_t finetunes_ = 0;
};

}  // namespace rls3
