#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace expres {

// Error taxonomy shared by every module. The CLI maps each kind to an exit code.
enum class ErrorKind { Shape, Numeric, Contract, Format, Config, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::Format, what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what), violations{what} {}
  explicit ConfigError(std::vector<std::string> list) : Error(ErrorKind::Config, join(list)), violations(std::move(list)) {}
  std::vector<std::string> violations;

 private:
  static std::string join(const std::vector<std::string>& list) {
    std::string out;
    for (const auto& v : list) out += (out.empty() ? "" : "; ") + v;
    return out;
  }
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

const char* to_string(ErrorKind kind);

}  // namespace expres
