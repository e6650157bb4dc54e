#pragma once

#include <stdexcept>
#include <string>

namespace softbeam {

// Every error carries a short machine-parsable category; the CLI prints it as
// the first token of its one-line failure message.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error("contract", w) {}
};
struct InputError : Error {
  explicit InputError(const std::string& w) : Error("input", w) {}
};
struct VocabularyError : Error {
  explicit VocabularyError(const std::string& w) : Error("vocabulary", w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& w) : Error("checkpoint", w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

}  // namespace softbeam
