#pragma once

#include <stdexcept>
#include <string>

namespace iontrap {

// Error categories map to CLI exit codes: config 2, numerical 3, ion loss 4.
class Error : public std::runtime_error {
public:
  Error(std::string category, int exit_code, const std::string &message)
      : std::runtime_error(message), category_(std::move(category)),
        exit_code_(exit_code) {}

  const std::string &category() const { return category_; }
  int exit_code() const { return exit_code_; }

private:
  std::string category_;
  int exit_code_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string &message)
      : Error("config", 2, message) {}
};

class NumericalError : public Error {
public:
  explicit NumericalError(const std::string &message)
      : Error("numerical", 3, message) {}
};

class IonLossError : public Error {
public:
  explicit IonLossError(const std::string &message)
      : Error("ion-loss", 4, message) {}
};

} // namespace iontrap
