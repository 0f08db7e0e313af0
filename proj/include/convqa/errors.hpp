#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace convqa {

// Base for every failure the library reports. The CLI maps these to exit
// code 1; UsageError maps to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& conversation_id, int turn_id,
                 const std::string& detail)
      : Error("integrity error in conversation '" + conversation_id +
              "' turn " + std::to_string(turn_id) + ": " + detail),
        conversation_id_(conversation_id),
        turn_id_(turn_id) {}
  const std::string& conversation_id() const { return conversation_id_; }
  int turn_id() const { return turn_id_; }

 private:
  std::string conversation_id_;
  int turn_id_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class SupervisionError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class RegimeError : public Error {
 public:
  using Error::Error;
};

class CoverageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Raised by the optimizer when a gradient or updated weight is not finite.
// Carries the turn that produced it once the trainer has attached it.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what,
                        std::string conversation_id = {}, int turn_id = -1)
      : Error(what), conversation_id_(std::move(conversation_id)),
        turn_id_(turn_id) {}
  const std::string& conversation_id() const { return conversation_id_; }
  int turn_id() const { return turn_id_; }

 private:
  std::string conversation_id_;
  int turn_id_;
};

}  // namespace convqa
