#pragma once

#include <stdexcept>
#include <string>

namespace gnndiar {

// Every failure the library reports derives from Error so callers can
// separate library failures from std exceptions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class UsageError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };

// Zero-norm rows, single-class sessions and similar inputs with no defined answer.
class DegenerateInputError : public Error { public: using Error::Error; };

// A refined embedding collapsed to zero norm.
class DegenerateOutputError : public Error { public: using Error::Error; };

class TrainingError : public Error { public: using Error::Error; };
class GenerationError : public Error { public: using Error::Error; };

}  // namespace gnndiar
