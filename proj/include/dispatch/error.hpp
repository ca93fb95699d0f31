#ifndef DISPATCH_ERROR_HPP
#define DISPATCH_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dispatch
{

// Base for every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Invalid catalogs, boxes, configs, degenerate ranges.
class ConfigError : public Error
{
public:
    using Error::Error;
};

// Caller broke a documented precondition (mismatched sizes, bad fraction, ...).
class ContractViolation : public Error
{
public:
    using Error::Error;
};

// The MNA system is singular at some frequency.
class InvalidCircuit : public Error
{
public:
    using Error::Error;
};

class TrainingError : public Error
{
public:
    using Error::Error;
};

// Malformed text input. Carries a 1-based line number when known (0 otherwise).
class ParseError : public Error
{
public:
    ParseError(const std::string &what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what)
        , line_(line)
    {
    }

    std::size_t line() const noexcept { return line_; }

    // The same error with the file name in front of the message.
    ParseError in_file(const std::string &file) const { return ParseError(file + ": " + what(), line_, 0); }

private:
    ParseError(const std::string &message, std::size_t line, int)
        : Error(message)
        , line_(line)
    {
    }

    std::size_t line_;
};

inline void require(bool condition, const char *message)
{
    if (!condition)
        throw ContractViolation(message);
}

} // namespace dispatch

#endif
