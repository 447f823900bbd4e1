#pragma once

#include <stdexcept>
#include <string>

namespace riskgraph {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorCategory { Config = 2, Data = 3, Numerical = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message),
          category_(category),
          code_(std::move(code)) {}

    ErrorCategory category() const { return category_; }
    const std::string& code() const { return code_; }

private:
    ErrorCategory category_;
    std::string code_;
};

[[noreturn]] inline void config_error(const std::string& code, const std::string& msg) {
    throw Error(ErrorCategory::Config, code, msg);
}

[[noreturn]] inline void data_error(const std::string& code, const std::string& msg) {
    throw Error(ErrorCategory::Data, code, msg);
}

[[noreturn]] inline void numerical_error(const std::string& code, const std::string& msg) {
    throw Error(ErrorCategory::Numerical, code, msg);
}

}  // namespace riskgraph
