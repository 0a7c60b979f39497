#pragma once

#include <stdexcept>
#include <string>

namespace bdray {

// Failure categories. The numeric values double as CLI exit codes, which are
// part of the tool's stable contract.
enum class errc {
    numerical_failure = 1,
    input_error = 2,
    inconclusive = 3,
    inadmissible_triple = 4,
    unsupported_construction = 5,
    wrong_boundary_class = 6,
};

class error : public std::runtime_error {
  public:
    error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

}  // namespace bdray
