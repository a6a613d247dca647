#pragma once

#include <stdexcept>
#include <string>

namespace ctarr {

// Error categories surfaced by the library. The CLI maps any Error to exit
// code 2; everything else (usage) is handled before we get here.
enum class errc {
    invalid_argument,
    no_anatomy_found,
    internal_consistency,
    numerical_failure,
    outside_field_of_view,
    empty_crop,
    empty_region,
    missing_class,
    cohort_too_small,
    dim_mismatch,
    undefined_ncc,
    io_error,
    bad_magic,
    unsupported_datatype,
    unsupported_dimension,
    truncated_payload,
    corrupt_file,
    version_mismatch,
    missing_channel,
};

const char* errc_name(errc c);

class Error : public std::runtime_error {
  public:
    Error(errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, errc code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

}  // namespace ctarr
