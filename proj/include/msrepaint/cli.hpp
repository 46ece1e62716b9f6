#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>

#include "msrepaint/errors.hpp"

namespace msrepaint {

inline constexpr const char* kToolVersion = "0.1.0";

/// Bad command-line usage; maps to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the msrepaint tool. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage or validation error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used for the config hash in provenance sidecars.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace cli
}  // namespace msrepaint
