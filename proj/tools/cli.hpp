#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sps/error.hpp"
#include "sps/forward_operators.hpp"

namespace sps::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitAbort = 4,
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

/// identity | sr[:sigma=,size=,stride=] | mri[:acc=,seed=,center=]
struct OperatorSpec {
    OperatorKind kind = OperatorKind::Identity;
    double sigma = 2.0;
    int size = 16;
    int stride = 4;
    int acc = 8;
    std::uint64_t seed = 0;
    double center = -1.0; // < 0: default for acc
};

OperatorSpec parse_operator_spec(const std::string& text);
std::string format_operator_spec(const OperatorSpec& spec);
/// The MRI mask depends on the image width, so operators are built per size.
ForwardOperator build_operator(const OperatorSpec& spec, int height, int width);

/// Flag tokens a named profile expands to (placed before config-file and command-line values).
std::vector<std::string> profile_tokens(const std::string& name);
std::vector<std::string> profile_names();

/// Runs one command; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace sps::cli
