#pragma once

#include <stdexcept>
#include <string>

namespace sps {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input rejected by a precondition check (shapes, ranges, parity).
class InputError : public Error {
public:
    using Error::Error;
};

/// A dictionary atom collapsed to (near) zero norm during parameterization.
class DegenerateAtomError : public Error {
public:
    DegenerateAtomError(int atom, double norm)
        : Error("degenerate atom " + std::to_string(atom) + " (norm " + std::to_string(norm) + ")"),
          atom_(atom), norm_(norm) {}
    int atom() const { return atom_; }
    double norm() const { return norm_; }

private:
    int atom_;
    double norm_;
};

/// An iteration produced non-finite values or a growing error.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

/// Malformed or unsupported file.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace sps
