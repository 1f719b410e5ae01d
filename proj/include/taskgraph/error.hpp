#pragma once

#include <stdexcept>
#include <string>

namespace taskgraph {

/// Bad input: shapes, distributions, flags. CLI exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Filesystem or on-disk format problem. CLI exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss or parameters).
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, int epoch)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Density model could not be fitted to the data.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear program did not converge.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, long iterations)
        : std::runtime_error(what + " after " + std::to_string(iterations) + " iterations"),
          iterations_(iterations) {}
    long iterations() const noexcept { return iterations_; }

private:
    long iterations_;
};

}  // namespace taskgraph
