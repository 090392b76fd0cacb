#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mieval {

/// Base class for every error raised by the harness.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data violates a contract: malformed manifest, duplicate key,
/// dangling reference, insufficient pool, out-of-range argument.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Missing or inconsistent configuration (provider config, credentials).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An image could not be decoded or composed.
class ImageError : public Error {
public:
    using Error::Error;
};

/// Required predictions or oracle labels are absent for some images.
class CoverageError : public ValidationError {
public:
    CoverageError(std::string what, std::vector<std::string> missing_predictions,
                  std::vector<std::string> missing_labels)
        : ValidationError(std::move(what)),
          missing_predictions_(std::move(missing_predictions)),
          missing_labels_(std::move(missing_labels)) {}

    const std::vector<std::string>& missing_predictions() const { return missing_predictions_; }
    const std::vector<std::string>& missing_labels() const { return missing_labels_; }

private:
    std::vector<std::string> missing_predictions_;
    std::vector<std::string> missing_labels_;
};

}  // namespace mieval
