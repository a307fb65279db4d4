#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kgdg {

// Stable error codes. The string form (error_code_name) is part of the CLI
// contract and must not change once published.
enum class ErrorCode {
    // usage / configuration
    InvalidArgument,
    InvalidConfig,
    UnknownReference,
    // data
    NegativeProbability,
    SumOutOfTolerance,
    MissingColumn,
    NonNumericCell,
    DuplicateImageId,
    UnknownImageId,
    UnknownLesionKind,
    BoxOutOfBounds,
    SchemaMismatch,
    CorruptArtifact,
    SingleClassTrain,
    TooFewPerClass,
    EmptyEvaluation,
    NoQualifyingClass,
    MissingProbabilityTable,
    IoFailure,
    // internal invariants
    LeakageDetected,
    InternalInvariant,
};

enum class ErrorCategory { Usage, Data, Internal };

std::string_view error_code_name(ErrorCode code) noexcept;
ErrorCategory error_category(ErrorCode code) noexcept;

/// Process exit code for a category: 2 usage/config, 3 data, 4 internal.
int exit_code_for(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return error_category(code_); }

private:
    ErrorCode code_;
};

}  // namespace kgdg
