#pragma once

#include <stdexcept>
#include <string>

namespace fedsso {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidDimension : Error {
    using Error::Error;
};
struct EmptyBatch : Error {
    using Error::Error;
};
struct InvalidBatch : Error {
    using Error::Error;
};
struct UnsupportedMetric : Error {
    using Error::Error;
};
struct NotEstimable : Error {
    using Error::Error;
};
struct InvalidParam : Error {
    using Error::Error;
};

struct ParseError : Error {
    int line;
    ParseError(int line_no, const std::string& what)
        : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};
struct IndexOutOfRange : Error {
    using Error::Error;
};
struct LabelError : Error {
    using Error::Error;
};
struct InfeasiblePartition : Error {
    using Error::Error;
};
struct TooFewSamples : Error {
    using Error::Error;
};

struct WeightError : Error {
    using Error::Error;
};
struct UnknownAlgorithm : Error {
    using Error::Error;
};
struct SingularHessian : Error {
    using Error::Error;
};
struct InvalidMatrix : Error {
    using Error::Error;
};

struct DivergenceDetected : Error {
    int round;
    explicit DivergenceDetected(int round_no)
        : Error("model diverged at round " + std::to_string(round_no)), round(round_no) {}
};

struct OracleFailure : Error {
    using Error::Error;
};
struct InconsistentOracle : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace fedsso
