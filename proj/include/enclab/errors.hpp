#pragma once

#include <stdexcept>
#include <string>

namespace enclab {

// Shape/length/index violations (mismatched dims, out-of-range targets, ...).
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Degenerate numeric inputs: zero-norm vectors, empty text, bad labels.
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration: bad block counts, non-power-of-two lengths,
// missing teacher checkpoints, batch-contract violations.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent external data (JSONL lines, qrels, checkpoints).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss); carries the offending step.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg, long step = -1)
        : std::runtime_error(msg), step(step) {}
    long step;
};

}  // namespace enclab
