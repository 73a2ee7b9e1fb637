#pragma once

#include <stdexcept>
#include <string>

namespace bambino {

// Shape/rank mismatches in array math, including rollout shape errors.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Token id outside the vocabulary, or an index outside a gather target.
struct VocabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corpus ingestion, degenerate batches, grammar validation, empty vocab.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Sampling preconditions (prompt length, context budget).
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Optimizer preconditions (missing gradients).
struct OptimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where the numeric contract forbids them.
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config files: parse failures, invalid values, missing inputs.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint save/load/resume failures, config mismatches.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Evaluation harness: empty corpora, malformed task definitions.
struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File system failures (unreadable input, unwritable output).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace bambino
