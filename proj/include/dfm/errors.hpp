#pragma once

#include <stdexcept>

namespace dfm {

// Error taxonomy. Everything derives from dfm::error so callers can catch the
// library as a whole or pick a specific failure class.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Static configuration that can never work (bad scheduler coefficients,
// incompatible space/source combination, ...).
struct config_error : error {
  using error::error;
};

// A caller violated a documented precondition (unnormalized PMF, mismatched
// dimensions, ...).
struct contract_error : error {
  using error::error;
};

// Malformed external data (target files, checkpoints, sample dumps).
struct data_error : error {
  using error::error;
};

// A size or capacity limit was exceeded.
struct resource_error : error {
  using error::error;
};

// An update kernel came out invalid at runtime (step too large, negative
// probabilities beyond tolerance).
struct step_error : error {
  using error::error;
};

// A velocity is undefined because every mixture component lost its mass.
struct singularity_error : error {
  using error::error;
};

// A conditioning state carries zero probability under the current path.
struct unsupported_state_error : error {
  using error::error;
};

// Optimization diverged.
struct training_error : error {
  using error::error;
};

}  // namespace dfm
