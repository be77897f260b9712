#pragma once

#include <iosfwd>

namespace ermpp {

/// Self-check suites behind the `verify` subcommand: finite-difference
/// gradient checks, the hand-computed Adam step, the running-mean oracle,
/// the BN EMA recurrence, and the freeze contracts. Prints one pass/fail
/// line per suite; returns true iff everything passed.
bool run_verify(std::ostream& out);

}  // namespace ermpp
