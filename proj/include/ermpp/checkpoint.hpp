#pragma once

#include <string>

#include "ermpp/nn.hpp"

namespace ermpp {

/// Checkpoint encoding (little-endian, documented in the README):
///   "EMPPCKPT" | u32 version | u64 spec hash | u8 averaged | i64 step
///   | u32 param count | records of (name, f64 array)
///   | u32 bn count    | records of (name, f64 mean array, f64 var array)
///   | u32 CRC32 over everything before it
/// Round trips are bit-exact.
std::string serialize_checkpoint(const ModelState& s, uint64_t spec_hash, bool averaged = false);

void save_checkpoint(const ModelState& s, uint64_t spec_hash, const std::string& path,
                     bool averaged = false);

/// Distinct FileFormatError for bad magic, unsupported version, truncation,
/// and checksum mismatch. On success optionally reports the stored spec hash
/// and averaged flag.
ModelState load_checkpoint(const std::string& path, uint64_t* spec_hash = nullptr,
                           bool* averaged = nullptr);

/// CRC32 hex digest of a serialized state; the run-record checkpoint digest.
std::string state_digest(const ModelState& s, uint64_t spec_hash, bool averaged = false);

}  // namespace ermpp
