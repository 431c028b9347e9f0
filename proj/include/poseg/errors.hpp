#pragma once

#include <stdexcept>
#include <string>

namespace poseg {

// Base class for all errors raised by this library. Every failure mode that a
// caller can meaningfully distinguish gets its own type; everything else is a
// plain Error.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define POSEG_DEFINE_ERROR(NAME)                                   \
  struct NAME : Error {                                            \
    explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
  }

// Tensor / sample plumbing.
POSEG_DEFINE_ERROR(ShapeMismatch);

// Sample and scene construction.
POSEG_DEFINE_ERROR(InconsistentTarget);
POSEG_DEFINE_ERROR(EmptyInstance);
POSEG_DEFINE_ERROR(PlacementFailure);
POSEG_DEFINE_ERROR(InfeasibleShape);
POSEG_DEFINE_ERROR(TooManyInstances);

// Tokenization / text encoding.
POSEG_DEFINE_ERROR(ExpressionTooLong);
POSEG_DEFINE_ERROR(TokenOutOfVocab);
POSEG_DEFINE_ERROR(AllTokensPadded);

// Corpus and checkpoint I/O.
POSEG_DEFINE_ERROR(CorruptManifest);
POSEG_DEFINE_ERROR(MissingFile);
POSEG_DEFINE_ERROR(ChecksumMismatch);
POSEG_DEFINE_ERROR(VersionMismatch);
POSEG_DEFINE_ERROR(CorruptArchive);

// Training / evaluation.
POSEG_DEFINE_ERROR(NonFiniteLoss);
POSEG_DEFINE_ERROR(EmptySplit);
POSEG_DEFINE_ERROR(NoNoTargetSamples);

#undef POSEG_DEFINE_ERROR

}  // namespace poseg
