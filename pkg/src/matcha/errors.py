"""Exception hierarchy shared by all matcha modules."""


class MatchaError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInputError(MatchaError):
    """Raised when a text or tensor that must be non-empty is empty."""


class DegenerateRepresentationError(MatchaError):
    """Raised when a pooled document vector has zero norm, making cosine undefined."""


class VocabularyFormatError(MatchaError):
    """Malformed vocabulary or merges file; message names the file and line/offset."""


class VocabularyIntegrityError(MatchaError):
    """Internally inconsistent vocabulary (duplicate ids, merge result missing, ...)."""


class TokenRangeError(MatchaError):
    """Token id outside [0, vocab_size)."""


class ShapeError(MatchaError):
    """Tensor dimensions inconsistent with the model hyperparameters."""


class NumericError(MatchaError):
    """Non-finite value produced where a finite one is required."""


class SchemaError(MatchaError):
    """A JSONL record violates the corpus schema; message names the line."""


class InsufficientCorpusError(MatchaError):
    """Too few records to construct the requested triplets."""


class CheckpointFormatError(MatchaError):
    """Checkpoint container is malformed (bad magic, version, or truncation)."""


class CheckpointIntegrityError(MatchaError):
    """Checkpoint manifest disagrees with the stored tensors."""


class ConfigError(MatchaError):
    """Invalid run configuration; message enumerates every problem found."""
