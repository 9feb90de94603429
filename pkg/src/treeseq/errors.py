"""Exception types shared across the package."""


class TreeSeqError(Exception):
    """Base class for all treeseq errors."""


class DomainError(TreeSeqError):
    """An argument or value is outside an operation's domain."""


class CapacityError(TreeSeqError):
    """A requested structure exceeds the configured size limits."""


class ConfigurationError(TreeSeqError):
    """Corpus, vocabulary, and model settings are inconsistent."""


class DecodeError(TreeSeqError):
    """Joint decoding could not find any finite-probability output."""
