"""Exception types shared across the toolkit.

Every error raised on purpose by this package derives from SlmsError, so
callers (and the CLI) can distinguish data problems from genuine bugs.
"""


class SlmsError(Exception):
    """Base class for all toolkit errors."""


class InvariantViolation(SlmsError):
    """A domain-type invariant does not hold (bad field values)."""


# audio
class UnsupportedFormat(SlmsError):
    """WAV container uses a codec other than PCM16 / IEEE float32."""


class EmptyAudio(SlmsError):
    """WAV file contains zero frames."""


# features
class TooShort(SlmsError):
    """Waveform shorter than one analysis window."""


# binary file formats
class BadMagic(SlmsError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(SlmsError):
    """File payload is shorter than its header declares."""


class DimensionMismatch(SlmsError):
    """Array dimensions disagree (D of features vs codebook, header vs payload)."""


# quantizer
class NotEnoughPoints(SlmsError):
    """Fewer training frames than requested clusters."""


# tokenizer / ulm
class EmptyInput(SlmsError):
    """An operation requiring a non-empty sequence received an empty one."""


class EmptyCorpus(SlmsError):
    """LM training received no sequences."""


class TokenOutOfRange(SlmsError):
    """A token id falls outside [0, V)."""


class PolicyMismatch(SlmsError):
    """Token sequence dedup policy disagrees with the LM's training policy."""


class DivergedLoss(SlmsError):
    """Training loss became non-finite."""


class MalformedArpa(SlmsError):
    """ARPA file section counts disagree with listed entries, or bad syntax."""


# scoring / evaluation
class ComponentMismatch(SlmsError):
    """Pipeline components disagree (codebook V vs LM V, or policy vs policy)."""


class DegenerateInput(SlmsError):
    """Correlation undefined: constant input vector or n < 2."""


class MissingMos(SlmsError):
    """A manifest row used for evaluation has no MOS value."""


class UnknownUttId(SlmsError):
    """A scored utterance id does not appear in the manifest."""
