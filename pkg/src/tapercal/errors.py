"""Typed exceptions shared across the toolkit.

Everything raised by library code derives from :class:`TaperCalError` so
callers (and the CLI) can map failures to exit codes without string
matching.  ``exit_code`` is 2 for data/format errors and 3 for numerical
failures.
"""

from __future__ import annotations


class TaperCalError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2

    def __init__(self, message: str = "", *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        base = super().__str__()
        if self.stage:
            return f"[stage: {self.stage}] {base}"
        return base


# --- grid / geometry ---------------------------------------------------

class InvalidGrid(TaperCalError):
    """Grid construction violates an invariant (shape, negatives, NaN)."""


class OutOfBounds(TaperCalError):
    """Query coordinate lies outside the half-pixel-padded grid extent."""


class ShapeMismatch(TaperCalError):
    """Two grids were expected to share shape and geotransform."""


# --- stations ----------------------------------------------------------

class InvalidStation(TaperCalError):
    """Station fields violate an invariant (range, finiteness, id reuse)."""


class TooFewStations(TaperCalError):
    """Operation needs at least two stations."""


class AllStationsOutOfBounds(TaperCalError):
    """No station produced a usable sample (outside extent or on missing)."""


# --- taper loss --------------------------------------------------------

class NonPositiveParam(TaperCalError):
    """Kernel decay parameter must be strictly positive."""


class DegenerateKernel(TaperCalError):
    """Every kernel weight collapsed to zero; normalization undefined."""

    exit_code = 3


class EmptyAfterMasking(TaperCalError):
    """No valid station (or pixel) remained for a loss term."""


# --- resampling --------------------------------------------------------

class StepMismatch(TaperCalError):
    """Series time step disagrees with the interpolation spec."""


class EmptyOverlap(TaperCalError):
    """No target pixel falls inside the source extent."""


# --- preprocessing -----------------------------------------------------

class WindowTooLarge(TaperCalError):
    """Crop window exceeds the grid in at least one dimension."""


class EmptyAfterFilter(TaperCalError):
    """No values survived zero-removal."""


# --- models ------------------------------------------------------------

class DivergedLoss(TaperCalError):
    """Training loss became non-finite."""

    exit_code = 3


# --- metrics -----------------------------------------------------------

class UndefinedMetric(TaperCalError):
    """A metric's denominator is zero for the given samples."""

    def __init__(self, name: str, reason: str = "", *, stage: str | None = None):
        msg = f"{name} undefined" + (f": {reason}" if reason else "")
        super().__init__(msg, stage=stage)
        self.name = name


class LabelOutOfRange(TaperCalError):
    """Class label outside [0, num_classes)."""


class TooSmall(TaperCalError):
    """Input smaller than the metric's window."""


# --- synthetic scenes --------------------------------------------------

class TooManyStations(TaperCalError):
    """More stations requested than distinct pixels available."""


# --- codecs ------------------------------------------------------------

class CodecError(TaperCalError):
    """Base for file format errors."""


class BadMagic(CodecError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(CodecError):
    """Format version other than the supported one."""


class UnsupportedDtype(CodecError):
    """Dtype or array layout outside the supported subset."""


class TruncatedFile(CodecError):
    """File ends before the declared payload is complete."""


class DuplicateEntry(CodecError):
    """Archive entry names collide."""


class UnsupportedCompression(CodecError):
    """Archive entry uses a compression method other than stored."""


class BadZip(CodecError):
    """Container is not a readable zip archive."""


class BadHeader(CodecError):
    """CSV header line is missing or wrong."""


class BadRow(CodecError):
    """CSV row is structurally invalid."""

    def __init__(self, line_no: int, message: str, *, stage: str | None = None):
        super().__init__(f"line {line_no}: {message}", stage=stage)
        self.line_no = line_no


class NonFiniteValue(CodecError):
    """CSV row carries a non-finite, negative, or out-of-range value."""

    def __init__(self, line_no: int, message: str, *, stage: str | None = None):
        super().__init__(f"line {line_no}: {message}", stage=stage)
        self.line_no = line_no


class BadCheckpoint(CodecError):
    """Model checkpoint record is malformed."""


# --- configuration -----------------------------------------------------

class ConfigError(TaperCalError):
    """Invalid configuration value or unknown key."""

    exit_code = 1
