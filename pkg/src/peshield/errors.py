"""Exception hierarchy shared by all peshield modules."""


class PeShieldError(Exception):
    """Base class for every error raised by this package."""


# -- PE parsing / serialization ----------------------------------------------

class MalformedDos(PeShieldError):
    """DOS header is invalid (bad magic, e_lfanew out of range, truncated)."""


class MalformedPe(PeShieldError):
    """PE signature or NT headers are missing, truncated, or inconsistent."""


class OverlappingSections(PeShieldError):
    """Two section raw extents claim the same file bytes."""


class InconsistentLayout(PeShieldError):
    """A layout no longer satisfies its own structural invariants."""


# -- perturbations / attacks --------------------------------------------------

class NoSlackAvailable(PeShieldError):
    """FillSlack was requested but the layout has no usable slack region."""


class SectionTableFull(PeShieldError):
    """No header slack for a new section entry and header extension is off."""


class PayloadTooLarge(PeShieldError):
    """A perturbation payload exceeds the region it must fit into."""


class EmptyPool(PeShieldError):
    """A goodware content pool is required but empty."""


class TraceNotEvasive(PeShieldError):
    """minimize_trace was given a trace that does not evade the detector."""


# -- features / learning ------------------------------------------------------

class EmptyMatrix(PeShieldError):
    """A feature matrix with fewer than two rows cannot be standardized."""


class SingleClass(PeShieldError):
    """Training data contains only one label value."""


class DimensionMismatch(PeShieldError):
    """Vector or matrix width differs from what the model was trained on."""


class VersionMismatch(PeShieldError):
    """A persisted file declares an unsupported format version."""


class CorruptModel(PeShieldError):
    """A persisted model fails its magic, structure, or digest check."""


class FormatError(PeShieldError):
    """A data file (matrix, manifest, config) is malformed."""


# -- pipeline ------------------------------------------------------------------

class EmptyScores(PeShieldError):
    """Threshold calibration needs at least one goodware score."""


class MissingVector(PeShieldError):
    """A manifest entry has no corresponding feature vector."""


class LengthMismatch(PeShieldError):
    """Parallel sequences passed to an operation differ in length."""


class MissingYear(PeShieldError):
    """A manifest entry lacks first_seen_year where a time split needs it."""


# -- explanation ----------------------------------------------------------------

class MissingCoverCounts(PeShieldError):
    """Tree SHAP requires per-node training cover counts on every tree."""


class EmptyGroup(PeShieldError):
    """Artifact summarization was given an empty sample group."""
