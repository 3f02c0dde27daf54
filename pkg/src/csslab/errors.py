"""Error taxonomy shared across the package."""


class CsslabError(Exception):
    """Base class for all package errors."""


class GridError(CsslabError):
    """Structural problem: bad grid parameters or mismatched grids."""


class PreconditionError(CsslabError):
    """An operation's precondition is violated by the supplied data."""


class TailDivergenceError(CsslabError):
    """A tail integral does not converge on the truncated domain."""


class DiscretizationFault(CsslabError):
    """Two discretizations of the same quantity disagree beyond tolerance."""


class ConvergenceError(CsslabError):
    """An iterative solve failed to reach its tolerance in the budget."""


class DecompositionLostError(CsslabError):
    """The modulation decomposition Newton solve diverged."""


class BlockGapError(CsslabError):
    """A dyadic time block contains no samples of the series."""
