"""Exception types shared across the toolkit."""


class VscatError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(VscatError, ValueError):
    """An argument violates a documented precondition."""


class FileFormatError(VscatError, ValueError):
    """An input file does not match its documented schema."""


class NumericError(VscatError, RuntimeError):
    """A numerical routine failed (non-PD matrix, overflow, ...)."""


class MissingCoefficientError(NumericError):
    """A forward prediction needed an SRC entry that was never estimated.

    ``pairs`` lists the offending (scatterer index, sector index) pairs,
    both 1-based; ``grid_indices`` lists affected grids when known.
    """

    def __init__(self, pairs, grid_indices=()):
        self.pairs = sorted(set(pairs))
        self.grid_indices = sorted(set(grid_indices))
        msg = "undefined SRC entries for (scatterer, sector) pairs: " + ", ".join(
            f"({n}, {m})" for n, m in self.pairs
        )
        if self.grid_indices:
            msg += f"; affected grids: {self.grid_indices}"
        super().__init__(msg)


class DegenerateSystemError(NumericError):
    """The measurement design has no usable columns and no Tx offset."""


class RankDeficiencyError(NumericError):
    """Unregularized normal equations are singular; add a ridge term."""
