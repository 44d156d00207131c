"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes do not compose (names the offending layer or block)."""


class NumericError(RuntimeError):
    """A non-finite value appeared where a finite one is required."""


class CoverageError(RuntimeError):
    """Quadrature node range does not cover the effective support of an integrand."""


class DegenerateGeneratorError(ValueError):
    """Affine generator matrix is rank deficient; no induced density exists."""
