"""Exception hierarchy shared by every module."""


class BlochPacketError(Exception):
    """Base class for all package errors."""


class SingularLattice(BlochPacketError):
    pass


class UnsupportedOrder(BlochPacketError):
    pass


class TruncationMismatch(BlochPacketError):
    pass


class EigensolverFailure(BlochPacketError):
    pass


class GapBelowThreshold(BlochPacketError):
    def __init__(self, n, gap, threshold=None):
        self.n = n
        self.gap = gap
        self.threshold = threshold
        msg = f"band {n} gap {gap:.3e}"
        if threshold is not None:
            msg += f" below threshold {threshold:.3e}"
        super().__init__(msg)


class DegenerateBand(BlochPacketError):
    pass


class CurvatureMethodMismatch(BlochPacketError):
    pass


class OverlapTooSmall(BlochPacketError):
    pass


class SymplecticViolation(BlochPacketError):
    def __init__(self, residual_sym, residual_herm):
        self.residual_sym = residual_sym
        self.residual_herm = residual_herm
        super().__init__(
            f"A^T B - B^T A residual {residual_sym:.3e}, "
            f"conj(A)^T B - conj(B)^T A - 2iI residual {residual_herm:.3e}"
        )


class SymplecticDrift(SymplecticViolation):
    pass


class BranchDiscontinuity(BlochPacketError):
    pass


class DomainTooSmall(BlochPacketError):
    pass


class StepTooLarge(BlochPacketError):
    pass


class EnvelopeUnavailable(BlochPacketError):
    pass


class ResolutionTooLow(BlochPacketError):
    pass


class CommensurabilityError(BlochPacketError):
    pass


class GaugeMismatch(BlochPacketError):
    pass


class GridMismatch(BlochPacketError):
    pass


class ConfigError(BlochPacketError):
    pass
