"""Configuration for local design and multi-stage global emulation."""
from dataclasses import dataclass, replace
from enum import Enum

from .errors import InvalidInputError
from .kernel import DEFAULT_NUGGET


class Method(str, Enum):
    """Local design criterion."""

    NN = "nn"
    ALC = "alc"
    MSPE = "mspe"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidInputError(f"unknown method {value!r}; choose nn, alc or mspe") from None


@dataclass(frozen=True)
class StageConfig:
    """Knobs of the local design and the staged global scheme.

    theta0 is either ``"auto"`` (a lower quantile of squared distances in
    the design) or a positive number.  ``smooth_k`` of ``None`` or 0
    disables spatial smoothing of the lengthscale between stages.
    """

    method: Method = Method.ALC
    n0: int = 6
    n: int = 50
    close: int = 1000
    theta0: object = "auto"
    theta_quantile: float = 0.1
    theta_bounds: tuple = None
    stages: int = 2
    mle: bool = True
    smooth_k: int = 12
    smooth_bandwidth: float = None
    smooth_final: bool = False
    refit_after_smooth: bool = False
    eta: float = DEFAULT_NUGGET
    mle_tol: float = 1e-5
    mle_max_iter: int = 50
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if self.n0 < 1:
            raise InvalidInputError("n0 must be at least 1")
        if not self.n0 <= self.n <= self.close:
            raise InvalidInputError(f"need n0 <= n <= close, got {self.n0}, {self.n}, {self.close}")
        if self.stages < 1:
            raise InvalidInputError("stages must be at least 1")
        if self.theta0 != "auto":
            try:
                t0 = float(self.theta0)
            except (TypeError, ValueError):
                raise InvalidInputError(f"theta0 must be 'auto' or a number, got {self.theta0!r}") from None
            if not t0 > 0:
                raise InvalidInputError("theta0 must be positive")
            object.__setattr__(self, "theta0", t0)
        if not 0.0 < self.theta_quantile < 1.0:
            raise InvalidInputError("theta_quantile must lie in (0, 1)")
        if self.theta_bounds is not None:
            lo, hi = self.theta_bounds
            if not 0 < lo < hi:
                raise InvalidInputError(f"invalid theta bounds {self.theta_bounds!r}")
        if self.eta < 0:
            raise InvalidInputError("eta must be non-negative")
        if self.smooth_k is not None and self.smooth_k < 0:
            raise InvalidInputError("smooth_k must be non-negative")
        if self.workers < 1:
            raise InvalidInputError("workers must be at least 1")

    @property
    def smoothing(self):
        return bool(self.smooth_k) and self.smooth_k > 1

    def but(self, **changes):
        return replace(self, **changes)
