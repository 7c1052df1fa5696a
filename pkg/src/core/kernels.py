"""Built-in interaction kernels and the kernel registry.

Every kernel is a vectorized callable ``phi(r)`` on pairwise distances that also
knows how to describe itself as a registry entry, so systems can be echoed into
configs and trajectory sidecars.
"""

import math
from typing import Any, Callable, Dict, Sequence, Tuple

import numpy as np

from .errors import ConfigError


def _as_distances(r: Any) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(r, dtype=float)
    return arr, arr.ndim == 0


class Kernel:
    """Scalar interaction kernel phi: R+ -> R."""

    name: str = "kernel"

    def __call__(self, r: Any) -> Any:
        arr, scalar = _as_distances(r)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{self.name} kernel evaluated at a non-finite distance")
        if np.any(arr < 0):
            raise ValueError(f"{self.name} kernel evaluated at a negative distance")
        out = self._evaluate(np.atleast_1d(arr))
        out = out.reshape(arr.shape)
        return float(out) if scalar else out

    def _evaluate(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> Dict[str, Any]:
        return {}

    def to_config(self) -> Dict[str, Any]:
        """Registry description ``{"name": ..., "params": {...}}``."""
        return {"name": self.name, "params": self.params()}


class ZeroKernel(Kernel):
    """phi == 0; kept as a genuine kernel so learners must discover it."""

    name = "zero"

    def _evaluate(self, r: np.ndarray) -> np.ndarray:
        return np.zeros_like(r)


_SQ = 1.0 / math.sqrt(2.0)


class OpinionKernel(Kernel):
    """Heterophilious opinion-dynamics kernel, compactly supported on [0, 1.05).

    Five branches: 0.4 near the origin, a cosine ramp up to 1 around 1/sqrt(2),
    a plateau at 1, a cosine ramp down to 0 on [0.95, 1.05), then 0.
    Lipschitz constant 5*pi.
    """

    name = "opinion"

    def _evaluate(self, r: np.ndarray) -> np.ndarray:
        conditions = [
            r < _SQ - 0.05,
            r < _SQ + 0.05,
            r < 0.95,
            r < 1.05,
        ]
        choices = [
            np.full_like(r, 0.4),
            -0.3 * np.cos(10.0 * np.pi * (r - _SQ + 0.05)) + 0.7,
            np.ones_like(r),
            0.5 * np.cos(10.0 * np.pi * (r - 0.95)) + 0.5,
        ]
        return np.select(conditions, choices, default=0.0)


class TruncatedKernel(Kernel):
    """Closed-form kernel on (r_trunc, inf), C1-capped by a*exp(-b*r**cap_power) below.

    The cap parameters are the unique pair matching value and slope at r_trunc:
    b = -base'(r_t) / (p * r_t**(p-1) * base(r_t)),  a = base(r_t) * exp(b * r_t**p).
    """

    name = "truncated"

    def __init__(self, r_trunc: float, cap_power: float):
        if r_trunc <= 0:
            raise ValueError(f"r_trunc must be positive, got {r_trunc}")
        self.r_trunc = float(r_trunc)
        self.cap_power = float(cap_power)
        value = float(self.base(np.array([self.r_trunc]))[0])
        slope = float(self.base_derivative(np.array([self.r_trunc]))[0])
        if not (math.isfinite(value) and math.isfinite(slope)):
            raise ValueError(f"base kernel not finite at r_trunc={r_trunc}")
        if value == 0.0:
            raise ValueError(f"base kernel vanishes at r_trunc={r_trunc}; exponential match is singular")
        p = self.cap_power
        self.b = -slope / (p * self.r_trunc ** (p - 1.0) * value)
        self.a = value * math.exp(self.b * self.r_trunc ** p)

    def base(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def base_derivative(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cap(self, r: np.ndarray) -> np.ndarray:
        return self.a * np.exp(-self.b * np.asarray(r, dtype=float) ** self.cap_power)

    def cap_derivative(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        p = self.cap_power
        return -p * self.b * r ** (p - 1.0) * self.cap(r)

    def _evaluate(self, r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        outer = r > self.r_trunc
        out[outer] = self.base(r[outer])
        out[~outer] = self.cap(r[~outer])
        return out


class PowerKernel(TruncatedKernel):
    """phi(r) = c0 + c1 * r**exponent, capped by a*exp(-b*r) at r_trunc."""

    name = "power"

    def __init__(self, c0: float, c1: float, exponent: float, r_trunc: float):
        self.c0 = float(c0)
        self.c1 = float(c1)
        self.exponent = float(exponent)
        super().__init__(r_trunc=r_trunc, cap_power=1.0)

    def base(self, r: np.ndarray) -> np.ndarray:
        return self.c0 + self.c1 * np.asarray(r, dtype=float) ** self.exponent

    def base_derivative(self, r: np.ndarray) -> np.ndarray:
        return self.c1 * self.exponent * np.asarray(r, dtype=float) ** (self.exponent - 1.0)

    def params(self) -> Dict[str, Any]:
        return {"c0": self.c0, "c1": self.c1, "exp": self.exponent, "r_trunc": self.r_trunc}


class LennardJonesKernel(TruncatedKernel):
    """phi(r) = Phi'(r)/r for the (p, q) Lennard-Jones-type potential

    Phi(r) = p*eps/(p-q) * [ (q/p)*(r_m/r)**p - (r_m/r)**q ],

    capped by a*exp(-b*r**12) at r_trunc.
    """

    name = "lj"

    def __init__(self, p: float, q: float, eps: float, r_m: float, r_trunc: float):
        if not (p > q > 0):
            raise ValueError(f"need p > q > 0, got p={p}, q={q}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if not (r_m > r_trunc > 0):
            raise ValueError(f"need r_m > r_trunc > 0, got r_m={r_m}, r_trunc={r_trunc}")
        self.p = float(p)
        self.q = float(q)
        self.eps = float(eps)
        self.r_m = float(r_m)
        super().__init__(r_trunc=r_trunc, cap_power=12.0)

    @property
    def _scale(self) -> float:
        return self.p * self.q * self.eps / (self.p - self.q)

    def potential(self, r: Any) -> Any:
        r = np.asarray(r, dtype=float)
        ratio = self.r_m / r
        return self.p * self.eps / (self.p - self.q) * (
            (self.q / self.p) * ratio ** self.p - ratio ** self.q
        )

    def base(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self._scale * (
            self.r_m ** self.q * r ** (-self.q - 2.0) - self.r_m ** self.p * r ** (-self.p - 2.0)
        )

    def base_derivative(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self._scale * (
            -(self.q + 2.0) * self.r_m ** self.q * r ** (-self.q - 3.0)
            + (self.p + 2.0) * self.r_m ** self.p * r ** (-self.p - 3.0)
        )

    def params(self) -> Dict[str, Any]:
        return {"p": self.p, "q": self.q, "eps": self.eps, "r_m": self.r_m, "r_trunc": self.r_trunc}


class TabulatedKernel(Kernel):
    """Piecewise-linear interpolant of grid samples with constant extrapolation."""

    name = "tabulated"

    def __init__(self, grid: Sequence[float], values: Sequence[float]):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape or self.grid.size < 2:
            raise ValueError("tabulated kernel needs matching 1-D grid and values with >= 2 nodes")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("tabulated kernel grid must be strictly increasing")

    def _evaluate(self, r: np.ndarray) -> np.ndarray:
        return np.interp(r, self.grid, self.values)

    def params(self) -> Dict[str, Any]:
        return {"grid": self.grid.tolist(), "values": self.values.tolist()}


def opinion_kernel(r: Any) -> Any:
    """Evaluate the opinion-dynamics kernel."""
    return OpinionKernel()(r)


def make_truncated_power_kernel(c0: float, c1: float, exponent: float, r_trunc: float) -> PowerKernel:
    """Build c0 + c1*r**exponent, C1-capped by a*exp(-b*r) below r_trunc."""
    return PowerKernel(c0=c0, c1=c1, exponent=exponent, r_trunc=r_trunc)


def make_lj_kernel(p: float, q: float, eps: float, r_m: float, r_trunc: float) -> LennardJonesKernel:
    """Build the capped Lennard-Jones-type kernel Phi'(r)/r."""
    return LennardJonesKernel(p=p, q=q, eps=eps, r_m=r_m, r_trunc=r_trunc)


KERNEL_REGISTRY: Dict[str, Callable[..., Kernel]] = {
    "opinion": lambda: OpinionKernel(),
    "power": lambda c0, c1, exp, r_trunc: PowerKernel(c0, c1, exp, r_trunc),
    "lj": lambda p, q, eps, r_m, r_trunc: LennardJonesKernel(p, q, eps, r_m, r_trunc),
    "zero": lambda: ZeroKernel(),
    "tabulated": lambda grid, values: TabulatedKernel(grid, values),
}


def build_kernel(name: str, params: Dict[str, Any] = None) -> Kernel:
    """Resolve a kernel by registry name.

    Raises:
        ConfigError: unknown name or parameters that do not fit the family
    """
    if name not in KERNEL_REGISTRY:
        raise ConfigError(f"Unknown kernel '{name}'. Known kernels: {sorted(KERNEL_REGISTRY)}")
    try:
        return KERNEL_REGISTRY[name](**(params or {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid parameters for kernel '{name}': {e}") from e


def lipschitz_estimate(kernel: Callable, lo: float, hi: float, step: float = 1e-4) -> float:
    """Largest finite-difference slope of ``kernel`` on a uniform grid over [lo, hi]."""
    nodes = max(int(math.ceil((hi - lo) / step)), 1)
    grid = np.linspace(lo, hi, nodes + 1)
    values = np.asarray(kernel(grid), dtype=float)
    return float(np.max(np.abs(np.diff(values) / np.diff(grid))))


def admissible_constant(kernel: Callable, R: float, step: float = 1e-4) -> float:
    """Grid estimate of Lip[z -> phi(|z|) z] on the ball of radius R.

    The Jacobian of that map has eigenvalues phi(r) and phi(r) + r*phi'(r).
    """
    nodes = max(int(math.ceil(R / step)), 1)
    grid = np.linspace(0.0, R, nodes + 1)
    values = np.asarray(kernel(grid), dtype=float)
    slope = np.gradient(values, grid)
    radial = values + grid * slope
    return float(max(np.max(np.abs(values)), np.max(np.abs(radial))))
