"""Periodic derivative operators with certified symmetry structure.

Two families on a uniform periodic grid with spacing dx:

* classical central finite differences (dense circulant matrices built from
  the usual stencil tables), and
* Fourier collocation matrices (built by differentiating the trigonometric
  interpolant through the FFT, cf. Trefethen, "Spectral Methods in MATLAB").

Odd derivative orders yield skew-symmetric matrices, even orders symmetric
negative-semidefinite ones. Downstream energy arguments rely on exactly this
structure, so it is checked at construction time. The quadrature weights are
uniform (dx) for both families.
"""

from dataclasses import dataclass

import numpy as np

SYMMETRY_SKEW = "skew"
SYMMETRY_NSD = "symmetric-nsd"

FAMILY_CENTRAL = "central-fd"
FAMILY_FOURIER = "fourier"

# (deriv_order, accuracy_order) -> (offsets, coefficients); scale by dx**-deriv_order.
_CENTRAL_STENCILS = {
    (1, 2): ((-1, 0, 1), (-1 / 2, 0.0, 1 / 2)),
    (1, 4): ((-2, -1, 0, 1, 2), (1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12)),
    (1, 6): ((-3, -2, -1, 0, 1, 2, 3),
             (-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60)),
    (2, 2): ((-1, 0, 1), (1.0, -2.0, 1.0)),
    (2, 4): ((-2, -1, 0, 1, 2), (-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12)),
    (2, 6): ((-3, -2, -1, 0, 1, 2, 3),
             (1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90)),
    (3, 2): ((-2, -1, 0, 1, 2), (-1 / 2, 1.0, 0.0, -1.0, 1 / 2)),
    (3, 4): ((-3, -2, -1, 0, 1, 2, 3),
             (1 / 8, -1.0, 13 / 8, 0.0, -13 / 8, 1.0, -1 / 8)),
}


@dataclass(frozen=True)
class MassMatrix:
    """Diagonal quadrature weights, all positive (uniform = dx here)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0.0):
            raise ValueError("mass weights must be a vector of positive numbers")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class GridOperator:
    """Dense circulant derivative operator plus its structural metadata."""

    n: int
    dx: float
    deriv_order: int
    symmetry: str
    action: np.ndarray
    family: str

    def __post_init__(self):
        self.action.flags.writeable = False

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"vector of shape {u.shape} does not match operator size {self.n}")
        return self.action @ u


def uniform_mass(n: int, dx: float) -> MassMatrix:
    return MassMatrix(weights=np.full(n, float(dx)))


def grid_nodes(x_min: float, x_max: float, n: int):
    """Uniform nodes on the half-open periodic interval (x_min, x_max]."""
    dx = (x_max - x_min) / n
    return x_min + dx * np.arange(1, n + 1)


def _certify(action, symmetry, what):
    scale = np.max(np.abs(action))
    if symmetry == SYMMETRY_SKEW:
        defect = np.max(np.abs(action + action.T))
    else:
        defect = np.max(np.abs(action - action.T))
    if defect > 1e-13 * scale:
        raise ValueError(f"{what}: symmetry defect {defect:.3e} exceeds 1e-13 * {scale:.3e}")
    const = np.max(np.abs(action.sum(axis=1)))
    if const > 1e-12 * max(scale, 1.0):
        raise ValueError(f"{what}: does not annihilate constants ({const:.3e})")


def make_central_fd(deriv_order: int, n: int, dx: float, accuracy_order: int = 4) -> GridOperator:
    """Classical central difference operator on a periodic grid.

    Supported (deriv_order, accuracy_order) pairs are the entries of the
    stencil table; anything else is rejected.
    """
    key = (int(deriv_order), int(accuracy_order))
    if key not in _CENTRAL_STENCILS:
        raise ValueError(f"unsupported derivative/accuracy combination {key}")
    if dx <= 0.0:
        raise ValueError("dx must be positive")
    offsets, coeffs = _CENTRAL_STENCILS[key]
    width = len(offsets)
    if n <= width:
        raise ValueError(f"need more than {width} nodes for this stencil, got {n}")
    row0 = np.zeros(n)
    for off, c in zip(offsets, coeffs):
        row0[off % n] += c / dx ** deriv_order
    # circulant: row i is row 0 cyclically shifted by i
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    action = row0[idx]
    symmetry = SYMMETRY_SKEW if deriv_order % 2 == 1 else SYMMETRY_NSD
    _certify(action, symmetry, f"central-fd d{deriv_order} order {accuracy_order}")
    return GridOperator(n=n, dx=float(dx), deriv_order=deriv_order,
                        symmetry=symmetry, action=action, family=FAMILY_CENTRAL)


def make_fourier(deriv_order: int, n: int, domain_length: float) -> GridOperator:
    """Fourier collocation differentiation matrix on a periodic grid.

    The first-derivative symbol zeroes the Nyquist mode so the matrix stays
    real and skew-symmetric; the second derivative keeps the full -k^2 symbol
    (the exact collocation matrix, not D1 @ D1).
    """
    if deriv_order not in (1, 2):
        raise ValueError("Fourier operators are available for derivative orders 1 and 2")
    if n % 2 != 0:
        raise ValueError("Fourier collocation requires an even number of nodes")
    if domain_length <= 0.0:
        raise ValueError("domain length must be positive")
    k = 2.0 * np.pi / domain_length * (np.fft.fftfreq(n) * n)
    if deriv_order == 1:
        symbol = 1j * k
        symbol[n // 2] = 0.0
    else:
        symbol = -(k ** 2) + 0j
    spectrum = np.fft.fft(np.eye(n), axis=0)
    action = np.real(np.fft.ifft(symbol[:, None] * spectrum, axis=0))
    symmetry = SYMMETRY_SKEW if deriv_order == 1 else SYMMETRY_NSD
    _certify(action, symmetry, f"fourier d{deriv_order}")
    return GridOperator(n=n, dx=float(domain_length) / n, deriv_order=deriv_order,
                        symmetry=symmetry, action=action, family=FAMILY_FOURIER)
