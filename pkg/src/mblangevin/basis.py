"""Scalar basis functions on which the friction field is decomposed.

A friction field xi(theta) = sum_k xi_k f_k(theta) needs a small set of scalar
functions f_0..f_K.  Supported kinds: the constant function, indicators of
half-open boxes, monomials rescaled to [0, 1] inside a box, and cosines.
Functions carry a normalization constant so that, after calibration on samples
from the posterior, each has unit empirical L2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateBox, OverlappingBoxes

KIND_CONSTANT = 0
KIND_INDICATOR = 1
KIND_MONOMIAL = 2
KIND_COSINE = 3


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box [lo, hi) per dimension."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise DegenerateBox("bound lists disagree in length")
        for a, b in zip(self.lo, self.hi):
            if not b > a:
                raise DegenerateBox(f"upper bound {b} not above lower bound {a}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, theta: np.ndarray) -> bool:
        t = np.asarray(theta, dtype=float).ravel()
        return bool(
            np.all(t >= np.asarray(self.lo)) and np.all(t < np.asarray(self.hi))
        )

    def overlaps(self, other: "Box") -> bool:
        """True if the open interiors intersect."""
        return all(
            a1 < b2 and a2 < b1
            for a1, b1, a2, b2 in zip(self.lo, self.hi, other.lo, other.hi)
        )


@dataclass(frozen=True)
class BasisFunction:
    """One scalar basis function with its normalization divisor."""

    kind: int
    box: Box | None = None
    powers: tuple = ()
    freq: tuple = ()
    norm_const: float = 1.0
    unsupported: bool = False

    def raw_value(self, theta: np.ndarray) -> float:
        """Value before dividing by norm_const."""
        t = np.asarray(theta, dtype=float).ravel()
        if self.kind == KIND_CONSTANT:
            return 1.0
        if self.kind == KIND_COSINE:
            return float(np.cos(np.asarray(self.freq) @ t))
        if not self.box.contains(t):
            return 0.0
        if self.kind == KIND_INDICATOR:
            return 1.0
        lo = np.asarray(self.box.lo)
        hi = np.asarray(self.box.hi)
        u = (t - lo) / (hi - lo)
        return float(np.prod(u ** np.asarray(self.powers)))

    def __call__(self, theta: np.ndarray) -> float:
        return self.raw_value(theta) / self.norm_const


@dataclass(frozen=True)
class BasisSet:
    """Ordered list of basis functions over a parameter space of dimension dim."""

    functions: tuple
    dim: int

    def __len__(self) -> int:
        return len(self.functions)

    def kernel_arrays(self):
        """Flat float64/int64 encoding consumed by the compiled sampler kernels.

        Returns (kinds, lo, hi, powers, freq, norms) with one row per function;
        box-free kinds carry zero rows that the kernels ignore.
        """
        k = len(self.functions)
        d = self.dim
        kinds = np.zeros(k, dtype=np.int64)
        lo = np.zeros((k, d))
        hi = np.ones((k, d))
        powers = np.zeros((k, d))
        freq = np.zeros((k, d))
        norms = np.ones(k)
        for i, f in enumerate(self.functions):
            kinds[i] = f.kind
            norms[i] = f.norm_const
            if f.box is not None:
                lo[i] = f.box.lo
                hi[i] = f.box.hi
            if f.powers:
                powers[i] = f.powers
            if f.freq:
                freq[i] = f.freq
        return kinds, lo, hi, powers, freq, norms


def constant_basis(dim: int) -> BasisSet:
    """The single constant function; reduces the friction field to one matrix."""
    return BasisSet((BasisFunction(KIND_CONSTANT),), dim)


def cosine_basis(dim: int, freqs) -> BasisSet:
    """Constant plus one cosine per frequency vector."""
    fns = [BasisFunction(KIND_CONSTANT)]
    for f in freqs:
        fv = tuple(float(x) for x in np.atleast_1d(f))
        if len(fv) != dim:
            raise DegenerateBox(f"frequency {fv} has wrong dimension")
        fns.append(BasisFunction(KIND_COSINE, freq=fv))
    return BasisSet(tuple(fns), dim)


def _validate_boxes(boxes: list[Box]) -> None:
    if not boxes:
        raise DegenerateBox("need at least one box")
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes[i].overlaps(boxes[j]):
                raise OverlappingBoxes(f"boxes {i} and {j} overlap")


def make_boxes(bounds) -> list[Box]:
    """Build Box values from [(lo_vec, hi_vec), ...] pairs."""
    return [Box(tuple(float(a) for a in lo), tuple(float(b) for b in hi)) for lo, hi in bounds]


def indicator_partition(boxes: list[Box]) -> BasisSet:
    """One indicator per box; the half-open convention resolves shared faces."""
    _validate_boxes(boxes)
    fns = tuple(BasisFunction(KIND_INDICATOR, box=b) for b in boxes)
    return BasisSet(fns, boxes[0].dim)


def tensor_monomials(boxes: list[Box], degree: int) -> BasisSet:
    """All products of per-axis rescaled monomials up to the given degree.

    Each box contributes (degree+1)^d functions; degree 0 reproduces the
    indicator partition.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    _validate_boxes(boxes)
    d = boxes[0].dim
    fns = []
    for b in boxes:
        grids = np.meshgrid(*[np.arange(degree + 1)] * d, indexing="ij")
        for tup in zip(*[g.ravel() for g in grids]):
            pw = tuple(int(x) for x in tup)
            if all(p == 0 for p in pw):
                fns.append(BasisFunction(KIND_INDICATOR, box=b))
            else:
                fns.append(BasisFunction(KIND_MONOMIAL, box=b, powers=pw))
    return BasisSet(tuple(fns), d)


def normalize_l2_pi(basis: BasisSet, theta_samples) -> BasisSet:
    """Set each norm_const to the empirical L2 norm over posterior samples.

    Functions whose estimated norm falls below 1e-8 are flagged unsupported
    and keep norm_const 1 so they stay inert rather than blowing up.
    """
    samples = np.atleast_2d(np.asarray(theta_samples, dtype=float))
    if samples.shape[0] < 1000:
        raise ValueError("need at least 1000 samples for normalization")
    new_fns = []
    for f in basis.functions:
        vals = np.array([f.raw_value(t) for t in samples])
        norm = float(np.sqrt(np.mean(vals**2)))
        if norm < 1e-8:
            new_fns.append(replace(f, norm_const=1.0, unsupported=True))
        else:
            new_fns.append(replace(f, norm_const=norm, unsupported=False))
    return BasisSet(tuple(new_fns), basis.dim)


def evaluate_all(basis: BasisSet, theta: np.ndarray) -> np.ndarray:
    """Vector (f_k(theta) / norm_const_k) for all k."""
    return np.array([f(theta) for f in basis.functions])
