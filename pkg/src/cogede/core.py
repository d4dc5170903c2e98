"""Losses, the Procrustes mixing update and parameter maps shared by all solvers.

Every routine here takes a *split view*: a sequence of blocks, each either an
:class:`~cogede.data.ErpBlock` or a plain ``(X, X_tilde)`` pair. The model for
block ``b`` is ``X_b ~ X_tilde_b @ G @ S_b`` with one generator ``G``
(P_tilde x K) shared by all blocks and one mixing matrix ``S_b`` (K x P) each.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "DegeneracyWarning",
    "NonSmoothPointError",
    "Generator",
    "MixingSet",
    "RegPair",
    "LossTrace",
    "as_pairs",
    "sse",
    "spca_objective",
    "procrustes_update",
    "procrustes_all",
    "softplus",
    "softplus_inv",
    "softplus_map",
    "converged",
    "envelope_gradient",
    "value_function",
    "random_orthonormal_rows",
]


class DegeneracyWarning(RuntimeWarning):
    """A subproblem had a non-unique solution (zero singular value or zero column)."""


class NonSmoothPointError(ArithmeticError):
    """The Procrustes map is not differentiable at the requested point."""


# ---------------------------------------------------------------------------
# parameter containers


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of :func:`softplus` for ``y > 0``: ``log(exp(y) - 1)``."""
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def softplus_map(Gp, Gn):
    """Generator from its two pre-images: ``softplus(Gp) - softplus(Gn)``."""
    return softplus(np.asarray(Gp, dtype=float)) - softplus(np.asarray(Gn, dtype=float))


@dataclass
class Generator:
    """Shared generator matrix, optionally backed by softplus pre-images."""

    G: np.ndarray
    Gp: np.ndarray | None = None
    Gn: np.ndarray | None = None

    @classmethod
    def from_preimages(cls, Gp, Gn):
        Gp = np.array(Gp, dtype=float)
        Gn = np.array(Gn, dtype=float)
        return cls(softplus_map(Gp, Gn), Gp, Gn)

    @property
    def has_preimages(self) -> bool:
        return self.Gp is not None

    @property
    def K(self) -> int:
        return self.G.shape[1]

    def preimages(self, eps: float = 1e-6):
        """Pre-images of ``G``; recovered from the positive and negative parts if absent."""
        if self.has_preimages:
            return self.Gp.copy(), self.Gn.copy()
        Gp = softplus_inv(np.maximum(self.G, 0.0) + eps)
        Gn = softplus_inv(np.maximum(-self.G, 0.0) + eps)
        return Gp, Gn

    def l1_surrogate(self) -> float:
        if not self.has_preimages:
            return float(np.abs(self.G).sum())
        return float(softplus(self.Gp).sum() + softplus(self.Gn).sum())

    def copy(self) -> "Generator":
        return Generator(
            self.G.copy(),
            None if self.Gp is None else self.Gp.copy(),
            None if self.Gn is None else self.Gn.copy(),
        )


@dataclass
class MixingSet:
    """Per-block mixing matrices keyed by ``(modality, subject)``."""

    S: dict
    constraint_kind: str = "orthonormal_rows"

    def __getitem__(self, key):
        return self.S[key]

    def __iter__(self):
        return iter(self.S)

    def __len__(self):
        return len(self.S)

    def values(self):
        return list(self.S.values())

    def constraint_violation(self) -> float:
        """Largest deviation from the constraint over all blocks."""
        worst = 0.0
        for S in self.S.values():
            if self.constraint_kind == "orthonormal_rows":
                worst = max(worst, np.abs(S @ S.T - np.eye(S.shape[0])).max())
            else:
                worst = max(worst, np.abs(S.sum(axis=0) - 1.0).max(), max(0.0, -S.min()))
        return float(worst)


@dataclass(frozen=True)
class RegPair:
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2):
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"regularization strengths must be finite and >= 0, got {v}")


@dataclass
class LossTrace:
    """Objective value and elapsed wall time (seconds) per recorded iteration."""

    values: list = field(default_factory=list)
    times: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def append(self, value: float):
        self.values.append(float(value))
        self.times.append(time.perf_counter() - self._t0)

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------------------
# losses


def as_pairs(blocks):
    """Normalize a split view to a list of ``(X, X_tilde)`` arrays."""
    pairs = []
    for b in blocks:
        if hasattr(b, "tilde"):
            pairs.append((b.data, b.tilde))
        else:
            X, Xt = b
            pairs.append((np.asarray(X, dtype=float), np.asarray(Xt, dtype=float)))
    return pairs


def _mixing_list(S, n):
    if isinstance(S, MixingSet):
        S = S.values()
    elif isinstance(S, np.ndarray):
        S = [S]
    S = list(S)
    if len(S) != n:
        raise ValueError(f"need one mixing matrix per block: {len(S)} given for {n} blocks")
    return S


def _G(G):
    return G.G if isinstance(G, Generator) else np.asarray(G, dtype=float)


def sse(blocks, G, S) -> float:
    """Summed squared reconstruction error ``sum_b ||X_b - X_tilde_b G S_b||_F^2``."""
    pairs = as_pairs(blocks)
    S = _mixing_list(S, len(pairs))
    G = _G(G)
    total = 0.0
    for (X, Xt), Sb in zip(pairs, S):
        if Xt.shape[1] != G.shape[0] or Sb.shape != (G.shape[1], X.shape[1]):
            raise ValueError(
                f"shape mismatch: X {X.shape}, X_tilde {Xt.shape}, G {G.shape}, S {Sb.shape}"
            )
        R = X - (Xt @ G) @ Sb
        total += float(np.sum(R * R))
    return total


def penalty(G, reg: RegPair) -> tuple[float, float]:
    """(l2 term, l1 term) of the elastic-net penalty, before multiplying by lambdas.

    The l1 term uses the softplus surrogate when ``G`` carries pre-images.
    """
    if isinstance(G, Generator):
        return float(np.sum(G.G * G.G)), G.l1_surrogate()
    G = np.asarray(G, dtype=float)
    return float(np.sum(G * G)), float(np.abs(G).sum())


def combine(sse_value, l2, l1, reg: RegPair) -> float:
    # fixed evaluation order: warm-start bookkeeping relies on it
    return (sse_value + reg.lambda2 * l2) + reg.lambda1 * l1


def spca_objective(blocks, G, S, reg: RegPair) -> float:
    """Sparse PCA objective: SSE plus ``lambda2 ||G||^2 + lambda1 ||G||_1``.

    If ``G`` is a :class:`Generator` with pre-images, the l1 part is
    ``sum(softplus(Gp) + softplus(Gn))``; pass ``G.G`` for the exact norm.
    """
    l2, l1 = penalty(G, reg)
    return combine(sse(blocks, G, S), l2, l1, reg)


# ---------------------------------------------------------------------------
# Procrustes


def _degenerate(s) -> bool:
    return s.size == 0 or s[-1] <= s[0] * 1e-12 * max(s.size, 1) or s[0] == 0.0


def _procrustes_from_cross(M):
    """Row-orthonormal ``S`` maximizing ``trace(S @ M)`` for ``M`` of shape (P, K)."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return (U @ Vt).T, s


def procrustes_update(X, X_tilde, G, return_singular_values=False):
    """Optimal mixing matrix for one block at fixed generator.

    Solves ``min_S ||X - X_tilde G S||_F^2`` subject to ``S S^T = I`` through
    the thin SVD ``X^T X_tilde G = U diag(s) V^T`` and ``S = V U^T``.

    Parameters
    ----------
    X : ndarray (N, P)
    X_tilde : ndarray (N, P_tilde)
    G : ndarray (P_tilde, K) or Generator

    Returns
    -------
    S : ndarray (K, P)
    s : ndarray (K,), only if ``return_singular_values``

    Warns
    -----
    DegeneracyWarning
        If ``X^T X_tilde G`` is rank deficient; the returned ``S`` is then one
        of several minimizers.
    """
    G = _G(G)
    X = np.asarray(X, dtype=float)
    M = X.T @ (np.asarray(X_tilde, dtype=float) @ G)
    if G.shape[1] > X.shape[1]:
        raise ValueError(f"K={G.shape[1]} exceeds P={X.shape[1]}; no row-orthonormal S exists")
    S, s = _procrustes_from_cross(M)
    if _degenerate(s):
        warnings.warn("rank-deficient Procrustes cross-product; S is not unique",
                      DegeneracyWarning, stacklevel=2)
    if return_singular_values:
        return S, s
    return S


def procrustes_all(pairs, G):
    """Procrustes update for every block; returns (list of S, any_degenerate)."""
    out = []
    degenerate = False
    for X, Xt in pairs:
        S, s = _procrustes_from_cross(X.T @ (Xt @ G))
        degenerate |= _degenerate(s)
        out.append(S)
    return out, degenerate


def random_orthonormal_rows(rng, K, P):
    """Uniformly random K x P matrix with orthonormal rows (QR of a Gaussian)."""
    Q, R = np.linalg.qr(rng.standard_normal((P, K)))
    return (Q * np.sign(np.diag(R))).T


# ---------------------------------------------------------------------------
# convergence and gradients


def converged(trace, tol: float = 1e-8, window: int = 5) -> bool:
    """Relative gap between the two lowest values of the last ``window`` entries.

    Returns ``False`` while fewer than ``window`` values are recorded.
    """
    values = trace.values if isinstance(trace, LossTrace) else list(trace)
    if len(values) < window or window < 2:
        return False
    a, b = sorted(values[-window:])[:2]
    return (b - a) / max(abs(a), 1e-300) < tol


def _grad_G(pairs, G, S_list):
    """Partial derivative of the SSE with respect to G at fixed mixing matrices."""
    dG = np.zeros_like(G)
    for (X, Xt), S in zip(pairs, S_list):
        R = X - (Xt @ G) @ S
        dG -= 2.0 * (Xt.T @ (R @ S.T))
    return dG


def preimage_gradient(dG, Gp, Gn, reg: RegPair):
    """Chain a gradient in G (without the l1 term) back to the pre-images."""
    sp = expit(Gp)
    sn = expit(Gn)
    return (dG + reg.lambda1) * sp, (-dG + reg.lambda1) * sn


def envelope_gradient(blocks, Gp, Gn, reg: RegPair):
    """Gradient of the surrogate SPCA objective with respect to ``(Gp, Gn)``.

    The mixing matrices are re-solved by Procrustes at ``G = softplus(Gp) -
    softplus(Gn)``. Since they minimize the SSE over the orthonormal-row
    manifold, the total derivative equals the partial derivative at fixed S.

    Raises
    ------
    NonSmoothPointError
        If any block's Procrustes cross-product is rank deficient.
    """
    pairs = as_pairs(blocks)
    Gp = np.asarray(Gp, dtype=float)
    Gn = np.asarray(Gn, dtype=float)
    G = softplus_map(Gp, Gn)
    S_list, degenerate = procrustes_all(pairs, G)
    if degenerate:
        raise NonSmoothPointError("non-smooth point: zero singular value in Procrustes update")
    dG = _grad_G(pairs, G, S_list) + 2.0 * reg.lambda2 * G
    return preimage_gradient(dG, Gp, Gn, reg)


def value_function(blocks, Gp, Gn, reg: RegPair) -> float:
    """Surrogate objective with S re-solved: ``min_S objective(Gp, Gn, S)``."""
    pairs = as_pairs(blocks)
    gen = Generator.from_preimages(Gp, Gn)
    S_list, _ = procrustes_all(pairs, gen.G)
    return spca_objective(pairs, gen, S_list, reg)
