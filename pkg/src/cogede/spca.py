"""Sparse PCA inference for the coupled generator model.

Two engines minimize the same objective

    sum_b ||X_b - X_tilde_b G S_b||_F^2 + lambda2 ||G||_F^2 + lambda1 ||G||_1

with row-orthonormal ``S_b``:

* ``qp``: alternate a Procrustes update of every ``S_b`` with a column-wise
  elastic net for ``G`` solved by cyclic coordinate descent.
* ``sgd``: Adam on softplus pre-images ``G = softplus(Gp) - softplus(Gn)``,
  re-solving ``S_b`` by Procrustes at every step.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _cd
from .core import (
    DegeneracyWarning,
    Generator,
    LossTrace,
    MixingSet,
    RegPair,
    as_pairs,
    combine,
    converged,
    preimage_gradient,
    procrustes_all,
    softplus,
    softplus_map,
    sse,
)
from .data import FusionDataset, read_matrix, write_matrix
from .optim import Adam

__all__ = [
    "FitConfig",
    "FitResult",
    "FitError",
    "train_view",
    "init_pca",
    "init_random",
    "initial_generator",
    "elastic_net_cd",
    "fit_spca_qp",
    "fit_spca_sgd",
    "fit",
]

CD_TOL = 1e-10
CD_MAX_SWEEPS = 10_000
JITTER = 1e-6


class FitError(RuntimeError):
    """A fit could not be completed (e.g. persistent degenerate SVD)."""


@dataclass
class FitConfig:
    K: int
    reg: RegPair = field(default_factory=RegPair)
    engine: str = "sgd"
    init: str = "pca"
    seed: int = 0
    learning_rate: float = 0.01
    max_iters: int = 20_000
    tol: float = 1e-8
    window: int = 5
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.reg, (tuple, list)):
            self.reg = RegPair(*self.reg)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.engine not in ("qp", "sgd"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.init not in ("pca", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        self.betas = tuple(self.betas)

    def to_dict(self):
        d = asdict(self)
        d["reg"] = {"lambda1": self.reg.lambda1, "lambda2": self.reg.lambda2}
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["reg"] = RegPair(**d["reg"])
        return cls(**d)


@dataclass
class FitResult:
    method: str
    config: FitConfig
    generator: Generator
    mixing: MixingSet
    trace: LossTrace
    final_objective: float
    final_objective_exact: float
    final_sse: float
    converged_flag: bool
    iterations: int
    degenerate: bool = False
    wall_time: float = 0.0
    # logits of an archetypal analysis fit, for warm starts
    params: object = None

    @property
    def G(self):
        return self.generator.G

    def summary(self, timing=True):
        out = {
            "method": self.method,
            "engine": self.config.engine,
            "K": self.config.K,
            "lambda1": self.config.reg.lambda1,
            "lambda2": self.config.reg.lambda2,
            "seed": self.config.seed,
            "init": self.config.init,
            "final_objective": self.final_objective,
            "final_objective_exact": self.final_objective_exact,
            "final_sse": self.final_sse,
            "iterations": self.iterations,
            "converged": self.converged_flag,
            "degenerate": self.degenerate,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def save(self, outdir, timing=False):
        """Write ``G.csv``, ``S_<modality>_<subject>.csv``, ``trace.csv`` and ``meta.json``.

        Wall-clock values are only written with ``timing=True`` so that
        repeated runs produce identical files.
        """
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_matrix(outdir / "G.csv", self.generator.G)
        if self.generator.has_preimages:
            write_matrix(outdir / "Gp.csv", self.generator.Gp)
            write_matrix(outdir / "Gn.csv", self.generator.Gn)
        for (m, s), S in self.mixing.S.items():
            write_matrix(outdir / f"S_{m}_{s}.csv", S)
        with open(outdir / "trace.csv", "w", encoding="utf-8") as fh:
            fh.write("iteration,objective" + (",seconds" if timing else "") + "\n")
            for i, v in enumerate(self.trace.values):
                row = f"{i},{v:.17g}"
                if timing:
                    row += f",{self.trace.times[i]:.6f}"
                fh.write(row + "\n")
        meta = {
            **self.summary(timing=timing),
            "constraint_kind": self.mixing.constraint_kind,
            "blocks": [[m, s] for m, s in self.mixing.S],
            "config": self.config.to_dict(),
        }
        (outdir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return outdir

    @classmethod
    def load(cls, outdir):
        outdir = Path(outdir)
        meta = json.loads((outdir / "meta.json").read_text(encoding="utf-8"))
        G = read_matrix(outdir / "G.csv")
        if (outdir / "Gp.csv").is_file():
            gen = Generator(G, read_matrix(outdir / "Gp.csv"), read_matrix(outdir / "Gn.csv"))
        else:
            gen = Generator(G)
        S = {(m, s): read_matrix(outdir / f"S_{m}_{s}.csv") for m, s in meta["blocks"]}
        trace = LossTrace()
        rows = np.loadtxt(outdir / "trace.csv", delimiter=",", skiprows=1, ndmin=2)
        trace.values = [float(v) for v in rows[:, 1]]
        trace.times = [float(t) for t in rows[:, 2]] if rows.shape[1] > 2 else [0.0] * len(rows)
        return cls(
            method=meta["method"],
            config=FitConfig.from_dict(meta["config"]),
            generator=gen,
            mixing=MixingSet(S, meta["constraint_kind"]),
            trace=trace,
            final_objective=meta["final_objective"],
            final_objective_exact=meta["final_objective_exact"],
            final_sse=meta["final_sse"],
            converged_flag=meta["converged"],
            iterations=meta["iterations"],
            degenerate=meta["degenerate"],
            wall_time=meta.get("wall_time", 0.0),
        )


# ---------------------------------------------------------------------------
# helpers


def train_view(dataset):
    """The blocks a model is fitted on: the train split of a dataset, or a list as given."""
    if isinstance(dataset, FusionDataset):
        blocks = dataset.split("train")
        if not blocks:
            raise ValueError("dataset has no train split")
        return blocks
    return list(dataset)


def block_keys(blocks):
    keys = []
    for i, b in enumerate(blocks):
        keys.append((b.modality, b.subject) if hasattr(b, "modality") else ("block", str(i)))
    return keys


def init_pca(blocks, K) -> Generator:
    """First K right singular vectors of the row-stacked ``X_tilde`` blocks.

    Signs are fixed so that the largest-magnitude entry of each column is positive.
    """
    pairs = as_pairs(train_view(blocks))
    stacked = np.vstack([Xt for _, Xt in pairs])
    _, s, Vt = np.linalg.svd(stacked, full_matrices=False)
    if K > Vt.shape[0]:
        raise ValueError(f"K={K} exceeds the {Vt.shape[0]} available singular vectors")
    G = Vt[:K].T.copy()
    idx = np.argmax(np.abs(G), axis=0)
    G *= np.sign(G[idx, np.arange(K)])
    return Generator(G)


def init_random(K, P_tilde, seed) -> Generator:
    """Standard-normal pre-images, deterministic in ``seed``."""
    rng = np.random.default_rng(int(seed))
    Gp = rng.standard_normal((P_tilde, K))
    Gn = rng.standard_normal((P_tilde, K))
    return Generator.from_preimages(Gp, Gn)


def initial_generator(blocks, config: FitConfig) -> Generator:
    pairs = as_pairs(blocks)
    if config.init == "pca":
        return init_pca(pairs, config.K)
    return init_random(config.K, pairs[0][1].shape[1], config.seed)


def elastic_net_cd(design, response, reg: RegPair, warm_start=None,
                   tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Elastic net ``||y - D g||^2 + lambda2 ||g||^2 + lambda1 ||g||_1`` by coordinate descent.

    Each coordinate is set to ``soft(c_j, lambda1 / 2) / (d_j + lambda2)`` where
    ``d_j`` is the squared column norm and ``c_j`` the inner product of
    column j with the partial residual. Stops once no coordinate moves by
    ``tol`` during a sweep.

    Warns
    -----
    DegeneracyWarning
        A design column is zero and both penalties vanish; its coefficient is 0.
    """
    D = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    w0 = np.zeros(D.shape[1]) if warm_start is None else np.asarray(warm_start, dtype=float)
    A = D.T @ D
    B = (D.T @ y)[:, None]
    W, _, degenerate = _cd.enet_cd_gram(A, B, float(reg.lambda1), float(reg.lambda2),
                                        w0[:, None].copy(), tol, max_sweeps)
    if degenerate:
        warnings.warn("zero design column without penalty; coefficient fixed at 0",
                      DegeneracyWarning, stacklevel=2)
    return W[:, 0]


def _exact_objective(pairs, G, S_list, reg):
    return combine(sse(pairs, G, S_list), float(np.sum(G * G)), float(np.abs(G).sum()), reg)


def _result(method, config, pairs, keys, gen, S_list, trace, converged_flag, iterations,
            degenerate, t0):
    reg = config.reg
    final_sse = sse(pairs, gen.G, S_list)
    l2 = float(np.sum(gen.G * gen.G))
    return FitResult(
        method=method,
        config=config,
        generator=gen,
        mixing=MixingSet(dict(zip(keys, S_list)), "orthonormal_rows"),
        trace=trace,
        final_objective=combine(final_sse, l2, gen.l1_surrogate(), reg),
        final_objective_exact=combine(final_sse, l2, float(np.abs(gen.G).sum()), reg),
        final_sse=final_sse,
        converged_flag=bool(converged_flag),
        iterations=int(iterations),
        degenerate=bool(degenerate),
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# engines


def fit_spca_qp(dataset, config: FitConfig, warm_start: Generator | None = None) -> FitResult:
    """Alternating Procrustes / elastic-net sparse PCA.

    Each alternation solves every ``S_b`` exactly and then every column of
    ``G`` by coordinate descent on the stacked design ``[X_tilde_1; ...]``
    with responses ``[X_1 S_1^T; ...]``, warm-started at the current ``G``.
    The recorded objective uses the exact l1 norm and never increases.
    """
    t0 = time.perf_counter()
    blocks = train_view(dataset)
    pairs = as_pairs(blocks)
    keys = block_keys(blocks)
    reg = config.reg
    G = (warm_start if warm_start is not None else initial_generator(pairs, config)).G.copy()

    A = sum(Xt.T @ Xt for _, Xt in pairs)
    S_list, degenerate = procrustes_all(pairs, G)
    trace = LossTrace()
    trace.append(_exact_objective(pairs, G, S_list, reg))
    done = converged(trace, config.tol, config.window)
    it = 0
    while not done and it < config.max_iters:
        B = sum(Xt.T @ (X @ S.T) for (X, Xt), S in zip(pairs, S_list))
        G, _, zero_col = _cd.enet_cd_gram(A, B, float(reg.lambda1), float(reg.lambda2),
                                          G, CD_TOL, CD_MAX_SWEEPS)
        S_list, deg = procrustes_all(pairs, G)
        degenerate |= deg or zero_col
        trace.append(_exact_objective(pairs, G, S_list, reg))
        it += 1
        done = converged(trace, config.tol, config.window)
    if degenerate:
        warnings.warn("degenerate subproblem encountered during qp fit", DegeneracyWarning,
                      stacklevel=2)
    return _result("spca", config, pairs, keys, Generator(G), S_list, trace, done, it,
                   degenerate, t0)


def fit_spca_sgd(dataset, config: FitConfig, warm_start: Generator | None = None) -> FitResult:
    """Adam on the softplus pre-images with Procrustes-solved mixing matrices.

    The recorded objective uses the surrogate l1 penalty
    ``sum(softplus(Gp) + softplus(Gn))``; the result also carries the
    objective with the exact l1 norm of the final ``G``. On a rank-deficient
    Procrustes step the pre-images are jittered once; a second occurrence
    raises :class:`FitError`.
    """
    t0 = time.perf_counter()
    blocks = train_view(dataset)
    pairs = as_pairs(blocks)
    keys = block_keys(blocks)
    reg = config.reg
    start = warm_start if warm_start is not None else initial_generator(pairs, config)
    Gp, Gn = start.preimages()
    opt = Adam([Gp, Gn], lr=config.learning_rate, betas=config.betas, eps=config.adam_eps)
    jitter_rng = np.random.default_rng([int(config.seed), 1])
    jittered = False

    trace = LossTrace()
    best = (np.inf, None, None, None, None)
    it = 0
    while True:
        G = softplus_map(Gp, Gn)
        S_list, deg = procrustes_all(pairs, G)
        if deg:
            if jittered:
                raise FitError("non-smooth point: degenerate Procrustes update persists after jitter")
            jittered = True
            Gp += JITTER * jitter_rng.standard_normal(Gp.shape)
            Gn += JITTER * jitter_rng.standard_normal(Gn.shape)
            continue
        total = 0.0
        dG = 2.0 * reg.lambda2 * G
        for (X, Xt), S in zip(pairs, S_list):
            R = X - (Xt @ G) @ S
            total += float(np.sum(R * R))
            dG -= 2.0 * (Xt.T @ (R @ S.T))
        l1 = float(softplus(Gp).sum() + softplus(Gn).sum())
        value = combine(total, float(np.sum(G * G)), l1, reg)
        trace.append(value)
        if value < best[0]:
            best = (value, G, Gp.copy(), Gn.copy(), S_list)
        done = converged(trace, config.tol, config.window)
        if done or it >= config.max_iters:
            break
        opt.step(preimage_gradient(dG, Gp, Gn, reg))
        it += 1
    _, G, Gp, Gn, S_list = best
    gen = Generator(G, Gp, Gn)
    return _result("spca", config, pairs, keys, gen, S_list, trace, done, it, jittered, t0)


def fit(dataset, config: FitConfig, warm_start: Generator | None = None) -> FitResult:
    """Dispatch to the engine named in ``config``."""
    if config.engine == "qp":
        return fit_spca_qp(dataset, config, warm_start)
    return fit_spca_sgd(dataset, config, warm_start)
