"""Archetypal analysis in the coupled generator model.

Both ``G`` (P_tilde x K, shared) and every ``S_b`` (K x P) are column
stochastic, obtained as column-wise softmax of unconstrained logits. The
archetypes of block ``b`` are the columns of ``X_tilde_b G`` and each
reconstructed column ``X_tilde_b G S_b[:, j]`` is a convex combination of them.
"""

import time
from dataclasses import dataclass

import numpy as np

from .core import Generator, LossTrace, MixingSet, as_pairs, converged, sse
from .optim import Adam
from .spca import FitConfig, FitResult, block_keys, train_view

__all__ = ["AAParams", "softmax_cols", "softmax_cols_backward", "fit_aa_sgd"]


def softmax_cols(logits):
    """Column-wise softmax with max shift."""
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def softmax_cols_backward(y, dy):
    """Gradient w.r.t. the logits given ``y = softmax_cols(z)`` and ``dL/dy``."""
    return y * (dy - np.sum(y * dy, axis=0, keepdims=True))


@dataclass
class AAParams:
    G_logits: np.ndarray
    S_logits: list

    @classmethod
    def random(cls, P_tilde, P, K, n_blocks, seed):
        rng = np.random.default_rng(int(seed))
        G = rng.standard_normal((P_tilde, K))
        return cls(G, [rng.standard_normal((K, P)) for _ in range(n_blocks)])

    def G(self):
        return softmax_cols(self.G_logits)

    def S(self):
        return [softmax_cols(z) for z in self.S_logits]


def fit_aa_sgd(dataset, config: FitConfig, warm_start: AAParams | None = None,
               callback=None) -> FitResult:
    """Fit archetypal analysis with Adam on the logits.

    Minimizes ``sum_b ||X_b - X_tilde_b G S_b||_F^2``; the regularization in
    ``config`` is ignored. Stops by the same relative-gap rule as the SPCA
    engines and returns the iterate with the lowest recorded loss.
    ``callback(iteration, G, S_list)`` is called at every recorded iteration.
    """
    t0 = time.perf_counter()
    blocks = train_view(dataset)
    pairs = as_pairs(blocks)
    keys = block_keys(blocks)
    K = config.K
    P_tilde = pairs[0][1].shape[1]
    P = pairs[0][0].shape[1]
    if warm_start is None:
        params = AAParams.random(P_tilde, P, K, len(pairs), config.seed)
    else:
        params = AAParams(warm_start.G_logits.copy(), [z.copy() for z in warm_start.S_logits])
    opt = Adam([params.G_logits, *params.S_logits], lr=config.learning_rate,
               betas=config.betas, eps=config.adam_eps)

    trace = LossTrace()
    best = (np.inf, None, None, None, None)
    it = 0
    while True:
        G = params.G()
        S_list = params.S()
        if callback is not None:
            callback(it, G, S_list)
        total = 0.0
        dG = np.zeros_like(G)
        dS = []
        for (X, Xt), S in zip(pairs, S_list):
            A = Xt @ G
            R = X - A @ S
            total += float(np.sum(R * R))
            dG -= 2.0 * (Xt.T @ (R @ S.T))
            dS.append(-2.0 * (A.T @ R))
        trace.append(total)
        if total < best[0]:
            best = (total, G, S_list, params.G_logits.copy(), [z.copy() for z in params.S_logits])
        done = converged(trace, config.tol, config.window)
        if done or it >= config.max_iters:
            break
        grads = [softmax_cols_backward(G, dG)]
        grads += [softmax_cols_backward(S, d) for S, d in zip(S_list, dS)]
        opt.step(grads)
        it += 1

    _, G, S_list, G_logits, S_logits = best
    final_sse = sse(pairs, G, S_list)
    result = FitResult(
        method="aa",
        config=config,
        generator=Generator(G),
        mixing=MixingSet(dict(zip(keys, S_list)), "column_stochastic"),
        trace=trace,
        final_objective=final_sse,
        final_objective_exact=final_sse,
        final_sse=final_sse,
        converged_flag=bool(done),
        iterations=it,
        wall_time=time.perf_counter() - t0,
        params=AAParams(G_logits, S_logits),
    )
    return result
