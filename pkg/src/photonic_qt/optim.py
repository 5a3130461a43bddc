"""Optimizers used by the training loops: ADAM and a derivative-free COBYLA variant."""

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerAbort


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64), 0)


def adam_step(params, grads, state: AdamState, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected ADAM update; returns new arrays and leaves the inputs untouched."""
    grads = np.asarray(grads, dtype=np.float64)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


@dataclass
class CobylaResult:
    x: np.ndarray
    fun: float
    nfev: int
    rho: float
    history: list = field(default_factory=list, repr=False)


class _Budget(Exception):
    pass


def cobyla_minimize(objective, x0, rhobeg=0.5, rhoend=1e-4, maxfun=None) -> CobylaResult:
    """Unconstrained COBYLA: linear interpolation on a simplex plus a trust region.

    The simplex holds ``n + 1`` evaluated points. Each iteration fits the linear
    model through them, steps a distance ``rho`` downhill from the best vertex,
    and swaps the new point in for the vertex whose removal keeps the simplex
    best conditioned. When a step fails to improve and the geometry is sound,
    ``rho`` is halved. Stops at ``rho < rhoend`` or after ``maxfun`` calls and
    returns the best point evaluated, which is never worse than ``x0``.

    Raises ``OptimizerAbort`` (carrying the best point) on a non-finite value.
    """
    x0 = np.array(x0, dtype=np.float64).reshape(-1)
    n = x0.size
    if maxfun is None:
        maxfun = 200 * max(n, 1)
    if rhoend >= rhobeg:
        raise ValueError("rhoend must be smaller than rhobeg")
    best = {"x": x0.copy(), "f": np.inf}
    nfev = 0
    history = []

    def call(x):
        nonlocal nfev
        if nfev >= maxfun:
            raise _Budget
        f = float(objective(x))
        nfev += 1
        history.append(f)
        if not np.isfinite(f):
            raise OptimizerAbort(best["x"].copy(), best["f"], nfev)
        if f < best["f"]:
            best["x"], best["f"] = x.copy(), f
        return f

    rho = float(rhobeg)
    try:
        sim = [x0.copy()]
        fvals = [call(x0)]
        for j in range(n):
            x = x0.copy()
            x[j] += rho
            sim.append(x)
            fvals.append(call(x))
        sim = np.array(sim)
        fvals = np.array(fvals)

        while rho >= rhoend:
            b = int(np.argmin(fvals))
            others = [k for k in range(n + 1) if k != b]
            edges = sim[others] - sim[b]
            try:
                inv = np.linalg.inv(edges)  # columns: duals of the edges
            except np.linalg.LinAlgError:
                inv = np.linalg.pinv(edges)
            grad = inv @ (fvals[others] - fvals[b])

            # geometry repair: a vertex far outside the trust region is replaced first
            dists = np.linalg.norm(edges, axis=1)
            far = int(np.argmax(dists))
            if dists[far] > 2.1 * rho:
                direction = inv[:, far]
                direction = direction / np.linalg.norm(direction)
                if direction @ grad > 0:
                    direction = -direction
                x_new = sim[b] + rho * direction
                sim[others[far]] = x_new
                fvals[others[far]] = call(x_new)
                continue

            gnorm = np.linalg.norm(grad)
            if gnorm == 0.0:
                rho *= 0.5
                continue
            step = -rho * grad / gnorm
            x_new = sim[b] + step
            f_new = call(x_new)
            # barycentric weight of the step along each edge = volume ratio after a swap
            weights = np.abs(step @ inv)
            if f_new < fvals[b]:
                k = int(np.argmax(weights))
                sim[others[k]] = x_new
                fvals[others[k]] = f_new
                continue
            worst = int(np.argmax(fvals[others]))
            if f_new < fvals[others[worst]] and weights[worst] > 0.1:
                sim[others[worst]] = x_new
                fvals[others[worst]] = f_new
            rho *= 0.5
    except _Budget:
        pass
    return CobylaResult(best["x"], best["f"], nfev, rho, history)
