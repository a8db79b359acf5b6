"""Shared oracles and small-model factories for the test suite."""
import math

import numpy as np

from flowrecon.flow import FlowModel
from flowrecon.numeric import ParamStore, no_grad

LOG_2PI = math.log(2.0 * math.pi)


def perturb(store, rng, scale=0.1):
    for t in store.tensors():
        t.data += rng.normal(size=t.shape) * scale


def flow_model(rng, d=4, layers=4, hidden=16, dtype=np.float64, scale=0.1):
    store = ParamStore(dtype)
    flow = FlowModel(store, rng, d, n_layers=layers, hidden=hidden)
    if scale:
        perturb(store, rng, scale)
    return store, flow


def numerical_logdet(flow, u, z, h=1e-5, screen=False):
    """log|det| of the central-difference Jacobian of ``flow.forward`` at each point of ``u`` (B, N, 3).

    With ``screen`` also returns a mask of the points where the map is smooth
    over the stencil: second differences at ``h``, ``h/2`` and ``h/4`` must scale
    as ``h^2``, which a ReLU switch inside the stencil breaks.
    """
    with no_grad():
        fwd = lambda v: flow.forward(v, z)[0].data
        x0 = fwd(u)
        cols, smooth = [], np.ones(u.shape[:-1], dtype=bool)
        noise = 1024 * np.finfo(np.float64).eps * (np.abs(x0).max(axis=-1) + 1.0)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            xp, xm = fwd(u + e), fwd(u - e)
            cols.append((xp - xm) / (2 * h))
            if screen:
                s1 = xp - 2 * x0 + xm
                for d in (2.0, 4.0):
                    sd = (fwd(u + e / d) - 2 * x0 + fwd(u - e / d)) * d * d
                    smooth &= (np.abs(s1 - sd) <= 0.1 * np.abs(s1) + noise[..., None]).all(axis=-1)
    jac = np.stack(cols, axis=-1)  # (B, N, 3, 3), column k = dx/du_k
    logdet = np.linalg.slogdet(jac)[1]
    return (logdet, smooth) if screen else logdet


def std_normal_logpdf(x):
    return -0.5 * (x ** 2).sum(axis=-1) - 1.5 * LOG_2PI


def importance_integral(flow, z, n, rng, widths=(1.5, 3.0), pilot=4096):
    """Estimate of the integral of p(x | z) over R^3; returns (value, stderr).

    The proposal is an equal mixture of Gaussians fitted to independent pilot
    draws from the flow, widened by each factor in ``widths`` so that it covers
    the tails.
    """
    with no_grad():
        pilot_x = flow.sample(z, pilot, rng).data[0].astype(np.float64)
    mu = pilot_x.mean(axis=0)
    chol = np.linalg.cholesky(np.cov(pilot_x, rowvar=False))
    comp = rng.integers(len(widths), size=n)
    scale = np.asarray(widths)[comp][:, None]
    x = mu + scale * (rng.standard_normal((n, 3)) @ chol.T)
    log_det_chol = np.log(np.diag(chol)).sum()
    comps = []
    for w in widths:
        e = np.linalg.solve(chol, (x - mu).T).T / w
        comps.append(std_normal_logpdf(e) - log_det_chol - 3 * math.log(w))
    log_q = np.logaddexp.reduce(np.stack(comps), axis=0) - math.log(len(widths))
    with no_grad():
        log_p = flow.log_prob(x[None], z).data[0]
    w = np.exp(log_p - log_q)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n))


# -- acceptance reporting ----------------------------------------------------------
ACCEPTANCE_LINES: dict = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[criterion] = f"[{criterion:>2}] {'PASS' if passed else 'FAIL'}  {detail}"
    return passed
