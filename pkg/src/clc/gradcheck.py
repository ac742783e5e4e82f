"""Central finite-difference checks for the analytic loss and head gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .heads import HeadParams, head_backward, head_forward
from .losses import Label, LossConfig, NBestBatch, PfBatch, nbest_loss, pf_loss

FD_STEP = 1e-5
REL_TOL = 1e-6


@dataclass
class GradCheckReport:
    name: str
    seed: int
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = REL_TOL

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "max_rel_error": dict(self.max_rel_error),
            "worst": self.worst,
            "passed": self.passed,
        }


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        f_plus = f()
        flat[j] = orig - step
        f_minus = f()
        flat[j] = orig
        g[j] = (f_plus - f_minus) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entry deviation relative to the tensor's largest magnitude.

    Per-entry ratios are meaningless for entries near zero, where the
    ~1e-10 absolute floor of central differences dominates.
    """
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale == 0.0:
        return diff
    return diff / scale


def random_pf_batch(rng: np.random.Generator, n: int, d: int) -> PfBatch:
    return PfBatch(
        current=rng.normal(size=(n, d)),
        past=rng.normal(size=(n, d)),
        future=rng.normal(size=(n, d)),
    )


def pf_grad_check(seed: int, dims: tuple[int, int] = (4, 3), cfg: LossConfig | None = None) -> GradCheckReport:
    cfg = cfg or LossConfig()
    n, d = dims
    batch = random_pf_batch(np.random.default_rng(seed), n, d)
    _, grads = pf_loss(batch, cfg)

    def f():
        return pf_loss(batch, cfg)[0]

    report = GradCheckReport("pf_loss", seed)
    for name in ("current", "past", "future"):
        numeric = numeric_grad(f, getattr(batch, name))
        report.max_rel_error[name] = rel_error(getattr(grads, name), numeric)
    return report


def random_nbest_batch(
    rng: np.random.Generator, n: int, k: int, d: int, *, tie_gap: float | None = None
) -> NBestBatch:
    """Random batch with mixed labels; sample 0 is always a rephrase sample.

    With ``tie_gap`` set, sample 0's two best alternatives are placed at
    similarities that differ by exactly ``tie_gap``.
    """
    current = rng.normal(size=(n, d))
    hyps = [rng.normal(size=(k, d)) for _ in range(n)]
    labels = [Label.REPHRASE if i == 0 or rng.random() < 0.5 else Label.SUCCESS for i in range(n)]
    if tie_gap is not None:
        if k < 3 or d < 2:
            raise ValueError("near-tie construction needs K >= 3 and d >= 2")
        u = current[0] / np.linalg.norm(current[0])
        w = rng.normal(size=d)
        w -= u * (u @ w)
        w /= np.linalg.norm(w)
        base = 0.6
        for j, sim in ((1, base + tie_gap), (2, base)):
            hyps[0][j] = sim * u + np.sqrt(1.0 - sim * sim) * w
        # keep the remaining alternatives well below the contested pair
        for j in range(3, k):
            hyps[0][j] = -u + 0.1 * rng.normal(size=d)
    return NBestBatch(current=current, hypotheses=hyps, labels=labels)


def nbest_grad_check(
    seed: int,
    dims: tuple[int, int, int] = (4, 3, 3),
    cfg: LossConfig | None = None,
    *,
    tie_gap: float | None = None,
) -> GradCheckReport:
    cfg = cfg or LossConfig()
    n, k, d = dims
    batch = random_nbest_batch(np.random.default_rng(seed), n, k, d, tie_gap=tie_gap)
    _, grads = nbest_loss(batch, cfg)

    def f():
        return nbest_loss(batch, cfg)[0]

    report = GradCheckReport("nbest_loss" if tie_gap is None else "nbest_loss_near_tie", seed)
    report.max_rel_error["current"] = rel_error(grads.current, numeric_grad(f, batch.current))
    numeric = [numeric_grad(f, hyp) for hyp in batch.hypotheses]
    report.max_rel_error["hypotheses"] = rel_error(
        np.concatenate(grads.hypotheses), np.concatenate(numeric)
    )
    return report


def _composed_loss(heads, frames, cfg, mode, want_grads):
    n = len(frames["current"])
    outs, traces = {}, {}
    for role in ("current", "past", "future"):
        rows, tr = [], []
        for i in range(n):
            out, trace = head_forward(heads[role], frames[role][i], mode, seed=heads[role].rng_seed + i)
            rows.append(out)
            tr.append(trace)
        outs[role] = np.stack(rows)
        traces[role] = tr
    value, grads = pf_loss(PfBatch(**outs), cfg)
    if not want_grads:
        return value
    head_grads, frame_grads = {}, {}
    for role in ("current", "past", "future"):
        total, per_frame = None, []
        for i in range(n):
            g, gf = head_backward(heads[role], traces[role][i], getattr(grads, role)[i])
            total = g if total is None else total + g
            per_frame.append(gf)
        head_grads[role] = total
        frame_grads[role] = per_frame
    return value, head_grads, frame_grads


def _well_conditioned_frames(rng, params, in_dim, *, kink_gap=1e-2, min_var=1e-2):
    """Draw frames whose hidden layer sits away from ReLU kinks and flat LayerNorm.

    Near either point the loss has huge third derivatives and a step-1e-5
    central difference is no longer a valid oracle. A single live unit is
    also rejected: LayerNorm then maps every input to the same vector and
    the true gradient is pure roundoff.
    """
    min_active = min(3, params.hidden_dim)
    for _ in range(1000):
        frames = rng.normal(size=(int(rng.integers(1, 5)), in_dim))
        _, trace = head_forward(params, frames, "eval")
        pre = trace.pre_activation
        if (
            np.min(np.abs(pre)) > kink_gap
            and np.count_nonzero(pre > 0) >= min_active
            and trace.ln_stats[1] > min_var
        ):
            return frames
    raise RuntimeError("could not draw a well-conditioned frame matrix")


def composed_grad_check(
    seed: int,
    dims: tuple[int, int] = (4, 2),
    cfg: LossConfig | None = None,
    *,
    in_dim: int = 3,
    hidden_dim: int = 4,
    mode: str = "eval",
) -> GradCheckReport:
    """FD check of head_forward -> pf_loss w.r.t. all head tensors and frames."""
    cfg = cfg or LossConfig()
    n, d = dims
    rng = np.random.default_rng(seed)
    heads = {}
    for offset, role in enumerate(("current", "past", "future")):
        base = HeadParams.init(in_dim, d, hidden_dim, seed=seed * 3 + offset, dropout_rate=0.2)
        # random LayerNorm affine and biases so every path carries signal
        heads[role] = base.replace(
            b1=0.5 + 0.5 * rng.normal(size=hidden_dim),
            ln_gamma=1.0 + 0.3 * rng.normal(size=hidden_dim),
            ln_beta=0.3 * rng.normal(size=hidden_dim),
            b2=0.3 * rng.normal(size=d),
        )
    frames = {
        role: [_well_conditioned_frames(rng, heads[role], in_dim) for _ in range(n)]
        for role in ("current", "past", "future")
    }
    _, head_grads, frame_grads = _composed_loss(heads, frames, cfg, mode, True)

    def f():
        return _composed_loss(heads, frames, cfg, mode, False)

    report = GradCheckReport(f"head_forward->pf_loss[{mode}]", seed)
    for role in ("current", "past", "future"):
        for tname, tensor in heads[role].tensors().items():
            numeric = numeric_grad(f, tensor)
            report.max_rel_error[f"{role}.{tname}"] = rel_error(
                head_grads[role].tensors()[tname], numeric
            )
        numeric = [numeric_grad(f, fr) for fr in frames[role]]
        report.max_rel_error[f"{role}.frames"] = rel_error(
            np.concatenate(frame_grads[role]), np.concatenate(numeric)
        )
    return report


def run_suite(seeds, cfg: LossConfig | None = None) -> list[GradCheckReport]:
    """Every check family over ``seeds``; used by the ``grad-check`` command."""
    reports = []
    for seed in seeds:
        reports.append(pf_grad_check(seed, (4, 3), cfg))
        reports.append(pf_grad_check(seed, (16, 8), cfg))
        reports.append(nbest_grad_check(seed, (6, 4, 5), cfg))
        reports.append(nbest_grad_check(seed, (4, 4, 3), cfg, tie_gap=1e-3))
        reports.append(composed_grad_check(seed, (4, 2), cfg))
    return reports
