"""Projection heads mapping a T x k frame matrix to one d-vector.

Layer order: mean pool -> Linear -> ReLU -> LayerNorm -> Dropout -> Linear.
Outputs are not L2-normalized here; the loss ops normalize at similarity time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeMismatch, TraceMismatch
from .tensor import as_matrix, as_vector, read_clce, write_clce

LN_EPS = 1e-5
PARAM_NAMES = ("w1", "b1", "ln_gamma", "ln_beta", "w2", "b2")


@dataclass(frozen=True)
class HeadParams:
    w1: np.ndarray  # (h, k)
    b1: np.ndarray  # (h,)
    ln_gamma: np.ndarray  # (h,)
    ln_beta: np.ndarray  # (h,)
    w2: np.ndarray  # (d, h)
    b2: np.ndarray  # (d,)
    dropout_rate: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        h, k = self.w1.shape
        d = self.w2.shape[0]
        expected = {"b1": (h,), "ln_gamma": (h,), "ln_beta": (h,), "w2": (d, h), "b2": (d,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, **tensors) -> "HeadParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(tensors)
        return HeadParams(**values)

    @classmethod
    def init(
        cls,
        in_dim: int,
        out_dim: int,
        hidden_dim: int | None = None,
        *,
        seed: int = 0,
        dropout_rate: float = 0.1,
    ) -> "HeadParams":
        """Glorot-uniform weights, zero biases, unit LayerNorm gain."""
        h = out_dim if hidden_dim is None else hidden_dim
        rng = np.random.default_rng(seed)

        def glorot(rows, cols):
            limit = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-limit, limit, size=(rows, cols))

        return cls(
            w1=glorot(h, in_dim),
            b1=np.zeros(h),
            ln_gamma=np.ones(h),
            ln_beta=np.zeros(h),
            w2=glorot(out_dim, h),
            b2=np.zeros(out_dim),
            dropout_rate=dropout_rate,
            rng_seed=seed,
        )


@dataclass(frozen=True)
class HeadParamGrads:
    w1: np.ndarray
    b1: np.ndarray
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def __add__(self, other: "HeadParamGrads") -> "HeadParamGrads":
        return HeadParamGrads(**{n: getattr(self, n) + getattr(other, n) for n in PARAM_NAMES})

    @classmethod
    def zeros_like(cls, params: HeadParams) -> "HeadParamGrads":
        return cls(**{n: np.zeros_like(t) for n, t in params.tensors().items()})


@dataclass(frozen=True)
class HeadForwardTrace:
    n_frames: int
    pooled: np.ndarray
    pre_activation: np.ndarray
    post_relu: np.ndarray
    ln_stats: tuple[float, float]  # (mean, variance) over the hidden units
    normalized: np.ndarray  # LayerNorm output before gamma/beta
    dropout_mask: np.ndarray  # bool; all True in eval mode
    dropout_scale: float
    output: np.ndarray


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> tuple[np.ndarray, float, float]:
    """Return ``(x_hat, mean, var)`` with ``x_hat = (x - mean) / sqrt(var + eps)``."""
    mean = float(x.mean())
    var = float(np.mean((x - mean) ** 2))
    return (x - mean) / np.sqrt(var + eps), mean, var


def head_forward(
    params: HeadParams,
    frames,
    mode: str = "eval",
    *,
    seed: int | None = None,
) -> tuple[np.ndarray, HeadForwardTrace]:
    """Run one head over a ``T x k`` frame matrix.

    In ``train`` mode the dropout mask is drawn from ``seed`` (default
    ``params.rng_seed``), so repeated calls with the same seed agree bitwise.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    frames = as_matrix(frames)
    if frames.shape[0] < 1 or frames.shape[1] != params.in_dim:
        raise ShapeMismatch(
            f"frames have shape {frames.shape}, head expects (T>=1, {params.in_dim})"
        )

    pooled = frames.mean(axis=0)
    pre = params.w1 @ pooled + params.b1
    post = np.maximum(pre, 0.0)
    x_hat, mean, var = layer_norm(post)
    ln_out = params.ln_gamma * x_hat + params.ln_beta

    if mode == "train" and params.dropout_rate > 0.0:
        rng = np.random.default_rng(params.rng_seed if seed is None else seed)
        mask = rng.random(params.hidden_dim) >= params.dropout_rate
        scale = 1.0 / (1.0 - params.dropout_rate)
    else:
        mask = np.ones(params.hidden_dim, dtype=bool)
        scale = 1.0
    dropped = ln_out * mask * scale

    out = params.w2 @ dropped + params.b2
    trace = HeadForwardTrace(
        n_frames=frames.shape[0],
        pooled=pooled,
        pre_activation=pre,
        post_relu=post,
        ln_stats=(mean, var),
        normalized=x_hat,
        dropout_mask=mask,
        dropout_scale=scale,
        output=out,
    )
    return out, trace


def head_backward(
    params: HeadParams, trace: HeadForwardTrace, grad_output
) -> tuple[HeadParamGrads, np.ndarray]:
    """Gradients w.r.t. every parameter tensor and w.r.t. the input frames."""
    g_out = as_vector(grad_output)
    if (
        g_out.shape != (params.out_dim,)
        or trace.pooled.shape != (params.in_dim,)
        or trace.post_relu.shape != (params.hidden_dim,)
        or trace.output.shape != (params.out_dim,)
    ):
        raise TraceMismatch("trace or grad_output does not match these head params")

    ln_out = params.ln_gamma * trace.normalized + params.ln_beta
    dropped = ln_out * trace.dropout_mask * trace.dropout_scale

    g_w2 = np.outer(g_out, dropped)
    g_b2 = g_out.copy()
    g_dropped = params.w2.T @ g_out
    g_ln_out = g_dropped * trace.dropout_mask * trace.dropout_scale

    g_gamma = g_ln_out * trace.normalized
    g_beta = g_ln_out.copy()
    g_xhat = g_ln_out * params.ln_gamma
    _, var = trace.ln_stats
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    x_hat = trace.normalized
    g_post = inv_std * (g_xhat - g_xhat.mean() - x_hat * np.mean(g_xhat * x_hat))

    g_pre = g_post * (trace.pre_activation > 0.0)
    g_w1 = np.outer(g_pre, trace.pooled)
    g_b1 = g_pre
    g_pooled = params.w1.T @ g_pre
    g_frames = np.tile(g_pooled / trace.n_frames, (trace.n_frames, 1))

    grads = HeadParamGrads(w1=g_w1, b1=g_b1, ln_gamma=g_gamma, ln_beta=g_beta, w2=g_w2, b2=g_b2)
    return grads, g_frames


# --- checkpoints --------------------------------------------------------------


def save_head_checkpoint(heads: dict[str, HeadParams], directory: str | os.PathLike) -> Path:
    """Write one CLCE file per tensor plus a ``manifest.json`` listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"format": "clce-head-checkpoint", "version": 1, "heads": {}}
    for head_name, params in sorted(heads.items()):
        entry = {"dropout_rate": params.dropout_rate, "rng_seed": params.rng_seed, "tensors": {}}
        for tensor_name, value in params.tensors().items():
            filename = f"{head_name}.{tensor_name}.clce"
            write_clce(directory / filename, np.atleast_2d(value))
            entry["tensors"][tensor_name] = {"path": filename, "shape": list(value.shape)}
        manifest["heads"][head_name] = entry
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_head_checkpoint(manifest_path: str | os.PathLike) -> dict[str, HeadParams]:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        heads = {}
        for head_name, entry in manifest["heads"].items():
            tensors = {}
            for tensor_name in PARAM_NAMES:
                stored = entry["tensors"][tensor_name]
                value = read_clce(manifest_path.parent / stored["path"])
                tensors[tensor_name] = value.reshape(stored["shape"])
            heads[head_name] = HeadParams(
                **tensors, dropout_rate=entry["dropout_rate"], rng_seed=entry["rng_seed"]
            )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{manifest_path}: malformed head checkpoint ({exc})") from exc
    return heads
