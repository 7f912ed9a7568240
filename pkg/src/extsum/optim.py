"""Adam with bias correction, global-norm clipping, and a finite-difference
gradient checker used as the training-path oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .errors import PipelineError


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr=0.001, beta1=0.99, beta2=0.999, eps=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, state: AdamState):
    """Standard Adam update in place; t increments before bias correction.

    A NaN/Inf in any gradient aborts the step before any mutation.
    """
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise PipelineError("non-finite-gradient", f"parameter {name}")
        grads[name] = g
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple  # (tensor index, flat coordinate)
    skipped: list  # (tensor index, flat coordinate) at non-smooth points

    def __repr__(self):
        return (f"GradCheckResult(max_rel_error={self.max_rel_error:.3e}, "
                f"worst={self.worst}, skipped={len(self.skipped)})")


def grad_check(fn, points: list[Tensor], eps: float = 1e-5,
               kink_tol: float = 5e-2) -> GradCheckResult:
    """Compare reverse-mode gradients of fn against central differences.

    fn takes the given tensors and returns a scalar Tensor; it must be
    deterministic (fix the rng, run dropout in eval mode). Everything is
    evaluated in float64. Coordinates where the one-sided derivatives
    disagree (a kink, e.g. a pooling tie) are skipped rather than failed.
    """
    points = [_as64(p) for p in points]
    base = float(fn(points).data)
    if float(fn(points).data) != base:
        raise PipelineError("non-deterministic-under-check",
                            "two evaluations at the same point differ")
    with Tape() as tape:
        for p in points:
            p.grad = None
        loss = fn(points)
        tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in points]

    worst = (0.0, (-1, -1))
    skipped = []
    for ti, p in enumerate(points):
        flat = p.data.ravel()
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + eps
            f_plus = float(fn(points).data)
            flat[ci] = orig - eps
            f_minus = float(fn(points).data)
            flat[ci] = orig
            d_plus = (f_plus - base) / eps
            d_minus = (base - f_minus) / eps
            if abs(d_plus - d_minus) > kink_tol * max(abs(d_plus), abs(d_minus), 1e-4):
                skipped.append((ti, ci))
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[ti].ravel()[ci])
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-8)
            if rel > worst[0]:
                worst = (rel, (ti, ci))
    return GradCheckResult(worst[0], worst[1], skipped)


def _as64(p: Tensor) -> Tensor:
    if p.dtype == np.float64:
        p.requires_grad = True
        return p
    t = Tensor(p.data.astype(np.float64), requires_grad=True, dtype=np.float64,
               name=p.name)
    return t
