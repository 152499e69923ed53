"""Recurrent residual corrector: a small GRU, implemented from scratch.

The network consumes one 5-feature residual observation per executed
operator (log prediction errors plus device-state deltas) and emits two
log-corrections (latency, energy), clamped to [ln 0.25, ln 4]. Training is
truncated backpropagation-through-time with momentum SGD and global
gradient-norm clipping; runtime use is forward-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEpisodes, ValidationError

INPUT_DIM = 5
HIDDEN_DIM = 16
OUTPUT_DIM = 2
LOG_CORR_MIN = math.log(0.25)
LOG_CORR_MAX = math.log(4.0)

# parameter names in fixed order (also the init draw order)
PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r",
               "W_h", "U_h", "b_h", "V", "c")


@dataclass(frozen=True)
class GruHyper:
    lr: float = 1e-3
    momentum: float = 0.9
    bptt_len: int = 32
    epochs: int = 20
    grad_clip_norm: float = 5.0

    def __post_init__(self):
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ValidationError("lr must be > 0 and momentum in [0, 1)")
        if self.bptt_len < 1 or self.epochs < 1 or self.grad_clip_norm <= 0:
            raise ValidationError("bptt_len, epochs >= 1; grad_clip_norm > 0")


@dataclass
class GruCorrector:
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray
    V: np.ndarray
    c: np.ndarray
    hidden: np.ndarray = field(default_factory=lambda: np.zeros(HIDDEN_DIM))

    def reset(self) -> None:
        """Zero the hidden state (session start)."""
        self.hidden = np.zeros(HIDDEN_DIM)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def __eq__(self, other):
        if not isinstance(other, GruCorrector):
            return NotImplemented
        return (all(np.array_equal(getattr(self, n), getattr(other, n))
                    for n in PARAM_NAMES)
                and np.array_equal(self.hidden, other.hidden))


def init_gru(seed: int) -> GruCorrector:
    """Fresh corrector with all weights uniform in (-0.1, 0.1)."""
    rng = np.random.default_rng(seed)
    shapes = {
        "W_z": (HIDDEN_DIM, INPUT_DIM), "U_z": (HIDDEN_DIM, HIDDEN_DIM),
        "b_z": (HIDDEN_DIM,),
        "W_r": (HIDDEN_DIM, INPUT_DIM), "U_r": (HIDDEN_DIM, HIDDEN_DIM),
        "b_r": (HIDDEN_DIM,),
        "W_h": (HIDDEN_DIM, INPUT_DIM), "U_h": (HIDDEN_DIM, HIDDEN_DIM),
        "b_h": (HIDDEN_DIM,),
        "V": (OUTPUT_DIM, HIDDEN_DIM), "c": (OUTPUT_DIM,),
    }
    return GruCorrector(**{n: rng.uniform(-0.1, 0.1, size=shapes[n])
                           for n in PARAM_NAMES})


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-a))


def gru_forward(g: GruCorrector, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One recurrent step from g.hidden; returns (new hidden, log-corrections).

    Does not mutate g; the caller decides whether to commit the new hidden.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (INPUT_DIM,) or not np.all(np.isfinite(x)):
        raise ValidationError(f"input must be {INPUT_DIM} finite reals")
    h = g.hidden
    z = _sigmoid(g.W_z @ x + g.U_z @ h + g.b_z)
    r = _sigmoid(g.W_r @ x + g.U_r @ h + g.b_r)
    h_cand = np.tanh(g.W_h @ x + g.U_h @ (r * h) + g.b_h)
    h_new = (1.0 - z) * h + z * h_cand
    out = np.clip(g.V @ h_new + g.c, LOG_CORR_MIN, LOG_CORR_MAX)
    return h_new, out


def chunk_loss_and_grads(g: GruCorrector, xs: np.ndarray, ys: np.ndarray,
                         h0: np.ndarray) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean-squared loss and analytic BPTT gradients over one chunk.

    xs: (T, 5) inputs; ys: (T, 2) target log-residuals; h0: entry hidden.
    Loss = mean over T*2 output entries of squared error, with the clamp's
    zero-gradient region respected. Returns (loss, grads by name, final h).
    """
    T = len(xs)
    hs = np.empty((T + 1, HIDDEN_DIM))
    hs[0] = h0
    zs = np.empty((T, HIDDEN_DIM))
    rs = np.empty((T, HIDDEN_DIM))
    cands = np.empty((T, HIDDEN_DIM))
    outs_raw = np.empty((T, OUTPUT_DIM))
    for t in range(T):
        x, h = xs[t], hs[t]
        zs[t] = _sigmoid(g.W_z @ x + g.U_z @ h + g.b_z)
        rs[t] = _sigmoid(g.W_r @ x + g.U_r @ h + g.b_r)
        cands[t] = np.tanh(g.W_h @ x + g.U_h @ (rs[t] * h) + g.b_h)
        hs[t + 1] = (1.0 - zs[t]) * h + zs[t] * cands[t]
        outs_raw[t] = g.V @ hs[t + 1] + g.c
    outs = np.clip(outs_raw, LOG_CORR_MIN, LOG_CORR_MAX)
    err = outs - ys
    loss = float((err ** 2).mean())

    grads = {n: np.zeros_like(getattr(g, n)) for n in PARAM_NAMES}
    inside = (outs_raw > LOG_CORR_MIN) & (outs_raw < LOG_CORR_MAX)
    d_out = 2.0 * err * inside / (T * OUTPUT_DIM)
    d_h = np.zeros(HIDDEN_DIM)
    for t in range(T - 1, -1, -1):
        x, h_prev = xs[t], hs[t]
        z, r, cand = zs[t], rs[t], cands[t]
        d_h = d_h + g.V.T @ d_out[t]
        grads["V"] += np.outer(d_out[t], hs[t + 1])
        grads["c"] += d_out[t]
        d_z = d_h * (cand - h_prev)
        d_cand = d_h * z
        d_h_prev = d_h * (1.0 - z)
        d_a_h = d_cand * (1.0 - cand ** 2)
        grads["W_h"] += np.outer(d_a_h, x)
        grads["b_h"] += d_a_h
        grads["U_h"] += np.outer(d_a_h, r * h_prev)
        d_rh = g.U_h.T @ d_a_h
        d_r = d_rh * h_prev
        d_h_prev = d_h_prev + d_rh * r
        d_a_z = d_z * z * (1.0 - z)
        grads["W_z"] += np.outer(d_a_z, x)
        grads["b_z"] += d_a_z
        grads["U_z"] += np.outer(d_a_z, h_prev)
        d_h_prev = d_h_prev + g.U_z.T @ d_a_z
        d_a_r = d_r * r * (1.0 - r)
        grads["W_r"] += np.outer(d_a_r, x)
        grads["b_r"] += d_a_r
        grads["U_r"] += np.outer(d_a_r, h_prev)
        d_h = d_h_prev + g.U_r.T @ d_a_r
    return loss, grads, hs[T]


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float((v * v).sum()) for v in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for v in grads.values():
            v *= scale


def train_gru(episodes: list[list[tuple[np.ndarray, np.ndarray]]],
              hyper: GruHyper = GruHyper(), seed: int = 0) -> GruCorrector:
    """Train a corrector on residual episodes; deterministic given seed.

    Each episode is a sequence of (input(5), target log-residual(2)) pairs.
    Episodes are processed in order, split into bptt_len chunks; the hidden
    state flows across chunk boundaries (detached), gradients do not. One
    momentum-SGD update per chunk. The trained corrector carries a
    loss_history attribute (mean loss per epoch, not serialized).
    """
    episodes = [ep for ep in episodes if len(ep) > 0]
    if not episodes:
        raise EmptyEpisodes("need at least one non-empty episode")
    packed = []
    for ep in episodes:
        xs = np.asarray([p[0] for p in ep], dtype=np.float64)
        ys = np.asarray([p[1] for p in ep], dtype=np.float64)
        if xs.shape[1] != INPUT_DIM or ys.shape[1] != OUTPUT_DIM:
            raise ValidationError("episode pairs must be (input(5), target(2))")
        packed.append((xs, ys))

    g = init_gru(seed)
    velocity = {n: np.zeros_like(getattr(g, n)) for n in PARAM_NAMES}
    loss_history = []
    for _ in range(hyper.epochs):
        epoch_loss = 0.0
        n_chunks = 0
        for xs, ys in packed:
            h = np.zeros(HIDDEN_DIM)
            for start in range(0, len(xs), hyper.bptt_len):
                chunk_x = xs[start:start + hyper.bptt_len]
                chunk_y = ys[start:start + hyper.bptt_len]
                loss, grads, h = chunk_loss_and_grads(g, chunk_x, chunk_y, h)
                _clip_global_norm(grads, hyper.grad_clip_norm)
                for n in PARAM_NAMES:
                    velocity[n] = hyper.momentum * velocity[n] - hyper.lr * grads[n]
                    getattr(g, n)[...] += velocity[n]
                epoch_loss += loss
                n_chunks += 1
        loss_history.append(epoch_loss / n_chunks)
    g.reset()
    g.loss_history = loss_history
    return g
