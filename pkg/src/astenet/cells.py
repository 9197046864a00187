"""Recurrent cells: a GRU for sequences and a three-predecessor GRU for tables.

Both cells interpolate with the same convention::

    h_new = z * h_candidate + (1 - z) * h_carry

Each cell is split into a *precompute* half, which only needs the inputs
known before the recurrence starts, and a *recur* half, which consumes the
hidden states produced by the scan.  ``gru_step`` and ``mdgru_step`` are the
two halves composed, so the batched scans in ``model`` run exactly the
cell defined here.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def _affine_init(rng, rows, cols, name):
    return nx.tensor(nx.uniform_init(rng, (rows, cols)), name=name)


def _zeros(n, name):
    return nx.tensor(np.zeros(n), name=name)


@dataclass
class GruParams:
    W_r: Tensor  # (2d, d) acting on [x; h]
    b_r: Tensor
    W_z: Tensor  # (2d, d)
    b_z: Tensor
    W_x: Tensor  # (d, d)
    W_h: Tensor  # (d, d)
    b_h: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, prefix: str) -> "GruParams":
        return cls(
            W_r=_affine_init(rng, 2 * d, d, f"{prefix}.W_r"), b_r=_zeros(d, f"{prefix}.b_r"),
            W_z=_affine_init(rng, 2 * d, d, f"{prefix}.W_z"), b_z=_zeros(d, f"{prefix}.b_z"),
            W_x=_affine_init(rng, d, d, f"{prefix}.W_x"), W_h=_affine_init(rng, d, d, f"{prefix}.W_h"),
            b_h=_zeros(d, f"{prefix}.b_h"),
        )

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    @property
    def d(self) -> int:
        return self.W_x.shape[0]


@dataclass
class MdgruParams:
    W_r: Tensor    # (4d, d) acting on [x; h1; h2; h3]
    b_r: Tensor
    W_z: Tensor    # (4d, d)
    b_z: Tensor
    W_x: Tensor    # (d, d)
    W_p: Tensor    # (3d, d) acting on [h1; h2; h3]
    b_h: Tensor
    W_lam1: Tensor  # (4d, d)
    b_lam1: Tensor
    W_lam2: Tensor
    b_lam2: Tensor
    W_lam3: Tensor
    b_lam3: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, prefix: str) -> "MdgruParams":
        kw = {
            "W_r": _affine_init(rng, 4 * d, d, f"{prefix}.W_r"), "b_r": _zeros(d, f"{prefix}.b_r"),
            "W_z": _affine_init(rng, 4 * d, d, f"{prefix}.W_z"), "b_z": _zeros(d, f"{prefix}.b_z"),
            "W_x": _affine_init(rng, d, d, f"{prefix}.W_x"),
            "W_p": _affine_init(rng, 3 * d, d, f"{prefix}.W_p"), "b_h": _zeros(d, f"{prefix}.b_h"),
        }
        for i in (1, 2, 3):
            kw[f"W_lam{i}"] = _affine_init(rng, 4 * d, d, f"{prefix}.W_lam{i}")
            kw[f"b_lam{i}"] = _zeros(d, f"{prefix}.b_lam{i}")
        return cls(**kw)

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    @property
    def d(self) -> int:
        return self.W_x.shape[0]

    def gate_weights(self) -> list[Tensor]:
        return [self.W_r, self.W_z, self.W_lam1, self.W_lam2, self.W_lam3]

    def gate_biases(self) -> list[Tensor]:
        return [self.b_r, self.b_z, self.b_lam1, self.b_lam2, self.b_lam3]


# --------------------------------------------------------------------- GRU

def gru_precompute(p: GruParams, x: Tensor) -> Tensor:
    """Input-side pre-activations for rows of ``x``: (rows, 3d) = [r | z | candidate]."""
    d = p.d
    w = nx.concat([nx.slice_axis(p.W_r, 0, 0, d), nx.slice_axis(p.W_z, 0, 0, d), p.W_x], axis=1)
    b = nx.concat([p.b_r, p.b_z, p.b_h], axis=0)
    return nx.add_bias(nx.matmul(x, w), b)


def gru_recurrent_weight(p: GruParams) -> Tensor:
    """Hidden-side weight (d, 3d) = [W_r bottom | W_z bottom | W_h]."""
    d = p.d
    return nx.concat([nx.slice_axis(p.W_r, 0, d, 2 * d), nx.slice_axis(p.W_z, 0, d, 2 * d),
                      p.W_h], axis=1)


def gru_recur(pre: Tensor, h: Tensor, w_rec: Tensor) -> Tensor:
    d = h.shape[-1]
    rec = nx.matmul(h, w_rec)
    pr, pz, px = nx.split(pre, [d, d, d])
    qr, qz, qh = nx.split(rec, [d, d, d])
    r = nx.sigmoid(nx.add(pr, qr))
    z = nx.sigmoid(nx.add(pz, qz))
    cand = nx.tanh(nx.add(px, nx.mul(r, qh)))
    return nx.add(nx.mul(z, cand), nx.mul(nx.one_minus(z), h))


def gru_step(p: GruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU step on (rows, d) inputs."""
    if x.shape != h_prev.shape or x.shape[-1] != p.d:
        raise nx.DimensionError(f"gru_step: x {x.shape}, h {h_prev.shape}, d={p.d}")
    return gru_recur(gru_precompute(p, x), h_prev, gru_recurrent_weight(p))


# ------------------------------------------------------------------- MDGRU

def mdgru_precompute(p: MdgruParams, x: Tensor, h1: Tensor) -> Tensor:
    """Pre-activations that depend only on the cell input and the layer-below state.

    Returns (rows, 7d) laid out as
    ``[r | z | lam1 | lam2 | lam3 | h1 W_p(h1 rows) | x W_x + b_h]``.
    """
    d = p.d
    top = [nx.slice_axis(w, 0, 0, 2 * d) for w in p.gate_weights()]
    gates = nx.add_bias(nx.matmul(nx.concat([x, h1], axis=1), nx.concat(top, axis=1)),
                        nx.concat(p.gate_biases(), axis=0))
    carry = nx.matmul(h1, nx.slice_axis(p.W_p, 0, 0, d))
    cand = nx.add_bias(nx.matmul(x, p.W_x), p.b_h)
    return nx.concat([gates, carry, cand], axis=1)


def mdgru_recurrent_weight(p: MdgruParams) -> Tensor:
    """Weight (2d, 6d) applied to the neighbour states [h2; h3]."""
    d = p.d
    parts = [nx.slice_axis(w, 0, 2 * d, 4 * d) for w in p.gate_weights()]
    parts.append(nx.slice_axis(p.W_p, 0, d, 3 * d))
    return nx.concat(parts, axis=1)


def mdgru_recur(pre: Tensor, h1: Tensor, h2: Tensor, h3: Tensor, w_rec: Tensor,
                return_gates: bool = False):
    rows, d = h1.shape
    rec = nx.matmul(nx.concat([h2, h3], axis=1), w_rec)
    pg, pc, px = nx.split(pre, [5 * d, d, d])
    qg, qc = nx.split(rec, [5 * d, d])
    g = nx.add(pg, qg)
    r = nx.sigmoid(nx.slice_axis(g, 1, 0, d))
    z = nx.sigmoid(nx.slice_axis(g, 1, d, 2 * d))
    lam = nx.softmax(nx.reshape(nx.slice_axis(g, 1, 2 * d, 5 * d), (rows, 3, d)), axis=1)
    cand = nx.tanh(nx.add(px, nx.mul(r, nx.add(pc, qc))))
    hs = nx.reshape(nx.concat([h1, h2, h3], axis=1), (rows, 3, d))
    carry = nx.sum_axis(nx.mul(lam, hs), axis=1)
    out = nx.add(nx.mul(z, cand), nx.mul(nx.one_minus(z), carry))
    if return_gates:
        return out, {"r": r, "z": z, "lam": lam, "cand": cand, "carry": carry}
    return out


def mdgru_step(p: MdgruParams, x: Tensor, h1: Tensor, h2: Tensor, h3: Tensor,
               return_gates: bool = False):
    """One MDGRU step on (rows, d) inputs; h1 is the layer-below state."""
    for t in (x, h1, h2, h3):
        if t.data.ndim != 2 or t.shape[-1] != p.d or t.shape != x.shape:
            raise nx.DimensionError(f"mdgru_step: input {t.shape} does not match d={p.d}")
    return mdgru_recur(mdgru_precompute(p, x, h1), h1, h2, h3,
                       mdgru_recurrent_weight(p), return_gates=return_gates)
