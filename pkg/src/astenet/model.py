"""The table-sequence network.

Per layer ``l`` the forward pass runs, in order:

1. sequence feature injection: ``X[m][n] = relu([S_m; S_n] W_s + b_s)`` from the
   previous layer's sequence output (the base encoding for ``l = 1``);
2. the table layer: two MDGRU scans over the grid, one from the top-left
   corner and one from the bottom-right, merged by an affine map;
3. the sequence layer: a left-to-right GRU, then table-guided attention whose
   scores come from the fresh table states.

Tables are stored as (B, N, N, d) tensors, flattened to (B*N*N, d) rows for
the scans.  Padded cells produce zero states, so a padded sentence sees the
same boundary as an unpadded one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .cells import (GruParams, MdgruParams, gru_precompute, gru_recur, gru_recurrent_weight,
                    mdgru_precompute, mdgru_recur, mdgru_recurrent_weight)
from .corpus import BIO_TAGS, MAX_LEN, TABLE_LABELS, Batch, DataError
from .numerics import Tensor


@dataclass
class ModelConfig:
    d_w: int = 300
    d_h: int = 200
    layers: int = 3
    heads: int = 8
    dropout: float = 0.5
    max_len: int = MAX_LEN
    use_tga: bool = True
    use_sfi: bool = True
    n_tags: int = len(BIO_TAGS)
    n_labels: int = len(TABLE_LABELS)

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.d_h % self.heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def _w(rng, rows, cols, name):
    return nx.tensor(nx.uniform_init(rng, (rows, cols)), name=name)


def _b(n, name):
    return nx.tensor(np.zeros(n), name=name)


def build_parameters(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """All trainable tensors, keyed by their stable names, in creation order."""
    d, dw = cfg.d_h, cfg.d_w
    ps: list[Tensor] = [
        _w(rng, dw, d, "base.W_b"), _b(d, "base.b_b"),
        _w(rng, 2 * d, d, "table0.W_t"), _b(d, "table0.b_t"),
    ]
    for l in range(cfg.layers):
        pre = f"layer{l + 1}"
        ps += GruParams.init(d, rng, f"{pre}.gru").tensors()
        if cfg.use_tga:
            # column i of V is v_i; columns [i*dk, (i+1)*dk) of W_heads form W_i
            ps += [_w(rng, d, cfg.heads, f"{pre}.tga.V")]
        else:
            ps += [_w(rng, d, d, f"{pre}.attn.W_q"), _w(rng, d, d, f"{pre}.attn.W_k")]
        ps += [_w(rng, d, d, f"{pre}.tga.W_heads"), _w(rng, d, d, f"{pre}.tga.W_o")]
        ps += [_w(rng, 2 * d, d, f"{pre}.sfi.W_s"), _b(d, f"{pre}.sfi.b_s")]
        ps += MdgruParams.init(d, rng, f"{pre}.mdgru1").tensors()
        ps += MdgruParams.init(d, rng, f"{pre}.mdgru2").tensors()
        ps += [_w(rng, 2 * d, d, f"{pre}.table.W_t"), _b(d, f"{pre}.table.b_t")]
    ps += [_w(rng, d, cfg.n_tags, "head.W_1"), _b(cfg.n_tags, "head.b_1"),
           _w(rng, d, cfg.n_labels, "head.W_2"), _b(cfg.n_labels, "head.b_2")]
    out = {}
    for p in ps:
        if p.name in out:
            raise AssertionError(f"duplicate parameter name {p.name}")
        out[p.name] = p
    return out


# ------------------------------------------------------------ scan schedule

@dataclass(frozen=True)
class ScanStep:
    cells: np.ndarray          # flat cell ids computed in this step
    sources: tuple[int, ...]   # earlier steps whose outputs hold the neighbours
    up: np.ndarray             # rows into concat(sources outputs + zero row)
    side: np.ndarray


@lru_cache(maxsize=256)
def scan_schedule(batch: int, n: int, reverse: bool, order: str = "wavefront") -> tuple[ScanStep, ...]:
    """Execution schedule for one MDGRU direction over a (batch, n, n) grid.

    Forward direction: cell (m, n) needs (m-1, n) and (m, n-1); the reverse
    direction needs (m+1, n) and (m, n+1).  ``order`` is ``"wavefront"``
    (one step per anti-diagonal) or ``"row_major"`` (one cell per step).
    """
    delta = 1 if reverse else -1
    groups: list[list[tuple[int, int, int]]] = []
    if order == "wavefront":
        diags = range(2 * n - 2, -1, -1) if reverse else range(2 * n - 1)
        for k in diags:
            groups.append([(b, m, k - m) for b in range(batch)
                           for m in range(max(0, k - n + 1), min(n, k + 1))])
    elif order == "row_major":
        rows = range(n - 1, -1, -1) if reverse else range(n)
        for b in range(batch):
            for m in rows:
                for c in rows:
                    groups.append([(b, m, c)])
    else:
        raise ValueError(f"unknown scan order {order!r}")

    where: dict[tuple[int, int, int], tuple[int, int]] = {}
    steps = []
    for s, group in enumerate(groups):
        nbrs = []
        for b, m, c in group:
            pair = []
            for mm, cc in ((m + delta, c), (m, c + delta)):
                if 0 <= mm < n and 0 <= cc < n:
                    src = where.get((b, mm, cc))
                    if src is None:
                        raise AssertionError("schedule visits a cell before its neighbour")
                    pair.append(src)
                else:
                    pair.append(None)
            nbrs.append(pair)
        sources = tuple(sorted({p[0] for pair in nbrs for p in pair if p is not None}))
        offset, base = {}, 0
        for src in sources:
            offset[src] = base
            base += len(groups[src])
        zero_row = base

        def row(p):
            return zero_row if p is None else offset[p[0]] + p[1]

        up = np.array([row(pair[0]) for pair in nbrs], dtype=np.intp)
        side = np.array([row(pair[1]) for pair in nbrs], dtype=np.intp)
        cells = np.array([(b * n + m) * n + c for b, m, c in group], dtype=np.intp)
        steps.append(ScanStep(cells, sources, up, side))
        for r, (b, m, c) in enumerate(group):
            where[(b, m, c)] = (s, r)
    return tuple(steps)


def mdgru_scan(p: MdgruParams, x: Tensor, below: Tensor, cell_mask: np.ndarray,
               batch: int, n: int, reverse: bool, order: str = "wavefront") -> Tensor:
    """Run one MDGRU over flattened (batch*n*n, d) cells; returns states in cell order."""
    d = p.d
    steps = scan_schedule(batch, n, reverse, order)
    perm = np.concatenate([s.cells for s in steps])
    sizes = [len(s.cells) for s in steps]
    pre_all = mdgru_precompute(p, x, below)
    pre_parts = nx.split(nx.take(pre_all, perm), sizes, axis=0)
    below_parts = nx.split(nx.take(below, perm), sizes, axis=0)
    w_rec = mdgru_recurrent_weight(p)
    zero = nx.constant(np.zeros((1, d)))
    keep = cell_mask.reshape(-1)
    outs: list[Tensor] = []
    for step, pre, h1 in zip(steps, pre_parts, below_parts):
        pool = nx.concat([outs[s] for s in step.sources] + [zero], axis=0)
        h2 = nx.take(pool, step.up)
        h3 = nx.take(pool, step.side)
        h = mdgru_recur(pre, h1, h2, h3, w_rec)
        m = keep[step.cells]
        if not m.all():
            h = nx.mul(h, nx.constant(np.repeat(m[:, None], d, axis=1).astype(float)))
        outs.append(h)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    return nx.take(nx.concat(outs, axis=0), inverse)


# -------------------------------------------------------------------- model

def _rows(x: Tensor) -> Tensor:
    return nx.reshape(x, (-1, x.shape[-1]))


def _affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., k] @ w[k, j] (+ b) keeping the leading shape."""
    lead = x.shape[:-1]
    y = nx.matmul(_rows(x), w)
    if b is not None:
        y = nx.add_bias(y, b)
    return nx.reshape(y, lead + (w.shape[1],))


def _pair_affine(s: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """[s_m; s_n] w + b for every (m, n), as (B, N, N, d)."""
    d_in = s.shape[-1]
    top = _affine(s, nx.slice_axis(w, 0, 0, d_in))
    bottom = _affine(s, nx.slice_axis(w, 0, d_in, 2 * d_in))
    return nx.add_bias(nx.pair_add(top, bottom), b)


class TableSequenceModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor], embeddings: np.ndarray):
        if embeddings.shape[1] != config.d_w:
            raise nx.DimensionError(
                f"embedding width {embeddings.shape[1]} does not match d_w={config.d_w}")
        self.config = config
        self.params = params
        self.embeddings = embeddings
        self.scan_order = "wavefront"

    @classmethod
    def create(cls, config: ModelConfig, embeddings: np.ndarray, rng: np.random.Generator):
        return cls(config, build_parameters(config, rng), embeddings)

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _gru(self, l: int) -> GruParams:
        return GruParams(**{f: self._p(f"layer{l}.gru.{f}") for f in GruParams.__dataclass_fields__})

    def _mdgru(self, l: int, k: int) -> MdgruParams:
        return MdgruParams(**{f: self._p(f"layer{l}.mdgru{k}.{f}")
                              for f in MdgruParams.__dataclass_fields__})

    # --- pieces

    def embed(self, token_ids: np.ndarray) -> Tensor:
        return nx.constant(self.embeddings[token_ids])

    def base_encode(self, x: Tensor) -> Tensor:
        return _affine(x, self._p("base.W_b"), self._p("base.b_b"))

    def init_table(self, base: Tensor) -> Tensor:
        return nx.relu(_pair_affine(base, self._p("table0.W_t"), self._p("table0.b_t")))

    def sfi(self, l: int, seq: Tensor) -> Tensor:
        return nx.relu(_pair_affine(seq, self._p(f"layer{l}.sfi.W_s"), self._p(f"layer{l}.sfi.b_s")))

    def table_layer(self, l: int, prev: Tensor, x: Tensor, table_mask: np.ndarray) -> Tensor:
        batch, n, _, d = prev.shape
        flat_x, flat_prev = _rows(x), _rows(prev)
        fwd = mdgru_scan(self._mdgru(l, 1), flat_x, flat_prev, table_mask, batch, n,
                         reverse=False, order=self.scan_order)
        bwd = mdgru_scan(self._mdgru(l, 2), flat_x, flat_prev, table_mask, batch, n,
                         reverse=True, order=self.scan_order)
        merged = nx.add_bias(nx.matmul(nx.concat([fwd, bwd], axis=1), self._p(f"layer{l}.table.W_t")),
                             self._p(f"layer{l}.table.b_t"))
        return nx.reshape(merged, (batch, n, n, d))

    def run_gru(self, l: int, seq: Tensor) -> Tensor:
        batch, n, d = seq.shape
        p = self._gru(l)
        pre = nx.reshape(gru_precompute(p, _rows(seq)), (batch, n, 3 * d))
        w_rec = gru_recurrent_weight(p)
        h = nx.constant(np.zeros((batch, d)))
        states = []
        for part in nx.split(pre, [1] * n, axis=1):
            h = gru_recur(nx.reshape(part, (batch, 3 * d)), h, w_rec)
            states.append(nx.reshape(h, (batch, 1, d)))
        return nx.concat(states, axis=1)

    def attention_weights(self, l: int, table: Tensor, states: Tensor, mask: np.ndarray) -> Tensor:
        """(B, heads, N, N) weights, normalised over the attended position."""
        cfg = self.config
        batch, n, d = states.shape
        if cfg.use_tga:
            scores = _affine(table, self._p(f"layer{l}.tga.V"))          # (B, N, N, h)
            scores = nx.permute(nx.scale(scores, 1.0 / math.sqrt(d)), (0, 3, 1, 2))
        else:
            dk = d // cfg.heads
            q = nx.permute(nx.reshape(_affine(states, self._p(f"layer{l}.attn.W_q")),
                                      (batch, n, cfg.heads, dk)), (0, 2, 1, 3))
            k = nx.permute(nx.reshape(_affine(states, self._p(f"layer{l}.attn.W_k")),
                                      (batch, n, cfg.heads, dk)), (0, 2, 3, 1))
            scores = nx.bmm(nx.reshape(q, (batch * cfg.heads, n, dk)),
                            nx.reshape(k, (batch * cfg.heads, dk, n)))
            scores = nx.reshape(nx.scale(scores, 1.0 / math.sqrt(dk)), (batch, cfg.heads, n, n))
        key_mask = np.broadcast_to(mask[:, None, None, :], scores.shape)
        return nx.softmax(scores, axis=-1, mask=key_mask)

    def sequence_layer(self, l: int, seq_in: Tensor, table: Tensor, mask: np.ndarray) -> Tensor:
        cfg = self.config
        states = self.run_gru(l, seq_in)
        batch, n, d = states.shape
        h, dk = cfg.heads, d // cfg.heads
        att = self.attention_weights(l, table, states, mask)
        values = nx.permute(nx.reshape(_affine(states, self._p(f"layer{l}.tga.W_heads")),
                                       (batch, n, h, dk)), (0, 2, 1, 3))
        heads = nx.bmm(nx.reshape(att, (batch * h, n, n)), nx.reshape(values, (batch * h, n, dk)))
        heads = nx.reshape(nx.permute(nx.reshape(heads, (batch, h, n, dk)), (0, 2, 1, 3)),
                           (batch, n, d))
        return _affine(heads, self._p(f"layer{l}.tga.W_o"))

    # --- whole network

    def forward(self, batch: Batch, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """(seq_logits (B, N, 5), table_logits (B, N, N, 4))."""
        cfg = self.config
        longest = max(batch.lengths)
        if longest > cfg.max_len:
            raise DataError(f"sentence of {longest} tokens exceeds max_len={cfg.max_len}")
        p = cfg.dropout
        x = nx.dropout(self.embed(batch.token_ids), p, training, rng)
        base = self.base_encode(x)
        table = self.init_table(base)
        seq = base
        for l in range(1, cfg.layers + 1):
            inj = self.sfi(l, seq if cfg.use_sfi else base)
            table = nx.dropout(self.table_layer(l, table, inj, batch.table_mask), p, training, rng)
            seq = nx.dropout(self.sequence_layer(l, seq, table, batch.mask), p, training, rng)
        seq_logits = _affine(seq, self._p("head.W_1"), self._p("head.b_1"))
        table_logits = _affine(table, self._p("head.W_2"), self._p("head.b_2"))
        return seq_logits, table_logits

    def loss(self, seq_logits: Tensor, table_logits: Tensor, batch: Batch) -> Tensor:
        return joint_loss(seq_logits, table_logits, batch.gold_tags, batch.gold_table,
                          batch.mask, batch.table_mask)


def joint_loss(seq_logits: Tensor, table_logits: Tensor, gold_tags: np.ndarray,
               gold_table: np.ndarray, mask: np.ndarray, table_mask: np.ndarray) -> Tensor:
    """Summed tagging loss plus summed table loss over every real cell."""
    l_seq = nx.cross_entropy(seq_logits, gold_tags, mask)
    l_tab = nx.cross_entropy(table_logits, gold_table, table_mask)
    return nx.add(l_seq, l_tab)


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
