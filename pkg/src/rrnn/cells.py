"""Recurrent cell steps built on restricted pool views, stacking, LM head.

Gate ordering is fixed and recorded in checkpoints: LSTM gates are
(i, f, g, o) at j = 0..3, GRU gates are (r, z, n) at j = 0..2.  The GRU
reset gate multiplies the hidden pre-activation including its bias:
n = tanh(Wx x + bx + r * (Wh h + bh)).
"""

from dataclasses import dataclass

import numpy as np

from . import restriction as R
from . import tensor as T
from .errors import ConfigError, ShapeError, StateError, ValidationError
from .tensor import Tensor

GATE_COUNT = {"rnn": 1, "gru": 3, "lstm": 4}
GATE_ORDER = {"rnn": "h", "gru": "rzn", "lstm": "ifgo"}


@dataclass(frozen=True)
class CellSpec:
    """One recurrent layer: family, channel sizes and a 2 x n rate matrix."""

    family: str
    input_size: int
    hidden_size: int
    rates: tuple  # 2 x n, row 0 = data input, row 1 = hidden state

    def __post_init__(self):
        if self.family not in GATE_COUNT:
            raise ValidationError(f"unknown cell family {self.family!r}")
        n = GATE_COUNT[self.family]
        if len(self.rates) != 2 or any(len(row) != n for row in self.rates):
            raise ValidationError(f"{self.family} needs a 2x{n} rate matrix, got {self.rates}")

    @classmethod
    def uniform(cls, family, input_size, hidden_size, rate):
        if family not in GATE_COUNT:
            raise ValidationError(f"unknown cell family {family!r}")
        n = GATE_COUNT[family]
        return cls(family, input_size, hidden_size,
                   tuple(tuple(float(rate) for _ in range(n)) for _ in range(2)))

    def make_plan(self):
        return R.plan_restriction(m=2, n=GATE_COUNT[self.family], d=self.hidden_size,
                                  k_inputs=[self.input_size, self.hidden_size],
                                  rates=self.rates)


@dataclass
class CellState:
    """Hidden state h (d x batch); LSTM additionally carries the memory cell c."""

    h: Tensor
    c: Tensor = None

    def detach(self):
        return CellState(self.h.detach(), self.c.detach() if self.c is not None else None)


def zero_state(spec, batch_size):
    h = Tensor(np.zeros((spec.hidden_size, batch_size)))
    c = Tensor(np.zeros((spec.hidden_size, batch_size))) if spec.family == "lstm" else None
    return CellState(h, c)


def gate_views(pool, plan):
    """Materialize (Wx, bx, Wh, bh) per gate once; reusable across timesteps."""
    out = []
    for j in range(plan.n):
        wx, bx = R.view(pool, plan, 0, j)
        wh, bh = R.view(pool, plan, 1, j)
        out.append((wx, bx, wh, bh))
    return out


def _check_x(spec, x_t):
    if x_t.ndim != 2 or x_t.shape[0] != spec.input_size:
        raise ShapeError(f"input shape {x_t.shape} incompatible with input size {spec.input_size}")


def _gate_pre(views_j, x_t, h):
    wx, bx, wh, bh = views_j
    return T.matmul(wx, x_t) + bx + T.matmul(wh, h) + bh


def _rnn_step(views, x_t, state):
    h = T.tanh(_gate_pre(views[0], x_t, state.h))
    return CellState(h)


def _lstm_step(views, x_t, state):
    if state.c is None:
        raise StateError("LSTM step requires a cell state c")
    i = T.sigmoid(_gate_pre(views[0], x_t, state.h))
    f = T.sigmoid(_gate_pre(views[1], x_t, state.h))
    g = T.tanh(_gate_pre(views[2], x_t, state.h))
    o = T.sigmoid(_gate_pre(views[3], x_t, state.h))
    c = f * state.c + i * g
    h = o * T.tanh(c)
    return CellState(h, c)


def _gru_step(views, x_t, state):
    r = T.sigmoid(_gate_pre(views[0], x_t, state.h))
    z = T.sigmoid(_gate_pre(views[1], x_t, state.h))
    wx, bx, wh, bh = views[2]
    n = T.tanh(T.matmul(wx, x_t) + bx + r * (T.matmul(wh, state.h) + bh))
    h = T.rsub(z, 1.0) * n + z * state.h
    return CellState(h)


_STEP = {"rnn": _rnn_step, "lstm": _lstm_step, "gru": _gru_step}


def cell_step(spec, pool, plan, x_t, state):
    """One timestep through a restricted cell; input state is not mutated."""
    _check_x(spec, x_t)
    return _STEP[spec.family](gate_views(pool, plan), x_t, state)


def rnn_step(spec, pool, plan, x_t, state):
    return cell_step(spec, pool, plan, x_t, state)


def lstm_step(spec, pool, plan, x_t, state):
    return cell_step(spec, pool, plan, x_t, state)


def gru_step(spec, pool, plan, x_t, state):
    return cell_step(spec, pool, plan, x_t, state)


def stack_forward(specs, pools, plans, xs, states, dropout_p=0.0, rng=None, train=False):
    """Run a stack of layers over a window of inputs.

    xs is a list of (k x batch) tensors, one per timestep.  Dropout (when
    training) hits each layer's input, never the recurrence.  Returns the
    final layer's h for every timestep plus the new per-layer states.
    """
    for ell in range(1, len(specs)):
        if specs[ell].input_size != specs[ell - 1].hidden_size:
            raise ConfigError(
                f"layer {ell} input size {specs[ell].input_size} != "
                f"layer {ell - 1} hidden size {specs[ell - 1].hidden_size}")
    if dropout_p and train and rng is None:
        raise ConfigError("training with dropout requires an rng")

    all_views = [gate_views(pool, plan) for pool, plan in zip(pools, plans)]
    new_states = list(states)
    features = []
    for x_t in xs:
        inp = x_t
        for ell, spec in enumerate(specs):
            inp = T.dropout(inp, dropout_p, rng, train=train)
            new_states[ell] = _STEP[spec.family](all_views[ell], inp, new_states[ell])
            inp = new_states[ell].h
        features.append(inp)
    return features, new_states


@dataclass
class LMHead:
    """Embedding plus softmax decoder; when tied they are the same storage."""

    embedding: Tensor       # (vocab, emb)
    bias: Tensor            # (vocab,)
    tied: bool
    decoder: Tensor = None  # (vocab, emb), only when untied

    def __post_init__(self):
        if self.tied and self.decoder is not None:
            raise ConfigError("tied head must not carry a second decoder matrix")
        if not self.tied and self.decoder is None:
            raise ConfigError("untied head requires a decoder matrix")

    def trainables(self):
        out = [self.embedding, self.bias]
        if not self.tied:
            out.append(self.decoder)
        return out

    def trainable_count(self):
        vocab, emb = self.embedding.shape
        return vocab * emb + vocab + (0 if self.tied else vocab * emb)


def make_head(vocab, emb, tied=True, feature_size=None, seed=0):
    if tied and feature_size is not None and feature_size != emb:
        raise ConfigError(f"tied head needs feature size {emb}, got {feature_size}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(emb)
    embedding = Tensor(rng.uniform(-scale, scale, size=(vocab, emb)), requires_grad=True)
    bias = Tensor(np.zeros(vocab), requires_grad=True)
    decoder = None
    if not tied:
        decoder = Tensor(rng.uniform(-scale, scale, size=(vocab, emb)), requires_grad=True)
    return LMHead(embedding=embedding, bias=bias, tied=tied, decoder=decoder)


def embed_tokens(head, ids_t):
    """Token ids (batch,) -> features (emb x batch) via embedding row lookup."""
    return T.transpose(T.gather_rows(head.embedding, ids_t))


def lm_head_forward(head, features):
    """Features (emb x batch) -> logits (vocab x batch)."""
    weight = head.embedding if head.tied else head.decoder
    if features.shape[0] != weight.shape[1]:
        raise ConfigError(f"feature size {features.shape[0]} != embedding size {weight.shape[1]}")
    return T.matmul(weight, features) + head.bias
