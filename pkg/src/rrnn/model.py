"""Multi-layer restricted language model and its checkpoint format.

Checkpoint layout (documented here; tests assert bit-exact round trips):
a numpy ``.npz`` archive holding

  meta        uint8 array, UTF-8 JSON: {format_version, family, layers,
              hidden, emb, vocab, rates (per-layer 2 x n), tied, dropout,
              gate_order, id_to_token}
  layer{i}_W  float64 (d_r, k_r) pool matrix of layer i
  layer{i}_b  float64 (d_r,) pool bias of layer i
  embedding   float64 (vocab, emb)
  head_bias   float64 (vocab,)
  decoder     float64 (vocab, emb), present only when untied

float64 arrays survive npz round trips bit-exactly.
"""

import json

import numpy as np

from . import cells as C
from . import restriction as R
from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

CHECKPOINT_VERSION = 1


class LanguageModel:
    """Embedding -> stacked restricted recurrent layers -> (tied) softmax head."""

    def __init__(self, family, vocab, layers=3, hidden=200, emb=200, rates=0.5,
                 tied=True, dropout=0.2, seed=0, id_to_token=None):
        if layers < 1:
            raise ConfigError("need at least one recurrent layer")
        if tied and emb != hidden:
            raise ConfigError(f"tied embedding requires emb == hidden, got {emb} != {hidden}")
        self.family = family
        self.vocab = vocab
        self.emb = emb
        self.dropout = dropout
        self.tied = tied
        self.id_to_token = list(id_to_token) if id_to_token is not None else None

        self.specs = []
        for ell in range(layers):
            k = emb if ell == 0 else hidden
            if np.isscalar(rates):
                spec = C.CellSpec.uniform(family, k, hidden, rates)
            else:
                spec = C.CellSpec(family, k, hidden, tuple(tuple(row) for row in rates))
            self.specs.append(spec)
        self.plans = [s.make_plan() for s in self.specs]
        self.pools = [R.build_pool(p, R.InitSpec(), seed=seed * 1000 + ell)
                      for ell, p in enumerate(self.plans)]
        self.head = C.make_head(vocab, emb, tied=tied, feature_size=hidden, seed=seed * 1000 + 999)

    def parameters(self):
        params = []
        for pool in self.pools:
            params.extend(pool.trainables())
        params.extend(self.head.trainables())
        return params

    def init_state(self, batch_size):
        return [C.zero_state(s, batch_size) for s in self.specs]

    def forward(self, ids, states, train=False, rng=None):
        """ids (T, batch) int array -> (list of per-step logits, new states)."""
        xs = [C.embed_tokens(self.head, ids[t]) for t in range(ids.shape[0])]
        feats, states = C.stack_forward(self.specs, self.pools, self.plans, xs, states,
                                        dropout_p=self.dropout, rng=rng, train=train)
        if train and self.dropout:
            feats = [T.dropout(f, self.dropout, rng, train=True) for f in feats]
        logits = [C.lm_head_forward(self.head, f) for f in feats]
        return logits, states

    def recurrent_counts(self):
        """Per-layer ParamCounts plus (P, S_r, P_r) totals over all layers."""
        per_layer = [R.count_parameters(p) for p in self.plans]
        total = R.ParamCounts(
            unrestricted=sum(c.unrestricted for c in per_layer),
            shared=sum(c.shared for c in per_layer),
            restricted=sum(c.restricted for c in per_layer))
        return per_layer, total

    # ---------------- checkpointing ----------------

    def save(self, path):
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "family": self.family,
            "layers": len(self.specs),
            "hidden": self.specs[0].hidden_size,
            "emb": self.emb,
            "vocab": self.vocab,
            "rates": [list(map(list, s.rates)) for s in self.specs],
            "tied": self.tied,
            "dropout": self.dropout,
            "gate_order": C.GATE_ORDER[self.family],
            "id_to_token": self.id_to_token,
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
        for ell, pool in enumerate(self.pools):
            arrays[f"layer{ell}_W"] = pool.W.data
            arrays[f"layer{ell}_b"] = pool.b.data
        arrays["embedding"] = self.head.embedding.data
        arrays["head_bias"] = self.head.bias.data
        if not self.tied:
            arrays["decoder"] = self.head.decoder.data
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as npz:
            meta = json.loads(bytes(npz["meta"]).decode("utf-8"))
            if meta["format_version"] != CHECKPOINT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {meta['format_version']}")
            if meta["gate_order"] != C.GATE_ORDER[meta["family"]]:
                raise ConfigError("checkpoint gate order does not match this build")
            model = cls(meta["family"], meta["vocab"], layers=meta["layers"],
                        hidden=meta["hidden"], emb=meta["emb"], rates=meta["rates"][0],
                        tied=meta["tied"], dropout=meta["dropout"],
                        id_to_token=meta["id_to_token"])
            for ell, pool in enumerate(model.pools):
                pool.W = Tensor(npz[f"layer{ell}_W"], requires_grad=True)
                pool.b = Tensor(npz[f"layer{ell}_b"], requires_grad=True)
            model.head.embedding = Tensor(npz["embedding"], requires_grad=True)
            model.head.bias = Tensor(npz["head_bias"], requires_grad=True)
            if not model.tied:
                model.head.decoder = Tensor(npz["decoder"], requires_grad=True)
        return model
