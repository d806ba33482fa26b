import numpy as np
import pytest

from rrnn import data as D
from rrnn import training as Tr
from rrnn.errors import ConfigError
from rrnn.model import LanguageModel


def test_tied_requires_matching_sizes():
    with pytest.raises(ConfigError):
        LanguageModel("lstm", 50, layers=1, hidden=16, emb=8, tied=True)


def test_layer_chain_sizes():
    m = LanguageModel("gru", 50, layers=3, hidden=12, emb=12, rates=0.5, tied=True)
    assert m.specs[0].input_size == 12
    assert all(s.input_size == 12 for s in m.specs[1:])


def test_parameter_list_tied_vs_untied():
    tied = LanguageModel("rnn", 30, layers=2, hidden=8, emb=8, tied=True)
    untied = LanguageModel("rnn", 30, layers=2, hidden=8, emb=6, tied=False)
    # 2 pools x (W, b) + embedding + bias (+ decoder when untied)
    assert len(tied.parameters()) == 6
    assert len(untied.parameters()) == 7


def test_recurrent_counts_sum_layers():
    m = LanguageModel("lstm", 30, layers=3, hidden=200, emb=200, rates=0.5, tied=True)
    per_layer, total = m.recurrent_counts()
    assert [c.restricted for c in per_layer] == [180_900] * 3
    assert total.restricted == 542_700


def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = LanguageModel("lstm", 40, layers=2, hidden=10, emb=10, rates=0.5,
                      tied=True, dropout=0.2, seed=11,
                      id_to_token=[f"t{i}" for i in range(40)])
    path = tmp_path / "model.npz"
    m.save(path)
    back = LanguageModel.load(path)
    for a, b in zip(m.parameters(), back.parameters()):
        assert np.array_equal(a.data, b.data)
    assert back.id_to_token == m.id_to_token
    assert back.family == "lstm" and back.tied


def test_checkpoint_preserves_eval_metrics(tmp_path):
    rng = np.random.default_rng(12)
    stream = rng.integers(0, 20, 1500).astype(np.int32)
    batches = D.batchify(stream, 4, 10)
    m = LanguageModel("gru", 20, layers=1, hidden=8, emb=8, rates=0.5,
                      tied=True, dropout=0.0, seed=12)
    before = Tr.evaluate(m, batches)
    path = tmp_path / "model.npz"
    m.save(path)
    after = Tr.evaluate(LanguageModel.load(path), batches)
    assert before == after


def test_forward_shapes():
    m = LanguageModel("lstm", 25, layers=2, hidden=8, emb=8, rates=0.5,
                      tied=True, dropout=0.0)
    ids = np.random.default_rng(13).integers(0, 25, (5, 3))
    logits, states = m.forward(ids, m.init_state(3))
    assert len(logits) == 5
    assert all(l.shape == (25, 3) for l in logits)
    assert states[0].c is not None and states[0].h.shape == (8, 3)
