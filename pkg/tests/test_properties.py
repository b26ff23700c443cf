"""Property-based checks of the stated invariants."""
import tempfile
from pathlib import Path

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fdin.autodiff import Graph
from fdin.checkpoint import load_model, save_model
from fdin.config import ModelConfig
from fdin.data import FeatureMapSequence, SyntheticSpec, generate, read_dataset, write_dataset
from fdin.interpretation import subset_importance
from fdin.layers import LstmStack, count_parameters, lstm_forward
from fdin.model import InterpreterNetwork, importance
from fdin.training import kfold

from oracles import softmax

FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-10, 10, allow_nan=False, width=64)


@FAST
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=finite))
def test_softmax_op_in_open_unit_interval(z):
    g = Graph()
    p = g.forward(g.softmax(g.const(z)))
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-9)


@FAST
@given(st.integers(3, 7), st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.1, 2.0))
def test_importance_is_a_distribution(n, width, seed, scale):
    rng = np.random.default_rng(seed)
    p = n * (n - 1) // 2
    lam = importance(rng.normal(scale=scale, size=(p, width)), rng.normal(scale=scale, size=(p, width)),
                     rng.normal(scale=scale, size=p))
    assert np.all((lam > 0) & (lam < 1))
    assert abs(lam.sum() - 1.0) <= 1e-6


@st.composite
def lambda_pair(draw):
    n = draw(st.integers(3, 6))
    p = n * (n - 1) // 2
    a = draw(arrays(np.float64, p, elements=finite))
    b = draw(arrays(np.float64, p, elements=finite))
    return n, softmax(a), softmax(b), draw(st.integers(2, n)), draw(st.floats(0, 1))


@FAST
@given(lambda_pair())
def test_chi_is_linear_in_lambda(case):
    n, l1, l2, n_i, alpha = case
    mixed = dict(subset_importance(alpha * l1 + (1 - alpha) * l2, n_i).entries)
    c1 = dict(subset_importance(l1, n_i).entries)
    c2 = dict(subset_importance(l2, n_i).entries)
    for s, v in mixed.items():
        assert abs(v - (alpha * c1[s] + (1 - alpha) * c2[s])) <= 1e-12


@FAST
@given(st.lists(st.integers(0, 30), min_size=2, max_size=120), st.integers(2, 6), st.integers(0, 1000))
def test_fold_invariants(subjects, k, seed):
    distinct = set(subjects)
    if len(distinct) < k:
        return
    split = kfold(subjects, k, seed)
    flat = [s for f in split.folds for s in f]
    assert sorted(flat) == sorted(distinct)
    sizes = [len(f) for f in split.folds]
    assert max(sizes) - min(sizes) <= 1
    assert split.audit(subjects) == 0
    tested = sorted(i for _, _, test in split.rounds(subjects) for i in test)
    assert tested == list(range(len(subjects)))
    assert split.folds == kfold(subjects, k, seed).folds


@st.composite
def datasets(draw):
    h, w, c = draw(st.integers(1, 3)), draw(st.integers(1, 3)), draw(st.integers(1, 3))
    n = draw(st.integers(1, 5))
    out = []
    for k in range(n):
        t = draw(st.integers(1, 4))
        frames = draw(arrays(np.float64, (t, h, w, c), elements=st.floats(allow_nan=False, allow_infinity=False)))
        label = draw(st.floats(allow_nan=False, allow_infinity=False))
        sid = draw(st.text(min_size=0, max_size=6))
        out.append(FeatureMapSequence(frames, label, sid))
    return out


@FAST
@given(datasets())
def test_dataset_round_trip(data):
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.fdin"
        write_dataset(data, path)
        back = read_dataset(path)
    assert len(back) == len(data)
    for a, b in zip(data, back):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert np.float64(a.label).tobytes() == np.float64(b.label).tobytes()
        assert a.subject_id == b.subject_id


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["regression", "classification"]),
       st.sampled_from(["full", "no-locational", "regional", "holistic"]))
def test_checkpoint_round_trip(seed, task, variant):
    m = InterpreterNetwork(ModelConfig.tiny(task=task).with_variant(variant), seed=seed)
    rng = np.random.default_rng(seed)
    for arr in m.state().values():
        arr[...] = rng.uniform(0.1, 2.0, size=arr.shape)
    with tempfile.TemporaryDirectory() as d:
        save_model(m, Path(d) / "m.ckpt")
        back, _ = load_model(Path(d) / "m.ckpt")
    for k, v in m.state().items():
        assert back.state()[k].tobytes() == v.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 3))
def test_forward_is_deterministic_and_pure(seed, b, t):
    m = InterpreterNetwork(ModelConfig.tiny(), seed=seed)
    frames = np.random.default_rng(seed).normal(size=(b, t, 2, 2, 2))
    before = {k: v.copy() for k, v in m.state().items()}
    first = m.predict(frames)
    second = m.predict(frames)
    assert first.y.tobytes() == second.y.tobytes()
    assert first.importance.tobytes() == second.importance.tobytes()
    for k, v in m.state().items():
        assert v.tobytes() == before[k].tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 1000))
def test_lstm_parameter_count(n_in, hidden, seed):
    stack = LstmStack.init("s", n_in, hidden, np.random.default_rng(seed))
    expected, prev = 0, n_in
    for h in hidden:
        expected += 4 * h * (prev + h + 1)
        prev = h
    assert count_parameters(stack) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 1000))
def test_lstm_ignores_padding_beyond_declared_length(t_len, pad, seed):
    rng = np.random.default_rng(seed)
    stack = LstmStack.init("s", 3, [4, 2], rng)
    x = rng.normal(size=(t_len, 2, 3))
    padded = np.concatenate([x, np.zeros((pad, 2, 3))])

    def run(arr, t):
        g = Graph()
        return g.forward(lstm_forward(g, stack, g.const(arr[:t]), t, 2))

    np.testing.assert_array_equal(run(x, t_len), run(padded, t_len))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_generate_is_a_pure_function_of_the_spec(seed, n):
    spec = dict(rows=2, cols=2, height=2, width=2, channels=2, t_min=2, t_max=4, planted=(0, 3),
                n_samples=n, seed=seed)
    a, b = generate(SyntheticSpec(**spec)), generate(SyntheticSpec(**spec))
    assert [s.frames.tobytes() for s in a] == [s.frames.tobytes() for s in b]
    assert [(s.label, s.subject_id) for s in a] == [(s.label, s.subject_id) for s in b]
