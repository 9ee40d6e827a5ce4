import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lamaml.errors import MetricError
from lamaml.metrics import (
    RunRecord,
    bti,
    cosine,
    empty_record,
    grad_alignment,
    old_task_alignment,
    retained_accuracy,
)
from lamaml.nn import Network
from lamaml.replay import ReplayBuffer
from lamaml.tasks import Example

# reference values reported for La-MAML on MNIST Rotations (RA, BTI)
PAPER_LAMAML_ROT = (77.42, -8.64)


def record(rows):
    T = len(rows)
    acc = np.full((T, T), np.nan)
    for i, row in enumerate(rows):
        acc[i, : len(row)] = row
    return RunRecord(acc=acc)


def test_perfect_learner():
    assert retained_accuracy(record([[1.0], [1.0, 1.0]])) == 100.0


def test_ra_arithmetic():
    assert retained_accuracy(record([[0.5], [0.5, 0.7]])) == pytest.approx(60.0)


def test_bti_no_forgetting():
    assert bti(record([[0.8], [0.8, 0.6], [0.8, 0.6, 0.9]])) == 0.0


def test_bti_arithmetic():
    assert bti(record([[0.9], [0.8, 0.5]])) == pytest.approx(-10.0)


def test_bti_excludes_last_task():
    a = record([[0.9], [0.8, 0.5]])
    b = record([[0.9], [0.8, 0.99]])
    assert bti(a) == bti(b)


def test_errors():
    with pytest.raises(MetricError):
        retained_accuracy(empty_record(3))
    with pytest.raises(MetricError):
        bti(record([[1.0]]))


def test_reference_values_are_plausible_targets():
    ra, b = PAPER_LAMAML_ROT
    assert 0 < ra < 100 and b < 0


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_ra_permutation_invariant(T, seed):
    r = np.random.default_rng(seed)
    acc = np.tril(r.random((T, T)))
    acc[np.triu_indices(T, 1)] = np.nan
    perm = r.permutation(T)
    a, b = RunRecord(acc=acc), RunRecord(acc=acc[:, perm])
    assert retained_accuracy(a) == pytest.approx(retained_accuracy(b))


def small_net():
    net = Network((3, 5, 2))
    return net, net.init_params(np.random.default_rng(0))


def exs(r, n, task_id=0):
    return [Example(r.standard_normal(3), int(r.integers(2)), task_id) for _ in range(n)]


def test_self_alignment():
    net, th = small_net()
    b = exs(np.random.default_rng(1), 5)
    assert grad_alignment(net, th, b, b) == pytest.approx(1.0)


def test_cosine_properties(rng):
    a = np.array([1.0, 0.0, 2.0])
    b = np.array([0.0, 3.0, 0.0])
    assert abs(cosine(a, b)) <= 1e-10
    assert np.isnan(cosine(a, np.zeros(3)))
    x, y = rng.standard_normal(7), rng.standard_normal(7)
    assert cosine(3.0 * x, 0.2 * y) == pytest.approx(cosine(x, y))


def test_alignment_needs_batches():
    net, th = small_net()
    with pytest.raises(MetricError):
        grad_alignment(net, th, [], exs(np.random.default_rng(0), 2))


def test_old_task_alignment():
    net, th = small_net()
    r = np.random.default_rng(2)
    buf = ReplayBuffer(50)
    for ex in exs(r, 6, 0):
        buf.push(ex, r)
    assert np.isnan(old_task_alignment(net, th, buf, 1))
    for ex in exs(r, 6, 1) + exs(r, 6, 2):
        buf.push(ex, r)
    from lamaml.nn import grad_of
    from lamaml.tasks import stack

    groups = [[e for e in buf if e.task_id == t] for t in (0, 1)]
    g0, g1 = (grad_of(net, th, *stack(g)) for g in groups)
    # task 2 is the current task, so only tasks 0 and 1 count
    assert old_task_alignment(net, th, buf, 2) == pytest.approx(float(g0 @ g1))
