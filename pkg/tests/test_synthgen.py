import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from causalmask.embio import encode_emb
from causalmask.errors import ConfigError
from causalmask.independence import KernelConfig, hsic_biased, permutation_null
from causalmask.mask import NoiseSource
from causalmask.numcore import MlpParams
from causalmask.synthgen import ScmSpec, domain_shift_report, make_benchmark, sample_batch
from causalmask.trainer import ModelBundle


@pytest.fixture(scope="module")
def bench():
    return make_benchmark(0)


def simple_spec(rho_train=0.0, noise=(0.3, 0.3, 0.05), mixing="aligned"):
    d, causal = 6, (1, 4)
    return ScmSpec(d, causal, np.ones(2), *noise,
                   spurious_rho={"a": rho_train, "b": 0.0},
                   domain_styles={"a": np.array([1.0, -1.0, 2.0, 0.5]), "b": np.zeros(4)},
                   mixing_mode=mixing)


def test_noiseless_mechanism():
    spec = simple_spec(noise=(0, 0, 0))
    b = sample_batch(spec, "a", 50, 0)
    pos = b.embeddings[b.labels == 1]
    assert np.all(pos[:, [1, 4]] == 1.0)
    assert np.all(pos[:, [0, 2, 3, 5]] == [1.0, -1.0, 2.0, 0.5])
    assert b.ground_truth == (1, 4)


def test_spec_validation():
    with pytest.raises(ConfigError):
        ScmSpec(4, (0, 0), np.ones(2))
    with pytest.raises(ConfigError):
        ScmSpec(4, (0, 5), np.ones(2))
    with pytest.raises(ConfigError):
        ScmSpec(4, (0,), np.ones(1), spurious_rho={"a": 2.0}, domain_styles={"a": np.zeros(3)})
    with pytest.raises(KeyError):
        sample_batch(simple_spec(), "zzz", 3, 0)
    spec = simple_spec()
    assert ScmSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


def test_no_leak_without_rho():
    b = sample_batch(simple_spec(0.0), "a", 10_000, 1)
    for j in (0, 2, 3, 5):
        assert abs(np.corrcoef(b.embeddings[:, j], b.labels)[0, 1]) < 0.05


def test_spurious_probe_oracle(bench):
    nc = list(bench.spec.noncausal_dims)
    spec = bench.spec
    train = sample_batch(spec, "train", 10_000, 5)
    probe = LogisticRegression(max_iter=2000).fit(train.embeddings[:, nc], train.labels)
    assert probe.score(train.embeddings[:, nc], train.labels) >= 0.85
    fresh = sample_batch(spec, "shift1", 10_000, 6)
    assert probe.score(fresh.embeddings[:, nc], fresh.labels) <= 0.6


def test_benchmark_shape_and_determinism(bench):
    assert bench.train.n == 8192 and bench.val.n == 1024
    assert bench.test_same_domain.n == 2048 and len(bench.test_shifted) == 3
    assert all(b.n == 2048 for b in bench.test_shifted)
    assert bench.spec.d == 64 and bench.spec.d_c == 8
    assert bench.spec.spurious_rho["train"] == 0.9
    assert all(bench.spec.spurious_rho[b.domain_id] == 0.0 for b in bench.test_shifted)
    again = make_benchmark(0)
    for x, y in zip([bench.train, bench.val] + bench.test_sets(), [again.train, again.val] + again.test_sets()):
        assert encode_emb(x) == encode_emb(y)


def test_causal_oracle_and_naive_gap(bench):
    c = list(bench.spec.causal_dims)
    oracle = LogisticRegression(max_iter=2000).fit(bench.train.embeddings[:, c], bench.train.labels)
    for b in [bench.val] + bench.test_sets():
        assert oracle.score(b.embeddings[:, c], b.labels) >= 0.97
    naive = LogisticRegression(max_iter=2000).fit(bench.train.embeddings, bench.train.labels)
    same = naive.score(bench.test_same_domain.embeddings, bench.test_same_domain.labels)
    for b in bench.test_shifted:
        assert naive.score(b.embeddings, b.labels) <= same - 0.10


def test_causal_means_stable_across_domains(bench):
    c = list(bench.spec.causal_dims)
    ref = bench.test_same_domain
    a = ref.embeddings[:, c]
    for b in bench.test_shifted:
        o = b.embeddings[:, c]
        se = np.sqrt(a.var(axis=0) / len(a) + o.var(axis=0) / len(o))
        assert np.all(np.abs(a.mean(axis=0) - o.mean(axis=0)) <= 3 * se)


def test_factors_independent_without_leak(bench):
    c, nc = list(bench.spec.causal_dims), list(bench.spec.noncausal_dims)
    below = 0
    for trial in range(20):
        b = sample_batch(bench.spec, "shift1", 128, 100 + trial)
        A, B = b.embeddings[:, c], b.embeddings[:, nc]
        t = permutation_null(A, B, KernelConfig(), 200, NoiseSource(trial))
        below += hsic_biased(A, B)[0] <= t
    assert below >= 18


def test_rotated_mode_hides_truth():
    b = sample_batch(simple_spec(mixing="rotated"), "a", 10, 0)
    assert b.ground_truth is None


def test_shift_report_constant_predictor(bench):
    bundle = ModelBundle.init(64, np.random.default_rng(0))
    bundle.classifier = MlpParams.zeros_like(bundle.classifier)
    rep = domain_shift_report(bench.spec, bundle, bench.test_sets())
    for row, b in zip(rep.rows, bench.test_sets()):
        assert row.accuracy == b.labels.mean()  # ties predict positive
        assert row.tp + row.fp + row.tn + row.fn == row.n == b.n
        assert row.accuracy == (row.tp + row.tn) / row.n
    assert rep.aggregate["accuracy"] == np.mean([r.accuracy for r in rep.rows])
    assert set(rep.mask) >= {"precision", "recall", "iou"}
