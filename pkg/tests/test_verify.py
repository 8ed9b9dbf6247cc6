import numpy as np
import pytest

from oracles import majority_recount
from votemark.data import make_blobs
from votemark.ensemble import EnsembleModel
from votemark.models import Architecture, SubModel, TrainConfig, fit
from votemark.verify import (
    Fingerprint,
    OracleFailure,
    TieError,
    attack_sweep,
    ensemble_oracle,
    load_fingerprint,
    record_fingerprint,
    save_fingerprint,
    verify_integrity,
)


def constant_model(label: int, d: int = 3, c: int = 4) -> SubModel:
    bias = np.zeros(c)
    bias[label - 1] = 1.0
    return SubModel(Architecture(d, (), c), [np.zeros((d, c))], [bias], {})


@pytest.fixture(scope="module")
def trained_ensemble():
    data = make_blobs(
        seed=31,
        classes=3,
        dim=6,
        spread=0.3,
        sizes={"train": 240, "test": 120, "mimic-attack": 100, "real-attack": 100},
    )
    models = [
        fit(*data.subset("train"), Architecture(6, (h,), 3), TrainConfig(epochs=10, seed=s))
        for h, s in ((8, 1), (10, 2), (12, 3))
    ]
    return data, EnsembleModel(models)


def tie_free_samples(ensemble, count, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((count * 4, ensemble.d))
    _, _, ties = ensemble.vote_batch(X)
    X = X[~ties][:count]
    assert X.shape[0] == count
    return X


def test_record_single_unanimous_sample():
    ens = EnsembleModel([constant_model(2)] * 3)
    fp = record_fingerprint(ens, np.array([[0.1, 0.2, 0.3]]), epsilon=0.01)
    assert len(fp) == 1 and fp.expected_labels.tolist() == [2]


def test_record_is_deterministic(trained_ensemble):
    _, ens = trained_ensemble
    S = tie_free_samples(ens, 40)
    a = record_fingerprint(ens, S, epsilon=0.01)
    b = record_fingerprint(ens, S, epsilon=0.01)
    assert a.to_bytes() == b.to_bytes()


def test_expected_labels_match_fresh_recount(trained_ensemble):
    _, ens = trained_ensemble
    S = tie_free_samples(ens, 30, seed=5)
    fp = record_fingerprint(ens, S, epsilon=0.01)
    for i in range(len(fp)):
        votes = [m.predict(S[i]) for m in ens.sub_models]
        winner, _, tie = majority_recount(votes)
        assert not tie
        assert fp.expected_labels[i] == winner


def test_tie_detected_at_recording():
    ens = EnsembleModel([constant_model(1), constant_model(2)])
    with pytest.raises(TieError) as exc:
        record_fingerprint(ens, np.array([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]), epsilon=0.0)
    assert exc.value.indices == [0, 1]


def test_recording_never_modifies_the_ensemble(trained_ensemble):
    _, ens = trained_ensemble
    before = [m.to_bytes() for m in ens.sub_models]
    record_fingerprint(ens, tie_free_samples(ens, 25), epsilon=0.01)
    assert [m.to_bytes() for m in ens.sub_models] == before


def test_self_verification_is_perfect(trained_ensemble):
    _, ens = trained_ensemble
    for eps in (0.0, 0.01, 0.5):
        fp = record_fingerprint(ens, tie_free_samples(ens, 50), epsilon=eps)
        report = verify_integrity(ensemble_oracle(ens), fp)
        assert report.match_rate == 1.0 and report.verdict == "intact"
        assert report.diffs == ()


def test_single_flip_of_hundred_and_epsilon_boundaries(trained_ensemble):
    _, ens = trained_ensemble
    S = tie_free_samples(ens, 100, seed=9)

    def flipping_oracle(x):
        label = ens.predict(x)
        if np.array_equal(x, S[0]):
            return label % ens.c + 1  # a different, in-range label
        return label

    for eps, verdict in ((0.005, "tampered"), (0.02, "intact")):
        fp = record_fingerprint(ens, S, epsilon=eps)
        report = verify_integrity(flipping_oracle, fp)
        assert report.matches == 99 and report.total == 100
        assert report.match_rate == 0.99
        assert report.verdict == verdict
        assert report.diffs[0][0] == 0


def test_match_rate_exactly_at_threshold_is_intact():
    # epsilon = 0.25 and 3/4 matches are exactly representable: rate == 1 - eps
    ens = EnsembleModel([constant_model(1)] * 3)
    S = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.3, 0.3, 0.3], [0.4, 0.4, 0.4]])
    fp = record_fingerprint(ens, S, epsilon=0.25)

    calls = {"n": 0}

    def oracle(x):
        calls["n"] += 1
        return 2 if calls["n"] == 1 else 1  # exactly one mismatch of four

    report = verify_integrity(oracle, fp)
    assert report.match_rate == 0.75 and report.verdict == "intact"


def test_exactly_one_query_per_sample_in_order(trained_ensemble):
    _, ens = trained_ensemble
    S = tie_free_samples(ens, 20, seed=2)
    fp = record_fingerprint(ens, S, epsilon=0.01)
    seen = []

    def oracle(x):
        seen.append(np.array(x))
        return ens.predict(x)

    verify_integrity(oracle, fp)
    assert len(seen) == 20
    assert all(np.array_equal(a, b) for a, b in zip(seen, S))


def test_oracle_failure_keeps_partial_diffs(trained_ensemble):
    _, ens = trained_ensemble
    S = tie_free_samples(ens, 10, seed=3)
    fp = record_fingerprint(ens, S, epsilon=0.01)

    def oracle(x):
        if np.array_equal(x, S[4]):
            raise ConnectionError("target went away")
        return ens.predict(x) % ens.c + 1  # every answered query mismatches

    with pytest.raises(OracleFailure) as exc:
        verify_integrity(oracle, fp)
    assert exc.value.index == 4
    assert exc.value.queries_made == 4
    assert len(exc.value.partial_diffs) == 4


def test_out_of_range_label_is_a_failure(trained_ensemble):
    _, ens = trained_ensemble
    fp = record_fingerprint(ens, tie_free_samples(ens, 5), epsilon=0.01)
    with pytest.raises(OracleFailure, match="out-of-range"):
        verify_integrity(lambda x: 99, fp)


def test_fingerprint_file_round_trip(tmp_path, trained_ensemble):
    _, ens = trained_ensemble
    fp = record_fingerprint(ens, tie_free_samples(ens, 15), epsilon=0.01, metadata={"note": "x"})
    save_fingerprint(fp, tmp_path / "fp.bin")
    again = load_fingerprint(tmp_path / "fp.bin")
    assert np.array_equal(fp.samples, again.samples)
    assert np.array_equal(fp.expected_labels, again.expected_labels)
    assert again.epsilon == 0.01 and again.metadata["note"] == "x"
    assert again.to_bytes() == fp.to_bytes()


def test_fingerprint_validation():
    with pytest.raises(ValueError, match="epsilon"):
        Fingerprint(samples=np.zeros((1, 2)), expected_labels=np.array([1]), epsilon=1.0)
    with pytest.raises(ValueError, match="at least one"):
        Fingerprint(samples=np.zeros((0, 2)), expected_labels=np.zeros(0), epsilon=0.1)


def test_attack_sweep_rows_and_independent_recount(trained_ensemble):
    data, ens = trained_ensemble
    fp = record_fingerprint(ens, tie_free_samples(ens, 60, seed=8), epsilon=0.01)

    rng = np.random.default_rng(12)
    variants = []
    for sub in ens.sub_models:
        noisy = [w + rng.normal(0, 0.05, size=w.shape) for w in sub.weights]
        variants.append(SubModel(sub.arch, noisy, list(sub.biases), {}))

    rows = attack_sweep(ens, variants, fp, test_data=data, test_split="test")
    assert len(rows) == 8  # sanity row + 2^3 - 1 combinations
    assert rows[0].attacked == (False, False, False)
    assert rows[0].match_rate == 1.0 and rows[0].verdict == "intact"
    labels = [r.label for r in rows]
    assert labels == ["---", "--A", "-A-", "-AA", "A--", "A-A", "AA-", "AAA"]

    # every row's match rate equals a direct evaluation of the decision rule
    for row in rows:
        subs = [variants[i] if row.attacked[i] else ens.sub_models[i] for i in range(3)]
        target = EnsembleModel(subs)
        matches = sum(
            1 for i in range(len(fp)) if target.predict(fp.samples[i]) == int(fp.expected_labels[i])
        )
        assert matches == row.matches
        assert row.verdict == ("tampered" if matches / len(fp) < 1 - 0.01 else "intact")


def test_attack_sweep_requires_one_variant_per_sub_model(trained_ensemble):
    _, ens = trained_ensemble
    fp = record_fingerprint(ens, tie_free_samples(ens, 5), epsilon=0.01)
    with pytest.raises(ValueError, match="per sub-model"):
        attack_sweep(ens, ens.sub_models[:2], fp)
