"""Acceptance suite.

Each test covers one release criterion at its stated tolerance and prints a
single PASS line (run with `pytest tests/test_acceptance.py -v -s` to see
them). Thresholds here are fixed; a red criterion means the artifact does not
meet its contract.
"""

import time
from fractions import Fraction

import numpy as np

from oracles import TableModel, brute_force_select, directional_derivative, index_candidates
from votemark.attacks import AttackSpec, AttackSuite, load_suite
from votemark.candidates import CandidateSet, generate_random_candidates
from votemark.config import default_config
from votemark.data import make_blobs
from votemark.ensemble import EnsembleModel, load_ensemble
from votemark.models import Architecture, SubModel, TrainConfig, fit, init_model, loss_and_grad
from votemark.pipeline import run_pipeline
from votemark.sensitivity import SelectionConfig, select_sensitive
from votemark.util import read_container, read_json, sha256_file
from votemark.verify import ensemble_oracle, load_fingerprint, record_fingerprint, verify_integrity

DRIFT_BAND_PTS = 2.0
FLOAT_SLACK = 1e-9  # accuracies are sample fractions; guard the band against float noise


def _passed(criterion: int, detail: str) -> None:
    print(f"[criterion {criterion}] PASS - {detail}")


# 1 ------------------------------------------------------------------


def test_criterion_1_selection_matches_brute_force_oracle():
    rng = np.random.default_rng(20240811)
    start = time.perf_counter()
    instances = 100
    for _ in range(instances):
        n = int(rng.integers(1, 4))
        c = int(rng.integers(2, 11))
        num_candidates = int(rng.integers(1, 101))
        base, suites_labels, suites = [], [], []
        for _i in range(n):
            labels = rng.integers(1, c + 1, size=num_candidates).tolist()
            base.append(labels)
            m = int(rng.integers(1, 7))
            variants = [rng.integers(1, c + 1, size=num_candidates).tolist() for _ in range(m)]
            suites_labels.append(variants)
            suites.append(
                AttackSuite(
                    members=tuple(TableModel(v, c) for v in variants),
                    specs=tuple(AttackSpec(kind="MF", epochs=1, seed=j) for j in range(m)),
                )
            )
        alpha = Fraction(int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        alpha = min(alpha, Fraction(1))
        beta = Fraction(int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        beta = min(beta, Fraction(1))

        models = [TableModel(lab, c) for lab in base]
        X = index_candidates(num_candidates)
        kept, profiles = select_sensitive(X, models, suites, SelectionConfig(alpha, beta), EnsembleModel(models))
        oracle_kept, oracle_profiles = brute_force_select(base, suites_labels, alpha, beta)

        assert [int(x[0]) for x in kept] == oracle_kept
        assert np.array_equal(kept, X[oracle_kept])
        for p, o in zip(profiles, oracle_profiles):
            assert p.rho == o["rho"]
            assert p.bits == o["bits"]
            assert p.selected == o["selected"]
            assert p.tie == o["tie"]
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _passed(1, f"{instances} randomized instances bit-exact vs brute force in {elapsed:.2f}s")


# 2 ------------------------------------------------------------------


def test_criterion_2_self_verification_across_seeds():
    start = time.perf_counter()
    sizes = {"train": 300, "validation": 40, "test": 120, "mimic-attack": 100, "real-attack": 100}
    for seed in (1, 2, 3, 4, 5):
        data = make_blobs(seed=seed, classes=3, dim=16, spread=0.3, sizes=sizes)
        models = [
            fit(*data.subset("train"), Architecture(16, (h,), 3), TrainConfig(epochs=10, seed=seed * 10 + i))
            for i, h in enumerate((24, 16, 32))
        ]
        ensemble = EnsembleModel(models)
        pool = generate_random_candidates(f"accept-{seed}", 800, 16)
        _, _, ties = ensemble.vote_batch(pool.samples)
        samples = pool.samples[~ties][:200]
        fp = record_fingerprint(ensemble, samples, epsilon=0.01)
        report = verify_integrity(ensemble_oracle(ensemble), fp)
        assert report.match_rate == 1.0
        assert report.verdict == "intact"
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _passed(2, f"5 seeds self-verify at match rate exactly 1.0 in {elapsed:.2f}s")


# 3 / 4 / 5 ----------------------------------------------------------


def test_criterion_3_tamper_detection_all_combinations(desk_run):
    sweep = read_json(desk_run["out"] / "sweep.json")
    eps = sweep["epsilon"]
    assert eps == 0.01
    attacked_rows = sweep["rows"][1:]
    assert len(attacked_rows) == 7
    for row in attacked_rows:
        assert Fraction(row["matches"], row["total"]) < 1 - Fraction(eps), row["label"]
        assert row["verdict"] == "tampered", row["label"]
    all_row = attacked_rows[-1]
    assert all_row["label"] == "AAA"
    assert all_row["match_rate"] <= 0.90
    assert desk_run["elapsed"] < 300.0
    worst = max(r["match_rate"] for r in attacked_rows)
    _passed(
        3,
        f"all 7 combinations detected (worst match {worst:.4f} < 0.99, "
        f"all-attacked {all_row['match_rate']:.4f} <= 0.90) in {desk_run['elapsed']:.1f}s",
    )


def test_criterion_4_attack_realism_band(desk_run):
    sweep = read_json(desk_run["out"] / "sweep.json")
    base = sweep["baseline_accuracy"]
    worst = 0.0
    for sm in sweep["submodels"]:
        drift = abs(sm["attacked_accuracy"] - sm["base_accuracy"]) * 100.0
        worst = max(worst, drift)
        assert drift <= DRIFT_BAND_PTS + FLOAT_SLACK, f"sub-model {sm['index']}"
    for row in sweep["rows"]:
        drift = abs(row["task_accuracy"] - base) * 100.0
        worst = max(worst, drift)
        assert drift <= DRIFT_BAND_PTS + FLOAT_SLACK, row["label"]
    _passed(4, f"every attacked sub-model and ensemble within {DRIFT_BAND_PTS} pts (worst {worst:.2f})")


def test_criterion_5_nonzero_yield(desk_run):
    cfg = default_config()
    assert cfg.selection.alpha == Fraction(2, 3) and cfg.selection.beta == Fraction(2, 3)
    assert cfg.suite_size == 6
    selection = read_json(desk_run["out"] / "selection.json")
    assert selection["selected"] > 0
    yield_pct = 100.0 * selection["selected"] / selection["candidates"]
    _passed(
        5,
        f"|S| = {selection['selected']} of {selection['candidates']} candidates "
        f"(yield {yield_pct:.2f}%; full-scale reference range 1.94%..28.91%, average 11.46%)",
    )


# 6 ------------------------------------------------------------------


def test_criterion_6_threshold_monotonicity(desk_run):
    start = time.perf_counter()
    out = desk_run["out"]
    ensemble = load_ensemble(out / "ensemble.json")
    suites = [load_suite(out / "attacks" / "mimic" / f"sub_{i:02d}") for i in (1, 2, 3)]
    header, blocks = read_container(out / "candidates.bin", kind="candidates")
    pool = CandidateSet(samples=blocks["samples"], descriptor=header["descriptor"])

    alphas = [Fraction(1, 3), Fraction(1, 2), Fraction(2, 3), Fraction(1)]
    betas = [Fraction(1, 3), Fraction(2, 3), Fraction(1)]
    kept: dict[tuple[Fraction, Fraction], set[int]] = {}
    for alpha in alphas:
        for beta in betas:
            _, profiles = select_sensitive(
                pool, ensemble.sub_models, suites, SelectionConfig(alpha, beta), ensemble
            )
            kept[(alpha, beta)] = {p.index for p in profiles if p.kept}

    checked = 0
    for (a1, b1), s1 in kept.items():
        for (a2, b2), s2 in kept.items():
            if a1 <= a2 and b1 <= b2:
                assert s2 <= s1, f"({a2},{b2}) not nested in ({a1},{b1})"
                checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _passed(6, f"{len(kept)} grid points, {checked} nesting relations hold exactly in {elapsed:.1f}s")


# 7 ------------------------------------------------------------------


def test_criterion_7_determinism_and_losslessness(tmp_path, mini_config):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run_pipeline(mini_config, a).status == "ok"
    assert run_pipeline(mini_config, b).status == "ok"

    compared = [
        "fingerprint.bin",
        "report/report.json",
        "report/accuracy.txt",
        "report/yield.txt",
        "report/match_rates.txt",
        "verify_self.json",
        "sweep.json",
    ]
    for rel in compared:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    # fingerprinting never modifies the protected ensemble
    ensemble = load_ensemble(a / "ensemble.json")
    before = [m.to_bytes() for m in ensemble.sub_models]
    fp = load_fingerprint(a / "fingerprint.bin")
    record_fingerprint(ensemble, fp.samples, epsilon=fp.epsilon)
    after = [m.to_bytes() for m in ensemble.sub_models]
    assert before == after
    model_hashes_now = [sha256_file(a / "models" / f"sub_{i:02d}.mdl") for i in (1, 2, 3)]
    manifest = read_json(a / "ensemble.json")
    assert model_hashes_now == [e["sha256"] for e in manifest["sub_models"]]
    _passed(7, f"{len(compared)} artifacts byte-identical across runs; ensemble bytes untouched")


# 8 ------------------------------------------------------------------


def test_criterion_8_gradients_match_finite_differences():
    arch = Architecture(3, (3,), 2, activation="tanh")
    assert arch.param_count == 20
    rng = np.random.default_rng(88)
    model = init_model(arch, seed=88)
    X = rng.random((24, 3))
    y = rng.integers(1, 3, size=24)
    _, dWs, dbs = loss_and_grad(model, X, y)
    grad = np.concatenate([dWs[0].ravel(), dbs[0], dWs[1].ravel(), dbs[1]])

    def f(theta):
        return loss_and_grad(SubModel.from_flat(arch, theta, {}), X, y)[0]

    theta0 = model.flat_params()
    worst = 0.0
    for _ in range(10):
        v = rng.normal(size=20)
        v /= np.linalg.norm(v)
        numeric = directional_derivative(f, theta0, v)
        analytic = float(grad @ v)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, rel)
        assert rel < 1e-4
    _passed(8, f"10 random probes on a 20-parameter net, worst relative error {worst:.2e} < 1e-4")


# 9 ------------------------------------------------------------------


def test_criterion_9_verdict_boundary_behavior():
    data = make_blobs(seed=55, classes=3, dim=16, spread=0.3, sizes={"train": 300})
    models = [
        fit(*data.subset("train"), Architecture(16, (h,), 3), TrainConfig(epochs=8, seed=50 + i))
        for i, h in enumerate((24, 16, 32))
    ]
    ensemble = EnsembleModel(models)
    pool = generate_random_candidates("boundary", 600, 16)
    _, _, ties = ensemble.vote_batch(pool.samples)
    S = pool.samples[~ties][:100]
    assert S.shape[0] == 100

    def one_flip_oracle(x):
        label = ensemble.predict(x)
        if np.array_equal(x, S[0]):
            return label % 3 + 1
        return label

    for eps, expected in ((0.005, "tampered"), (0.02, "intact")):
        fp = record_fingerprint(ensemble, S, epsilon=eps)
        report = verify_integrity(one_flip_oracle, fp)
        assert report.matches == 99 and report.total == 100
        assert report.match_rate == 0.99
        assert report.verdict == expected, f"epsilon={eps}"
    _passed(9, "match rate 0.99 flips the verdict across epsilon 0.005/0.02 via strict inequality")
