import json
import math
import pathlib

import numpy as np
import pytest

import fdnml

ROOT = pathlib.Path(__file__).resolve().parents[2]


def test_version():
    assert fdnml.__version__ == "0.1.0"


def test_fbm_is_deterministic_and_cumulative():
    p1, inc = fdnml.gen_fbm(0.7, 1024, seed=3)
    p2, _ = fdnml.gen_fbm(0.7, 1024, seed=3)
    assert p1 == p2
    np.testing.assert_allclose(np.cumsum(inc), p1, rtol=0, atol=1e-9)


def test_bad_hurst_raises_config_error():
    with pytest.raises(fdnml.ConfigError):
        fdnml.gen_fbm(1.5, 1024)
    assert issubclass(fdnml.ConfigError, ValueError)


def test_cascade_zeta_closed_form():
    w, q = 0.7, 2.0
    assert fdnml.cascade_zeta(w, q) == pytest.approx(1.0 - math.log2(w**q + (1 - w) ** q), abs=1e-14)


def test_analyze_fbm_scaling():
    path, _ = fdnml.gen_fbm(0.7, 1 << 14, seed=11)
    s = fdnml.analyze(path)
    assert 0.6 < s["c1"] < 0.8
    assert s["j1"] == 4
    q = s["q"]
    assert q[0] == -5.0 and q[-1] == 5.0
    assert abs(s["zeta"][q.index(0.0)]) < 1e-12


def test_psi_weights_match_gamma_ratio():
    alpha = 0.4
    w = fdnml.psi_weights(alpha, 20)
    for i in range(1, 21):
        ref = math.gamma(i - alpha) / (math.gamma(-alpha) * math.gamma(i + 1))
        assert w[i] == pytest.approx(ref, rel=1e-12)


def test_gl_first_difference():
    x = np.random.default_rng(0).normal(size=50).tolist()
    d = fdnml.gl_difference(x, 1.0, 49)
    assert d[0] == x[0]
    np.testing.assert_array_equal(np.asarray(d[1:]), np.diff(x))


def test_fit_recovers_simulated_coupling():
    A = np.array([[-0.30, 0.10, 0.00, 0.05],
                  [0.08, -0.25, 0.06, 0.00],
                  [0.00, 0.07, -0.35, 0.10],
                  [0.05, 0.00, 0.09, -0.28]])
    alpha = np.array([0.6, 0.7, 0.8, 0.9])
    x0 = np.array([1.0, -0.5, 0.3, 0.8])
    x = fdnml.simulate_fdn(alpha, A, np.zeros((4, 0)), np.zeros((0, 0)), x0, 1024, memory=100)
    r = fdnml.fit(x, alpha, 1)
    assert np.linalg.norm(r["A"] - A) / np.linalg.norm(A) < 1e-6
    trace = r["residual_trace"]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))


def lz76_reference(bits):
    # Exhaustive-history phrase parsing.
    s = "".join(str(b) for b in bits)
    i, c = 0, 0
    while i < len(s):
        n = 1
        while i + n <= len(s) and s[i:i + n] in s[:i + n - 1]:
            n += 1
        c += 1
        i += n
    return c


def test_lz76_matches_reference():
    rng = np.random.default_rng(5)
    for _ in range(200):
        bits = rng.integers(0, 2, size=int(rng.integers(1, 80))).tolist()
        c, ci = fdnml.lz76(bits)
        assert c == lz76_reference(bits)
        n = len(bits)
        assert ci == pytest.approx(c * math.log2(n) / n if n > 1 else ci)


def test_binarize_uses_median():
    assert fdnml.binarize([1.0, 2.0, 3.0, 4.0]) == [0, 0, 1, 1]


def test_wasserstein_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=37), rng.normal(1.0, 2.0, size=53)
    assert fdnml.wasserstein1(a.tolist(), b.tolist()) == pytest.approx(stats.wasserstein_distance(a, b), abs=1e-12)


def test_contrastive_loss_orthonormal_pair():
    z = np.eye(2)
    loss, gr, gf = fdnml.contrastive_loss(z, z, 0.2)
    assert loss == pytest.approx(math.log1p(math.exp(-5.0)), abs=1e-12)
    assert gr.shape == (2, 2) and gf.shape == (2, 2)


def test_run_smoke_config(tmp_path):
    manifest = fdnml.run(str(ROOT / "configs" / "smoke.json"), out=str(tmp_path / "run"))
    stages = [s["name"] for s in manifest["stages"]]
    assert "ingest" in stages
    on_disk = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert on_disk["config_hash"] == manifest["config_hash"]
