"""End-to-end acceptance criteria, one test per criterion.

The three full-scale scenarios (1000 samples, 300 epochs each) take about
five minutes apiece on one core; they are computed once per session.
"""

import dataclasses
import hashlib
from functools import lru_cache

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from tensorchart.cli import main
from tensorchart.evaluate import evaluate_chart, pairwise_distances
from tensorchart.features import (
    DissimilarityMatrix,
    all_pairs_shortest_paths,
    geodesic_dissimilarity,
    pairwise_scm_dissimilarity,
)
from tensorchart.network import Architecture, TclLayer, backward, init_params, pair_loss, parameter_count, tcl_forward
from tensorchart.pipeline import PipelineConfig, run_pipeline
from tensorchart.tensor import fold, hosvd, tucker_reconstruct, unfold

K = 50
BUDGET_SECONDS = 30 * 60
ADP_R2M_PARAMS = (1_500_000_000, 985_000_000)

SCENARIOS = {
    "clean": dict(snr_db=None, hopping=1),
    "noise": dict(snr_db=0.0, hopping=1),
    "hopping": dict(snr_db=None, hopping=17),
}


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@lru_cache(maxsize=None)
def scenario(name: str):
    base = PipelineConfig()
    cfg = base.replace(
        generate=dataclasses.replace(base.generate, **SCENARIOS[name]),
        evaluate=dataclasses.replace(base.evaluate, metric_k=K),
    )
    return run_pipeline(cfg)


def _fmt(r):
    return f"CT {r.ct:.4f} TW {r.tw:.4f} KS {r.ks:.4f}"


def _deltas(name):
    clean, other = scenario("clean").dtl, scenario(name).dtl
    d_ct, d_tw, d_ks = clean.ct - other.ct, clean.tw - other.tw, other.ks - clean.ks
    ok = d_ct <= 0.04 and d_tw <= 0.04 and d_ks <= 0.08
    return ok, f"{_fmt(other)}; CT drop {d_ct:+.4f} TW drop {d_tw:+.4f} KS rise {d_ks:+.4f}"


@pytest.mark.slow
def test_clean_end_to_end():
    res = scenario("clean")
    r = res.dtl
    ok = r.ct >= 0.95 and r.tw >= 0.93 and r.ks <= 0.25 and r.neighborhood_k == K and res.seconds <= BUDGET_SECONDS
    record("clean end-to-end", ok, f"{_fmt(r)} k={r.neighborhood_k} in {res.seconds:.0f} s")
    assert ok


@pytest.mark.slow
def test_noise_robustness():
    ok, detail = _deltas("noise")
    record("noise robustness (0 dB)", ok, detail)
    assert ok


@pytest.mark.slow
def test_hopping_robustness():
    same_shape = scenario("hopping").feature_shape == scenario("clean").feature_shape == (32, 32, 24)
    ok, detail = _deltas("hopping")
    ok = ok and same_shape
    record("hopping robustness (1/17)", ok, f"feature shape {scenario('hopping').feature_shape}; {detail}")
    assert ok


def test_model_size():
    n = parameter_count(init_params(Architecture()))
    ok = 9500 <= n <= 14000 and all(n * 10**4 <= big for big in ADP_R2M_PARAMS)
    record("model size", ok, f"{n} parameters, {min(ADP_R2M_PARAMS) / n:.0f}x below 985M")
    assert ok


@pytest.mark.slow
def test_isomap_oracle():
    iso = scenario("clean").isomap
    gaps = {name: abs(scenario(name).dtl.ks - scenario(name).isomap.ks) for name in SCENARIOS}
    ok = iso.ks <= 0.25 and iso.ct >= 0.95 and iso.tw >= 0.95 and max(gaps.values()) <= 0.1
    gap_text = ", ".join(f"{k} {v:.4f}" for k, v in gaps.items())
    record("isomap oracle", ok, f"clean Isomap {_fmt(iso)}; |KS_DTL - KS_Isomap|: {gap_text}")
    assert ok


def _property_checks():
    rng = np.random.default_rng(2024)
    out = {}

    x = rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))
    out["fold/unfold exact"] = all(np.array_equal(fold(unfold(x, m), m, x.shape), x) for m in (1, 2, 3))

    t = hosvd(x, x.shape)
    ortho = max(np.abs(u.conj().T @ u - np.eye(u.shape[1])).max() for u in t.factors)
    recon = np.linalg.norm(tucker_reconstruct(t) - x) / np.linalg.norm(x)
    out["HOSVD orthonormal and exact"] = ortho <= 1e-10 and recon <= 1e-10

    ranks = (2, 3, 2)
    err2 = np.linalg.norm(tucker_reconstruct(hosvd(x, ranks)) - x) ** 2
    bound = sum(np.sum(np.linalg.svd(unfold(x, m), compute_uv=False)[r:] ** 2) for m, r in zip((1, 2, 3), ranks))
    out["truncation error bound"] = err2 <= bound * (1 + 1e-12)

    y = rng.standard_normal((4, 4, 4))
    fac = tuple(rng.standard_normal((2, 4)) for _ in range(3))
    naive = np.einsum("ai,bj,ck,ijk->abc", *fac, y)
    out["TCL vs contraction oracle"] = np.abs(tcl_forward(y, TclLayer(fac), lambda v: v) - naive).max() <= 1e-12

    worst = 0.0
    for seed in range(20):
        arch = Architecture(((3, 3, 2), (2, 2, 1)), (4,), 2)
        p = init_params(arch, seed)
        re, im = rng.standard_normal((2, 4, 3, 3, 2))
        pairs, tgt = [(0, 1), (2, 3), (0, 3)], rng.uniform(0.1, 2, 3)
        _, g = backward(p, re, im, pairs, tgt)
        a, theta = g.flat(), p.flat()
        num = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = 1e-6
            num[i] = (pair_loss(p.with_flat(theta + e), re, im, pairs, tgt) - pair_loss(p.with_flat(theta - e), re, im, pairs, tgt)) / 2e-6
        scale = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-3 * np.abs(a).max())
        worst = max(worst, float((np.abs(a - num) / scale).max()))
    out["gradients vs finite differences"] = worst <= 1e-5

    m = rng.standard_normal((12, 4, 4)) + 1j * rng.standard_normal((12, 4, 4))
    scms = m @ np.conj(np.swapaxes(m, 1, 2))
    d = pairwise_scm_dissimilarity(scms).values
    ds = pairwise_scm_dissimilarity(scms * rng.uniform(0.1, 10, 12)[:, None, None]).values
    out["d_SCM range/symmetry/scale"] = (
        d.min() >= 0 and d.max() <= 1 and np.array_equal(d, d.T) and not np.diagonal(d).any() and np.allclose(d, ds, atol=1e-12)
    )

    g = geodesic_dissimilarity(d, 3).values
    out["geodesic triangle inequality"] = bool(np.all(g[:, None, :] <= g[:, :, None] + g[None, :, :]))

    pts = rng.uniform(0, 1, (40, 2))
    rep = evaluate_chart(DissimilarityMatrix(pairwise_distances(pts)), 2.5 * pts[:, ::-1] + 1.0, 4)
    out["metrics on scaled isometry"] = rep.ct == 1 and rep.tw == 1 and rep.ks <= 1e-10

    w = np.full((20, 20), np.inf)
    np.fill_diagonal(w, 0)
    adj = [{} for _ in range(20)]
    for i, j in zip(*np.triu_indices(20, 1)):
        if rng.random() < 0.2:
            w[i, j] = w[j, i] = adj[i][j] = adj[j][i] = float(rng.uniform(0.1, 5))
    fw = w.copy()
    for k in range(20):
        fw = np.minimum(fw, fw[:, k : k + 1] + fw[k : k + 1, :])
    out["Dijkstra vs Floyd-Warshall"] = np.allclose(all_pairs_shortest_paths(adj), fw, rtol=1e-14, atol=0)
    return out


def test_property_suites():
    checks = _property_checks()
    failed = [name for name, ok in checks.items() if not ok]
    record("property suites", not failed, f"{len(checks) - len(failed)}/{len(checks)} pass" + (f"; failed: {failed}" if failed else ""))
    assert not failed


def _run_all(out, cfg_path, *flags):
    for cmd in ("generate", "featurize", "train", "evaluate", "baseline-isomap"):
        assert main([cmd, "--config", str(cfg_path), "--out", str(out), *flags]) == 0
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())}


def test_determinism(tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text("[generate]\nn_samples = 60\n[train]\nepochs = 5\n[evaluate]\nmetric_k = 3\n")
    results = []
    for flags in ((), ("--snr", "0", "--hopping", "17")):
        a = _run_all(tmp_path / ("a" + "".join(flags)), cfg, *flags)
        b = _run_all(tmp_path / ("b" + "".join(flags)), cfg, *flags)
        results.append(a == b and len(a) == 9)
    ok = all(results)
    record("determinism", ok, "all 9 artifacts bit-identical across two runs, clean and noisy+hopped")
    assert ok
