import math

import numpy as np
import pytest

from molmimo import particle_sim as ps
from molmimo.particle_sim import (
    HitRecords, SimParams, estimate_cdf, read_cdf_csv, run_one_shot, step, write_cdf_csv,
)
from molmimo.topology import LinkId

from oracles import siso_cdf

needs_ext = pytest.mark.skipif(ps.BACKEND != "cython", reason="compiled kernel not built")


def test_step_std_matches_diffusion():
    rng = np.random.default_rng(0)
    n = 100_000
    disp = step(np.zeros((n, 3)), 50.0, 1e-4, rng)
    var = disp.var(axis=0, ddof=1)
    se = 0.01 * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(var - 0.01) < 3 * se)
    assert math.sqrt(2 * 50 * 1e-4) == pytest.approx(0.1)


def test_step_vanishing_dt_leaves_position():
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(step(x, 50.0, 1e-300, np.random.default_rng(1)), x, atol=1e-140)
    with pytest.raises(ValueError):
        step(x, 50.0, 0.0, np.random.default_rng(1))


@pytest.mark.parametrize("kw", [
    dict(n_molecules=-1), dict(n_molecules=1, dt=0), dict(n_molecules=1, emitter=3),
    dict(n_molecules=1, mode="exact"), dict(n_molecules=1, t_end=1e-6),
    dict(n_molecules=1, jump_factor=-1), dict(n_molecules=1, block_size=0),
])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        SimParams(**kw)


def test_zero_molecules(selected):
    rec = run_one_shot(selected, SimParams(0, t_end=1.0))
    assert len(rec) == 0 and list(rec) == []
    cdfs = estimate_cdf(rec, np.linspace(0, 1, 5))
    for c in cdfs.values():
        assert np.all(c.values == 0)


def test_conservation_and_monotone_cdf(selected):
    p = SimParams(3000, t_end=2.0, seed=3, block_size=1000)
    rec = run_one_shot(selected, p)
    c = rec.counts()
    assert c["absorbed_1"] + c["absorbed_2"] + c["free"] == 3000
    assert c["absorbed_1"] > 3 * c["absorbed_2"]
    t = rec.hit_times
    hit = rec.bulge > 0
    assert np.all((t[hit] > 0) & (t[hit] <= p.t_end + 1e-12))
    assert np.all(np.isnan(t[~hit]))
    for cdf in estimate_cdf(rec, np.linspace(0, 2, 101)).values():
        assert np.all(np.diff(cdf.values) >= 0)
        assert cdf.values[0] == 0.0


def test_deterministic_and_worker_independent(selected):
    p = SimParams(1500, t_end=0.5, seed=9, block_size=400, mode="chord")
    a = run_one_shot(selected, p)
    b = run_one_shot(selected, p)
    c = run_one_shot(selected, p, workers=3)
    assert a == b == c
    d = run_one_shot(selected, SimParams(1500, t_end=0.5, seed=10, block_size=400, mode="chord"))
    assert a != d


@needs_ext
@pytest.mark.parametrize("mode", ["endpoint", "chord", "bridge"])
@pytest.mark.parametrize("jump", [0.0, 12.0])
def test_backends_bit_identical(selected, mode, jump):
    p = SimParams(300, t_end=0.3, seed=5, mode=mode, jump_factor=jump, block_size=128)
    fast = run_one_shot(selected, p, backend="cython")
    slow = run_one_shot(selected, p, backend="python")
    assert fast == slow
    assert fast.counts()["absorbed_1"] > 0


def test_estimate_cdf_edge_cases():
    none = HitRecords(1, np.zeros(10), np.full(10, 100), 1e-3, 0.1)
    for c in estimate_cdf(none, [0.0, 0.05, 0.1]).values():
        np.testing.assert_array_equal(c.values, 0.0)

    early = HitRecords(1, np.array([1, 1, 1, 0]), np.array([1, 2, 3, 100]), 1e-3, 0.1)
    cdfs = estimate_cdf(early, [0.01, 0.05, 0.1])
    np.testing.assert_array_equal(cdfs[LinkId(1, 1)].values, 0.75)
    np.testing.assert_array_equal(cdfs[LinkId(2, 1)].values, 0.0)
    with pytest.raises(ValueError):
        estimate_cdf(early, [0.1, 0.05])


def test_hit_exactly_on_grid_point_counts():
    rec = HitRecords(2, np.array([2]), np.array([800]), 1e-4, 1.0)
    cdf = estimate_cdf(rec, [0.0799, 0.08])[LinkId(2, 2)]
    np.testing.assert_array_equal(cdf.values, [0.0, 1.0])


def test_single_sphere_absorbed_fraction(selected):
    p = SimParams(20_000, t_end=10.0, seed=2, mode="bridge", cross_bulge=False)
    rec = run_one_shot(selected, p)
    assert rec.counts()["absorbed_2"] == 0
    frac = np.mean(rec.bulge == 1)
    expected = float(siso_cdf(10, 4, 2, 50))
    assert expected == pytest.approx(0.633047, abs=1e-6)
    assert frac == pytest.approx(expected, rel=0.03)


def test_emitter_symmetry(selected):
    grid = np.linspace(0, 2, 21)
    cdfs, recs = ps.characterize(selected, SimParams(10_000, t_end=2.0, seed=4), grid)
    assert set(cdfs) == {LinkId(1, 1), LinkId(2, 1), LinkId(1, 2), LinkId(2, 2)}
    n = 10_000
    for a, b in [((1, 1), (2, 2)), ((1, 2), (2, 1))]:
        f, g = cdfs[LinkId(*a)].values, cdfs[LinkId(*b)].values
        se = np.sqrt(f * (1 - f) / n + g * (1 - g) / n)
        assert np.all(np.abs(f - g) <= 3 * se + 1e-12)


def test_cdf_csv_roundtrip(tmp_path, selected):
    grid = np.linspace(0, 0.5, 11)
    cdfs, _ = ps.characterize(selected, SimParams(500, t_end=0.5, seed=1), grid)
    path = tmp_path / "cdf.csv"
    write_cdf_csv(path, cdfs, {"seed": 1})
    back = read_cdf_csv(path)
    assert set(back) == set(cdfs)
    for k in cdfs:
        np.testing.assert_array_equal(back[k].values, cdfs[k].values)
        np.testing.assert_array_equal(back[k].times, cdfs[k].times)
        assert back[k].n_total == 500
    assert path.read_text().startswith("# seed=1\n")


def test_hit_records_csv(tmp_path):
    rec = HitRecords(1, np.array([1, 0, 2]), np.array([5, 10, 7]), 0.1, 1.0)
    rec.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "molecule_id,emitter,absorbed_at,hit_time"
    assert len(lines) == 4
    assert list(rec)[1].absorbed_at == 0
