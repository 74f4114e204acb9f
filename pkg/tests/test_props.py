import numpy as np
import pytest

from demr import liegroups as lg
from demr import props
from demr.rng import make_rng

SMALL = props.PropsConfig(
    nearest_matrices=50,
    nearest_candidates=500,
    roundtrip_trials=2000,
    grassmann_trials=50,
    chordal_pairs=500,
    mle_samples=1000,
    mle_means=3,
    grassmann_samples=2000,
    grassmann_candidates=20,
    grad_seeds=(0,),
)


def test_uniform_rotations_valid():
    r = props.uniform_rotations(make_rng(0), 200)
    assert lg.is_rotation(r)
    # Haar measure: E[tr R] = 0
    assert abs(np.trace(r, axis1=1, axis2=2).mean()) < 0.25


def test_nearest_rotation_inner_product_shortcut_matches_direct():
    rng = make_rng(1)
    m = rng.standard_normal((4, 3, 3))
    cand = props.uniform_rotations(rng, 30)
    direct = np.linalg.norm((m[:, None] - cand[None]).reshape(4, 30, 9), axis=2).min(axis=1)
    m2 = np.sum(m.reshape(-1, 9) ** 2, axis=1)
    inner = m.reshape(-1, 9) @ cand.reshape(-1, 9).T
    np.testing.assert_allclose(np.sqrt(m2 - 2 * inner.max(axis=1) + 3), direct, rtol=1e-12)


@pytest.mark.parametrize("name", sorted(props.CHECKS))
def test_each_check_passes_at_small_size(name):
    rows = props.run_suite(SMALL, only=[name])
    assert rows
    for r in rows:
        assert r.passed, r


def test_row_thresholds():
    rows = {r.check: r for r in props.run_suite(SMALL, only=["chordal", "mle_so3"])}
    assert rows["chordal_geodesic_identity"].threshold == 1e-9
    assert rows["chordal_to_zero_max_ratio"].statistic <= 1.0
    assert rows["mle_so3_sigma_0.05_max_gap"].threshold == 5e-3
    assert rows["mle_so3_half_sigma_shrink"].statistic >= 2.0


def test_suite_deterministic():
    a = props.run_suite(SMALL, only=["nearest", "roundtrip"])
    b = props.run_suite(SMALL, only=["nearest", "roundtrip"])
    assert a == b


def test_failing_statistic_is_reported():
    cfg = props.PropsConfig(**{**SMALL.__dict__, "mle_sigma": 0.1, "mle_threshold": 1e-9})
    rows = props.check_mle_so3(cfg)
    assert not rows[0].passed


def test_rows_hold_builtin_types():
    row = props.PropRow("x", np.float64(0.5), 1, np.bool_(True))
    assert type(row.statistic) is float and type(row.threshold) is float and type(row.passed) is bool
