import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reacherbench.analysis import (
    CURVE_HEADER,
    SuccessGrid,
    emit_curve,
    read_curve,
    read_grid,
    success_region_map,
    write_grid,
)
from reacherbench.arm import ur5
from reacherbench.cli import build_parser, main
from reacherbench.env import FAR_BOX, EnvConfig, ReacherEnv, Unconstrained
from reacherbench.harness import CurvePoint, frozen_policy, oracle_policy


def test_grid_validation():
    with pytest.raises(ValueError):
        SuccessGrid(0.0, (0.7, 0.8))
    with pytest.raises(ValueError):
        SuccessGrid(0.1, (0.8, 0.7))


def test_oracle_map_is_all_success():
    cfg = EnvConfig(region=Unconstrained(), n_active=3)
    grid = success_region_map(oracle_policy, ur5(), cfg, 2000, rng=np.random.default_rng(0))
    assert grid.attempts > 0
    for att, suc in grid.cells.values():
        assert suc == att


def test_map_counts_only_slice_goals():
    cfg = EnvConfig(region=Unconstrained(), n_active=3)
    grid = success_region_map(frozen_policy, ur5(), cfg, 3000, z_slice=(0.7, 0.8), rng=np.random.default_rng(1))
    env = ReacherEnv(ur5(), cfg)
    rng = np.random.default_rng(1)
    zs = np.array([g.position[2] for g in env.sample_goals(3000, rng)])
    assert grid.attempts == int(np.sum((zs >= 0.7) & (zs <= 0.8)))


def test_frozen_far_box_map_has_no_successes():
    cfg = EnvConfig(region=FAR_BOX, n_active=3)
    grid = success_region_map(frozen_policy, ur5(), cfg, 500, z_slice=(0.0, 0.4), rng=np.random.default_rng(2))
    assert grid.attempts == 500 and grid.successes == 0


def test_map_reproducible():
    cfg = EnvConfig(region=Unconstrained(), n_active=2)
    a = success_region_map(frozen_policy, ur5(), cfg, 1000, z_slice=(0.0, 0.5), rng=np.random.default_rng(3))
    b = success_region_map(frozen_policy, ur5(), cfg, 1000, z_slice=(0.0, 0.5), rng=np.random.default_rng(3))
    assert a == b


cells = st.dictionaries(
    st.tuples(st.integers(-5, 5), st.integers(-5, 5)),
    st.integers(1, 50).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))),
    max_size=10,
)


def grid_of(d):
    return SuccessGrid(0.1, (0.7, 0.8), {k: list(v) for k, v in d.items()})


@given(cells, cells, cells)
def test_merge_is_associative_and_preserves_totals(x, y, z):
    a, b, c = grid_of(x), grid_of(y), grid_of(z)
    assert a.merge(b).merge(c) == a.merge(b.merge(c))
    m = a.merge(b)
    assert m.attempts == a.attempts + b.attempts
    assert all(s <= n for n, s in m.cells.values())


def test_grid_csv_round_trip(tmp_path):
    g = grid_of({(7, -3): (5, 2), (-1, 0): (1, 1)})
    write_grid(g, tmp_path / "g.csv")
    assert read_grid(tmp_path / "g.csv", 0.1) == g


def curve(n):
    return [CurvePoint(100 * (i + 1), 10.0 * i + 1 / 3, 10.0 * i - np.pi, 10.0 * i + np.e, 5) for i in range(n)]


def test_curve_has_header_and_rows(tmp_path):
    emit_curve(curve(2), tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == ",".join(CURVE_HEADER)


def test_empty_curve_writes_header_and_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        emit_curve([], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == [",".join(CURVE_HEADER)]
    assert "header only" in caplog.text


def test_curve_round_trip(tmp_path):
    original = curve(4)
    emit_curve(original, tmp_path / "c.csv")
    back = read_curve(tmp_path / "c.csv")
    for p, row in zip(original, back):
        assert row[0] == p.episode_index
        np.testing.assert_allclose(row[1:], (p.mean, p.ci_low, p.ci_high), atol=1e-12, rtol=0)


def test_curve_io_error_names_path(tmp_path):
    with pytest.raises(OSError, match="nowhere"):
        emit_curve(curve(1), tmp_path / "nowhere" / "c.csv")


# -- command line ----------------------------------------------------------------

TINY = """
name = "tiny"
[env]
region = "{region}"
n_active = {n}
[agent]
buffer_capacity = 5000
[training]
episodes = 20
steps_per_episode = 20
test_every = 10
test_episodes = 5
seeds = [0, 1]
network_profile = "reduced"
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY.format(region="unconstrained", n=2))
    return path


def test_map_defaults():
    args = build_parser().parse_args(["map", "ck.npz", "c.cfg"])
    assert args.samples == 10_000 and tuple(args.slice) == (0.7, 0.8) and args.cell == 0.1


def test_train_test_aggregate_map(cfg_file, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["train", str(cfg_file), "--seed", "1", "--out", str(out)]) == 0
    assert (out / "run_seed1.jsonl").exists() and (out / "run_seed1.ckpt.npz").exists()
    assert main(["train", str(cfg_file), "--seed", "0", "--out", str(out)]) == 0
    ckpt = str(out / "run_seed0.ckpt.npz")
    assert main(["test", ckpt, str(cfg_file), "--episodes", "3"]) == 0
    assert "successes" in capsys.readouterr().out
    assert main(["aggregate", str(out)]) == 0
    assert len(read_curve(out / "curve.csv")) == 2
    assert main(["map", ckpt, str(cfg_file), "--samples", "300", "--slice", "0.0", "0.5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "success_map.csv").exists()


def test_region_report(cfg_file, capsys):
    assert main(["region-report", str(cfg_file), "--samples", "2000"]) == 0
    out = capsys.readouterr().out
    assert "unconstrained" in out and "acceptance" in out


def test_usage_errors_exit_2(cfg_file, tmp_path):
    assert main([]) == 2
    assert main(["train", str(cfg_file), "--bogus"]) == 2
    assert main(["train", str(tmp_path / "missing.cfg")]) == 2
    assert main(["test", str(tmp_path / "missing.npz"), str(cfg_file)]) == 2
    assert main(["aggregate", str(tmp_path / "nope")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[env]\nregion = 'moon'\n")
    assert main(["region-report", str(bad)]) == 2


def test_runtime_error_exits_1(tmp_path):
    # two joints from the constrained start pose can never reach the close box
    path = tmp_path / "infeasible.cfg"
    path.write_text(TINY.format(region="close_box", n=2))
    assert main(["train", str(path), "--seed", "0", "--out", str(tmp_path / "r")]) == 1


def test_mismatched_checkpoint_is_usage_error(cfg_file, tmp_path):
    out = tmp_path / "runs"
    assert main(["train", str(cfg_file), "--seed", "0", "--out", str(out)]) == 0
    other = tmp_path / "three.cfg"
    other.write_text(TINY.format(region="unconstrained", n=3))
    assert main(["test", str(out / "run_seed0.ckpt.npz"), str(other)]) == 2
