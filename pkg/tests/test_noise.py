import io

import numpy as np
import pytest

from statetame import noise
from statetame.errors import InvalidInputError, UnsupportedOperationError


def test_uniform_grid():
    g = noise.TimeGrid.uniform(1.0, 4)
    np.testing.assert_allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.steps == 4 and g.is_uniform() and g.index(0.5) == 2
    with pytest.raises(InvalidInputError):
        g.index(0.3)


def test_bad_grids_rejected():
    for times in ([0.0, 0.0], [0.5, 0.2], [-1.0, 0.0], []):
        with pytest.raises(InvalidInputError):
            noise.TimeGrid(times)


def test_block_equals_single_paths():
    g = noise.TimeGrid.uniform(1.0, 7)
    block = noise.generate(g, 3, seed=5, path_index=10, n_paths=4)
    for k in range(4):
        single = noise.generate(g, 3, seed=5, path_index=10 + k)
        np.testing.assert_array_equal(block.increments[k], single.increments[0])


def test_increment_variance_matches_dt():
    g = noise.TimeGrid([0.0, 0.1, 0.5, 1.0])
    z = noise.generate(g, 1, seed=1, n_paths=40000).increments[..., 0]
    np.testing.assert_allclose(z.var(axis=0), g.dt, rtol=0.03)
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.02


def test_restrict_and_shift():
    g = noise.TimeGrid.uniform(1.0, 10)
    p = noise.generate(g, 2, seed=3, n_paths=2)
    r = noise.restrict_after(p, 0.4)
    assert r.grid.times[0] == pytest.approx(0.4)
    np.testing.assert_array_equal(r.increments, p.increments[:, 4:])
    sh = noise.shift(p, 0.4)
    assert sh.grid.times[0] == 0.0 and sh.grid.steps == 6
    np.testing.assert_array_equal(sh.increments, r.increments)
    with pytest.raises(UnsupportedOperationError):
        noise.shift(noise.generate(noise.TimeGrid([0, 0.1, 0.5]), 1, 0), 0.1)


def test_coarsen_sums_increments():
    g = noise.TimeGrid.uniform(1.0, 8)
    p = noise.generate(g, 1, seed=0, n_paths=3)
    c = noise.coarsen(p, 4)
    assert c.grid.steps == 2
    np.testing.assert_allclose(c.cumulative()[:, -1], p.cumulative()[:, -1])
    with pytest.raises(InvalidInputError):
        noise.coarsen(p, 3)


def test_dump_load_roundtrip():
    p = noise.generate(noise.TimeGrid.uniform(2.0, 5), 2, seed=9, path_index=4, n_paths=3)
    buf = io.BytesIO()
    noise.dump(p, buf)
    buf.seek(0)
    q = noise.load(buf)
    assert q.grid == p.grid and (q.seed, q.path_index, q.d) == (9, 4, 2)
    np.testing.assert_array_equal(q.increments, p.increments)
    np.testing.assert_array_equal(q.grid.dt, p.grid.dt)


def test_seeds_differ():
    g = noise.TimeGrid.uniform(1.0, 5)
    a = noise.generate(g, 1, seed=1).increments
    b = noise.generate(g, 1, seed=2).increments
    assert not np.array_equal(a, b)


def test_shift_keeps_step_sizes():
    g = noise.TimeGrid.uniform(1.0, 30)
    p = noise.generate(g, 1, seed=0)
    np.testing.assert_array_equal(noise.shift(p, g.times[7]).grid.dt, g.dt[7:])
    with pytest.raises(InvalidInputError):
        noise.TimeGrid([0.0, 1.0], spacing=[0.5])
