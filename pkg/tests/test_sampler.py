from __future__ import annotations

import numpy as np
import pytest

from conftest import solved
from coulomb_gas.energy import GasParams, hamiltonian
from coulomb_gas.kernel import CoulombKernel
from coulomb_gas.measures import Grid, ParticleConfig, bin_to_grid
from coulomb_gas.metrics import bl_norm
from coulomb_gas.sampler import (
    CacheDriftError,
    check_cache,
    delta_hamiltonian,
    init_chain,
    mh_step,
    read_samples,
    run_chain,
    write_samples,
)
from coulomb_gas.thermal import Potential, quadratic


def plain_quadratic():
    """Same V without the compiled radial spec, forcing the python path."""
    q = quadratic()
    return Potential("quadratic-py", q.value, q.grad, q.exponent, q.const)


@pytest.fixture(scope="module")
def small():
    th = solved(2, 16, 8.0, 48)
    return th, quadratic(), th.params, th.kernel


class TestInitChain:
    def test_inside_box(self):
        th = solved(2, 100, 10.0, 48)
        st = init_chain(quadratic(), th.params, 3, thermal=th)
        assert st.n == 100
        assert np.all(th.grid.contains(st.points))

    def test_deterministic(self, small):
        th, V, params, k = small
        a = init_chain(V, params, 9, thermal=th)
        b = init_chain(V, params, 9, thermal=th)
        np.testing.assert_array_equal(a.points, b.points)

    def test_cached_energy(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 1, thermal=th)
        assert st.cached_energy() == pytest.approx(hamiltonian(st.config, V, params, k), rel=1e-10)

    def test_box_init_and_step(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 1, init="box", grid=th.grid)
        side = th.grid.upper[0] - th.grid.lower[0]
        assert st.step_size == pytest.approx(side / 16 ** 0.5)

    def test_errors(self, small):
        th, V, params, k = small
        with pytest.raises(ValueError):
            init_chain(V, params, 1)
        with pytest.raises(ValueError):
            init_chain(V, params, 1, init="thermal", grid=th.grid)
        with pytest.raises(ValueError):
            init_chain(V, params, 1, init="lattice", thermal=th)


class TestMHStep:
    def two(self, beta=1.0):
        grid = Grid.cube(3, 3.0, 4)
        params = GasParams(3, 2, beta)
        st = init_chain(quadratic(), params, 0, init="box", grid=grid)
        st.points[:] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        st.pair_sums[:] = 1.0
        st.v_values[:] = [0.0, 1.0]
        return st, params

    def test_delta_closed_form(self):
        st, params = self.two()
        dh, *_ = delta_hamiltonian(st, 1, np.array([2.0, 0.0, 0.0]), quadratic(), params, CoulombKernel(3))
        # pair term 1/2 - 1, confinement 2 * (4 - 1)
        assert dh == pytest.approx(-0.5 + 6.0)

    def test_accept_updates_caches(self):
        st, params = self.two()
        k = CoulombKernel(3)
        mh_step(st, quadratic(), params, k, index=1, displacement=np.array([1.0, 0, 0]), log_u=-np.inf)
        assert st.last_accepted
        assert st.cached_energy() == pytest.approx(hamiltonian(st.config, quadratic(), params, k))

    def test_zero_beta_limit(self, rng):
        st, params = self.two(beta=1e-300)
        k = CoulombKernel(3)
        for _ in range(200):
            mh_step(st, quadratic(), params, k, displacement=rng.uniform(-0.2, 0.2, 3))
        assert st.accepted == st.proposed

    def test_out_of_box_rejected(self):
        st, params = self.two()
        mh_step(st, quadratic(), params, CoulombKernel(3), index=0, displacement=np.array([10.0, 0, 0]),
                log_u=-np.inf)
        assert not st.last_accepted and st.proposed == 1

    def test_collision_rejected(self):
        st, params = self.two()
        mh_step(st, quadratic(), params, CoulombKernel(3), index=0, displacement=np.array([1.0, 0, 0]),
                log_u=-np.inf)
        assert not st.last_accepted
        np.testing.assert_array_equal(st.points[0], 0.0)

    def test_counters_monotone(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 2, thermal=th)
        prev = (0, 0)
        for _ in range(100):
            mh_step(st, V, params, k)
            assert st.accepted >= prev[0] and st.proposed == prev[1] + 1
            prev = (st.accepted, st.proposed)

    def test_detailed_balance_toy(self):
        # particle 1 hops between two sites; the proposal picks the other site or stays
        st, params = self.two(beta=0.7)
        V, k = quadratic(), CoulombKernel(3)
        sites = np.array([[1.0, 0, 0], [0.0, 1.6, 0]])
        energies = []
        for s in sites:
            p = ParticleConfig(np.vstack([[0, 0, 0], s]))
            energies.append(hamiltonian(p, V, params, k))
        rng = np.random.default_rng(4)
        counts = np.zeros((2, 2))
        state = 0
        for _ in range(100_000):
            if rng.random() < 0.5:
                disp = sites[1 - state] - sites[state]
            else:
                disp = np.zeros(3)
            mh_step(st, V, params, k, index=1, displacement=disp, log_u=np.log(rng.random()))
            new = 1 - state if (st.last_accepted and disp.any()) else state
            counts[state, new] += 1
            state = new
        for a in (0, 1):
            b = 1 - a
            p = 0.5 * min(1.0, np.exp(-params.beta * (energies[b] - energies[a])))
            n = counts[a].sum()
            assert abs(counts[a, b] / n - p) <= 3 * np.sqrt(p * (1 - p) / n)


class TestRunChain:
    def test_sample_count(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 5, thermal=th)
        out = run_chain(st, V, params, k, n_sweeps=100, thin=7, burn_in=0.2)
        assert len(out) == 80 // 7

    def test_same_seed_same_samples(self, small):
        th, V, params, k = small
        runs = []
        for _ in range(2):
            st = init_chain(V, params, 5, thermal=th)
            runs.append(run_chain(st, V, params, k, n_sweeps=60, thin=10))
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a.points, b.points)

    def test_compiled_matches_python(self, small):
        th, V, params, k = small
        a = init_chain(V, params, 8, thermal=th)
        b = init_chain(plain_quadratic(), params, 8, thermal=th)
        sa = run_chain(a, V, params, k, n_sweeps=30, thin=5)
        sb = run_chain(b, plain_quadratic(), params, k, n_sweeps=30, thin=5)
        for x, y in zip(sa, sb):
            np.testing.assert_allclose(x.points, y.points, rtol=0, atol=1e-12)
        assert a.accepted == b.accepted and a.step_size == b.step_size

    def test_adaptation_frozen_after_burn_in(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 5, thermal=th)
        run_chain(st, V, params, k, n_sweeps=50, thin=1, burn_in=0.5)
        frozen = st.step_size
        run_chain(st, V, params, k, n_sweeps=20, thin=1, burn_in=0.0)
        assert st.step_size == frozen

    def test_acceptance_in_target(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 5, thermal=th)
        run_chain(st, V, params, k, n_sweeps=400, thin=50)
        assert 0.15 <= st.acceptance_rate <= 0.6

    def test_no_drift(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 6, thermal=th)
        run_chain(st, V, params, k, n_sweeps=10_000, thin=10_000, check_every=1000)
        assert check_cache(st, V, params, k) < 1e-8

    def test_drift_detected(self, small):
        th, V, params, k = small
        st = init_chain(V, params, 6, thermal=th)
        st.pair_sums[0] += 1.0
        with pytest.raises(CacheDriftError):
            check_cache(st, V, params, k)

    def test_distance_stabilizes(self):
        th = solved(2, 16, 32.0, 32)
        V, params, k = quadratic(), th.params, th.kernel
        dist = []
        for seed in range(4):
            st = init_chain(V, params, seed, thermal=th)
            out = run_chain(st, V, params, k, n_sweeps=1250, thin=20)
            dist.append([bl_norm(bin_to_grid(s, th.grid) - th.measure).value for s in out])
        d = np.array(dist)
        half = d.shape[1] // 2
        assert d[:, :half].mean() == pytest.approx(d[:, half:].mean(), rel=0.1)

    def test_relabeling_invariance(self, small):
        th, V, params, k = small
        stats = []
        for perm in (False, True):
            r2 = []
            for seed in range(4):
                st = init_chain(V, params, seed, thermal=th)
                if perm:
                    order = np.random.default_rng(seed).permutation(st.n)
                    st = init_chain(V, params, seed, thermal=th)
                    st.points[:] = st.points[order]
                    st.pair_sums[:] = st.pair_sums[order]
                    st.v_values[:] = st.v_values[order]
                out = run_chain(st, V, params, k, n_sweeps=500, thin=10)
                r2 += [np.mean(np.sum(s.points**2, axis=1)) for s in out]
            stats.append(np.array(r2))
        a, b = stats
        se = np.hypot(a.std() / np.sqrt(a.size / 4), b.std() / np.sqrt(b.size / 4))
        assert abs(a.mean() - b.mean()) <= 4 * se

    def test_rejects_zero_sweeps(self, small):
        th, V, params, k = small
        with pytest.raises(ValueError):
            run_chain(init_chain(V, params, 1, thermal=th), V, params, k, n_sweeps=0)


class TestSampleIO:
    def test_round_trip(self, rng, tmp_path):
        samples = [ParticleConfig(rng.standard_normal((5, 3))) for _ in range(4)]
        write_samples(samples, tmp_path / "s.bin")
        back = read_samples(tmp_path / "s.bin")
        assert len(back) == 4
        for a, b in zip(samples, back):
            np.testing.assert_array_equal(a.points, b.points)

    def test_empty(self, tmp_path):
        write_samples([], tmp_path / "e.bin", dim=2, n=7)
        assert read_samples(tmp_path / "e.bin") == []
        with pytest.raises(ValueError):
            write_samples([], tmp_path / "f.bin")
