"""Smoke test for the dsgd extension: python crates/py/python/smoke_test.py"""

import math

import numpy as np

import dsgd

MINIMAL = """
[problem]
kind = "least-squares"
dim = 3
rows_per_node = 4
data_noise = 0.01

[network]
kind = "ring"
m = 4

[delay]
kind = "uniform"
max = 3

[solver]
sigma = 0.01
iterations = 300

[run]
seed = 5
seed_count = 2
"""


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def check_network():
    ring = dsgd.Network("ring", m=4, mixing="lazy-metropolis")
    assert close(ring.spectral_lambda, 2.0 / 3.0)
    w = np.array(ring.weights())
    assert np.allclose(w.sum(axis=1), 1.0) and np.allclose(w, w.T)
    assert all(passed for _, passed, _ in ring.validate())
    try:
        dsgd.Network("ring", m=4, mixing="metropolis")
    except ValueError as e:
        assert "lazy" in str(e)
    else:
        raise AssertionError("plain Metropolis on a 4-cycle should be rejected")
    lattice = dsgd.Network("lattice2d", rows=5, cols=5)
    assert lattice.nodes == 25 and len(lattice.edges()) == 40


def check_objectives():
    f = dsgd.Objective("least-squares", [[1.0, 0.0], [0.0, 1.0]], [1.0, 2.0])
    assert f.value([0.0, 0.0]) == 2.5
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (6, 3))
    b = rng.uniform(-1, 1, 6)
    x = rng.uniform(-1, 1, 3)
    g = dsgd.Objective("least-squares", a.tolist(), b.tolist()).gradient(x.tolist())
    assert np.allclose(g, a.T @ (a @ x - b), atol=1e-12)
    logistic = dsgd.Objective("logistic", [[1.0]], [1.0])
    assert close(logistic.value([0.0]), math.log(2.0))
    assert close(logistic.lipschitz, 0.25, 1e-8)
    noisy = dsgd.Objective("least-squares", a.tolist(), b.tolist(), sigma=0.1)
    assert noisy.stochastic_gradient(x.tolist(), seed=1) == noisy.stochastic_gradient(x.tolist(), seed=1)


def check_delays_and_steps():
    d = dsgd.DelayModel("uniform", max=20)
    assert close(d.second_moment, 143.5)
    draws = d.sample(t=3, seed=4, count=100)
    assert max(draws) <= 3 and min(draws) >= 1
    assert dsgd.step_size(1.0, 0.01, 0) == 0.5
    assert close(dsgd.step_size(1.0, 0.01, 10_000), 0.25)
    exact, bound = dsgd.weighted_sum(1.0, 1.0, 0.5, 4)
    assert abs(exact - 0.8231) < 5e-5 and abs(bound - 5.114) < 5e-4
    bounds = dsgd.Bounds(lam=0.5, g=1.0, lipschitz=1.0, eta=1.0, m=4, n=2, radius=1.0, b=1.0, sigma=0.0)
    assert bounds.consensus_gap(100.0) < bounds.consensus_gap(10.0)


def check_experiment(tmpdir):
    exp = dsgd.Experiment.from_toml(MINIMAL)
    f_star, converged, _ = exp.reference()
    assert converged
    result = exp.run()
    summary = result.summary()
    assert summary["final_gap"] < summary["initial_gap"]
    assert close(summary["f_star"], f_star)
    gaps = result.mean_gap()
    assert len(gaps) == 300 and min(gaps) >= -1e-8
    assert result.trace_csv() == exp.run().trace_csv()
    written = result.write(tmpdir)
    assert any(str(p).endswith("trace.csv") for p in written)


def check_tomography():
    tomo = dsgd.Tomography([6, 6], nodes=4, rays_per_node=20, seed=3)
    x = tomo.x_true
    assert len(x) == 36 and tomo.relative_error(x) == 0.0
    a = np.array(tomo.design(0))
    assert np.allclose(a @ np.array(x), tomo.travel_times(0))
    assert tomo.to_container().startswith("dsgd-container 1")


if __name__ == "__main__":
    import tempfile

    check_network()
    check_objectives()
    check_delays_and_steps()
    with tempfile.TemporaryDirectory() as tmp:
        check_experiment(tmp)
    check_tomography()
    print("dsgd smoke test passed")
