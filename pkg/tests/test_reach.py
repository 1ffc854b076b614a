import numpy as np
import pytest

from bernet import bounds as B
from bernet import network as N
from bernet import reach as R
from bernet import training as T


def train_controller(sys, domain_halfwidth=6.0, order=3, seed=0, epochs=60):
    d = sys.state_dim
    gain = R.stabilizing_gain(sys)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-domain_halfwidth, domain_halfwidth, (2500, d))
    u = -x @ gain.T
    dom = (np.full(d, -domain_halfwidth), np.full(d, domain_halfwidth))
    net = N.init_network(N.fc_arch([16], order, sys.input_dim), dom, seed=seed)
    cfg = T.TrainConfig(epochs=epochs, batch_size=256, loss="mse", seed=seed)
    T.train(net, x, u, cfg)
    return net


def zero_controller(sys, domain_halfwidth=6.0):
    d = sys.state_dim
    dom = (np.full(d, -domain_halfwidth), np.full(d, domain_halfwidth))
    net = N.init_network([N.AffineSpec(sys.input_dim)], dom, seed=0)
    net.layers[0].weight[...] = 0.0
    net.layers[0].bias[...] = 0.0
    return net


@pytest.fixture(scope="module")
def di_system():
    return R.double_integrator()


@pytest.fixture(scope="module")
def di_controller(di_system):
    return train_controller(di_system, seed=1)


class TestLinearSystem:
    def test_validation(self):
        with pytest.raises(ValueError):
            R.LinearSystem(np.ones((2, 3)), np.ones((2, 1)))
        with pytest.raises(ValueError):
            R.LinearSystem(np.eye(2), np.ones((3, 1)))
        with pytest.raises(ValueError):
            R.LinearSystem(np.eye(2) * np.nan, np.ones((2, 1)))

    def test_synthetic_stable_spectral_radius(self):
        for dim in (4, 6):
            sys = R.synthetic_stable_system(dim)
            assert max(abs(np.linalg.eigvals(sys.a))) <= 0.95 + 1e-9

    def test_stabilizing_gain_closes_loop(self, di_system):
        k = R.stabilizing_gain(di_system)
        acl = di_system.a - di_system.b @ k
        assert max(abs(np.linalg.eigvals(acl))) < 1.0


class TestBoxVolume:
    def test_unit_hypercube(self):
        assert R.box_volume(B.BoxBounds(np.zeros(3), np.ones(3))) == 1.0

    def test_zero_width_dim(self):
        assert R.box_volume(B.BoxBounds([0.0, 0.0], [1.0, 0.0])) == 0.0

    def test_widths_product(self):
        assert R.box_volume(B.BoxBounds([0.0, 0.0], [2.0, 3.0])) == 6.0


class TestStepReach:
    def test_identity_system_keeps_box(self, di_controller):
        sys = R.LinearSystem(np.eye(2), np.zeros((2, 1)))
        box = B.BoxBounds([0.2, -0.3], [0.4, 0.1])
        out = R.step_reach(sys, di_controller, box)
        assert np.allclose(out.lo, box.lo, atol=1e-8)
        assert np.allclose(out.hi, box.hi, atol=1e-8)

    def test_pure_constant_controller_collapses_state(self):
        sys = R.LinearSystem(np.zeros((2, 2)), np.eye(2))
        dom = (np.full(2, -4.0), np.full(2, 4.0))
        ctrl = N.init_network([N.AffineSpec(2)], dom, seed=0)
        ctrl.layers[0].weight[...] = 0.0
        ctrl.layers[0].bias[...] = np.array([0.7, -0.3])
        box = B.BoxBounds([-1.0, -1.0], [1.0, 1.0])
        out = R.step_reach(sys, ctrl, box)
        assert np.allclose(out.center, [0.7, -0.3], atol=1e-8)
        assert np.all(out.width < 1e-7)

    def test_zero_controller_matches_exact_interval_image(self, rng):
        # oracle: hand interval arithmetic for x -> A x
        sys = R.synthetic_stable_system(3, n_inputs=1, seed=5)
        ctrl = zero_controller(sys)
        lo = rng.uniform(-1, 0, 3)
        box = B.BoxBounds(lo, lo + rng.uniform(0, 1, 3))
        out = R.step_reach(sys, ctrl, box)
        ap, an = np.maximum(sys.a, 0), np.minimum(sys.a, 0)
        exact_lo = ap @ box.lo + an @ box.hi
        exact_hi = ap @ box.hi + an @ box.lo
        assert np.allclose(out.lo, exact_lo, atol=1e-7)
        assert np.allclose(out.hi, exact_hi, atol=1e-7)

    def test_dimension_mismatch(self, di_system, di_controller):
        with pytest.raises(ValueError):
            R.step_reach(di_system, di_controller,
                         B.BoxBounds(np.zeros(3), np.ones(3)))


class TestReachHorizon:
    def test_horizon_one_equals_step_reach(self, di_system, di_controller):
        box = B.BoxBounds([0.9, -0.2], [1.1, 0.2])
        trace = R.reach_horizon(di_system, di_controller, box, 1, n_samples=500)
        single = R.step_reach(di_system, di_controller, box)
        assert np.array_equal(trace.boxes[1].lo, single.lo)
        assert np.array_equal(trace.boxes[1].hi, single.hi)

    def test_containment_of_sampled_trajectories(self, di_system, di_controller):
        box = B.BoxBounds([0.9, -0.2], [1.1, 0.2])
        trace = R.reach_horizon(di_system, di_controller, box, 6,
                                n_samples=2000, seed=0)
        samples = box.sample(2000, np.random.default_rng(123))
        assert R.check_containment(trace, di_system, di_controller, samples) == 0

    def test_volume_error_nonnegative_up_to_noise(self, di_system, di_controller):
        box = B.BoxBounds([0.9, -0.2], [1.1, 0.2])
        trace = R.reach_horizon(di_system, di_controller, box, 6,
                                n_samples=10_000, seed=0)
        assert all(e >= -0.01 for e in trace.errors)

    def test_sampled_volume_below_box_volume(self, di_system, di_controller):
        box = B.BoxBounds([0.9, -0.2], [1.1, 0.2])
        for step in (1, 3, 5):
            v = R.sampled_volume(di_system, di_controller, box, step, 10_000)
            trace = R.reach_horizon(di_system, di_controller, box, step,
                                    n_samples=100)
            assert v <= trace.volumes[step] * 1.01

    def test_point_initial_set_zero_sampled_volume(self, di_system, di_controller):
        box = B.BoxBounds([1.0, 0.0], [1.0, 0.0])
        assert R.sampled_volume(di_system, di_controller, box, 3, 100) == 0.0

    def test_linear_system_sampled_volume_near_exact(self, rng):
        # no controller: the exact image box volume is |det(A)|^k * v0
        sys = R.synthetic_stable_system(2, n_inputs=1, seed=3)
        ctrl = zero_controller(sys)
        box = B.BoxBounds([-0.5, -0.5], [0.5, 0.5])
        v = R.sampled_volume(sys, ctrl, box, 1, 200_000, seed=1)
        pts = np.array([[lo, hi] for lo, hi in
                        zip(box.lo, box.hi)])
        corners = np.array(np.meshgrid(*pts)).T.reshape(-1, 2) @ sys.a.T
        exact = np.prod(corners.max(axis=0) - corners.min(axis=0))
        assert v == pytest.approx(exact, rel=0.02)

    def test_refined_tighter_than_naive(self, di_system, di_controller):
        box = B.BoxBounds([0.9, -0.2], [1.1, 0.2])
        tb = R.reach_horizon(di_system, di_controller, box, 6, n_samples=100)
        tn = R.reach_horizon(di_system, di_controller, box, 6, n_samples=100,
                             method="naive_ibp")
        for k in range(2, 7):
            assert tb.volumes[k] < tn.volumes[k]


class TestSystemIO:
    def test_round_trip(self, tmp_path, di_system):
        problem = R.ReachProblem(di_system,
                                 B.BoxBounds([0.0, 0.0], [1.0, 1.0]), 6)
        path = tmp_path / "sys.json"
        R.save_system(path, problem)
        back = R.load_system(path)
        assert np.array_equal(back.system.a, di_system.a)
        assert np.array_equal(back.system.b, di_system.b)
        assert back.horizon == 6

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"A": [[1.0]]}')
        with pytest.raises(ValueError):
            R.load_system(path)

    def test_trace_csv(self, tmp_path, di_system, di_controller):
        box = B.BoxBounds([0.9, -0.2], [1.1, 0.2])
        trace = R.reach_horizon(di_system, di_controller, box, 3, n_samples=200)
        path = tmp_path / "trace.csv"
        R.write_trace_csv(path, trace)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,box_lo,box_hi,volume,sampled_volume,error"
        assert len(lines) == 5
