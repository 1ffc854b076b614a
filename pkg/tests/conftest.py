import numpy as np
import pytest

from bernet import network as N


def random_fc_net(rng: np.random.Generator, in_dim: int | None = None,
                  order: int | None = None, depth: int | None = None,
                  max_width: int = 64, n_out: int | None = None) -> N.Network:
    """Random fully connected net with Bernstein activations, refreshed."""
    in_dim = in_dim or int(rng.integers(2, 12))
    order = order or int(rng.integers(2, 7))
    depth = depth or int(rng.integers(2, 5))
    n_out = n_out or int(rng.integers(2, 6))
    hidden = [int(rng.integers(4, max_width + 1)) for _ in range(depth - 1)]
    arch = N.fc_arch(hidden, order, n_out)
    return N.init_network(arch, (np.zeros(in_dim), np.ones(in_dim)),
                          seed=int(rng.integers(0, 2**31)))


def finite_difference_param_check(net, loss_and_grads, loss_value, h=1e-5,
                                  rel_tol=1e-4):
    """Compare analytic parameter gradients against central differences."""
    _, grads = loss_and_grads()
    worst = 0.0
    for i, name, arr in net.parameters():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            lp = loss_value()
            arr[idx] = orig - h
            lm = loss_value()
            arr[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = grads.layers[i][name][idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
    assert worst < rel_tol, f"worst gradient relative error {worst}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
