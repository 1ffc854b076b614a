"""Networks with learnable Bernstein-polynomial activations, plus tight
interval certification built on the enclosure and subdivision properties."""

from .bernstein import BernsteinPoly, Interval, basis_eval, binomial
from .bounds import BoxBounds, affine_ibp, bern_global_enclosure, \
    bern_naive_enclosure, bern_refined_enclosure, conv_ibp
from .certify import CertResult, certified_accuracy, certify_global, \
    certify_local, compare_margins, pgd_upper_bound_accuracy, robust_margin, \
    robust_margins
from .data import Dataset, load_csv, load_idx, synthetic_digits, two_moons
from .network import AffineSpec, BernSpec, Conv2dSpec, Network, fc_arch, \
    init_network, load_model, save_model
from .reach import LinearSystem, ReachTrace, box_volume, double_integrator, \
    reach_horizon, sampled_volume, step_reach, synthetic_stable_system
from .training import AdamState, GradientSet, TrainConfig, adam_step, \
    backward, certified_loss, pgd_attack, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
