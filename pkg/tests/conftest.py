"""Shared builders for the test suite.

The reference setup mirrors the main experiment: a stable 2nd-order
3-output / 2-input ARX generator, a sum-of-sines trajectory with small
equation and measurement noise, and a filter model identified from that
trajectory with residual-matched noise covariances.
"""

import numpy as np

from telekf.dataio import SyntheticSpec, gen_synthetic, random_stable_arx
from telekf.filtering import SystemModel
from telekf.sysid import arx_fit, arx_to_ss, residual_covariances

REFERENCE_ORDERS = (2, 2, 1)


def reference_generator():
    return random_stable_arx(
        *REFERENCE_ORDERS, n_outputs=3, n_inputs=2, seed=42, pole_radius=0.85
    )


def reference_dataset(n_samples=1500, seed=1):
    return gen_synthetic(
        SyntheticSpec(
            generator=reference_generator(),
            n_samples=n_samples,
            seed=seed,
            excitation="sines",
            process_noise=0.005,
            measurement_noise=0.002,
        )
    )


def identified_system(data):
    model = arx_fit(data, REFERENCE_ORDERS)
    q, r = residual_covariances(model, data)
    return arx_to_ss(model, q=q, r=r)


def random_spd(rng, n, floor=0.1):
    m = rng.standard_normal((n, n))
    return m @ m.T + floor * np.eye(n)


def exact_lti(seed=0, n=4, m=2, p=2):
    """A hand-tuned stable LTI model with SPD noise, for consistency checks."""
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.standard_normal((n, n))
    a *= 0.9 / max(1e-9, np.abs(np.linalg.eigvals(a)).max())
    b = rng.standard_normal((n, m))
    h = rng.standard_normal((p, n))
    q = 0.01 * np.eye(n)
    r = np.diag(rng.uniform(0.05, 0.2, p))
    return SystemModel(a=a, b=b, h=h, q=q, r=r, dt=1.0 / 30.0)


def max_rel_diff(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.abs(b).max()), 1e-12)
    return float(np.abs(a - b).max()) / scale


def hygiene_of_covs(p_stack):
    """(max asymmetry, min eigenvalue) over a stack of covariance matrices."""
    p_stack = np.asarray(p_stack)
    if p_stack.ndim == 2:
        p_stack = p_stack[None]
    asym = np.abs(p_stack - np.swapaxes(p_stack, -1, -2)).max()
    eig_min = np.linalg.eigvalsh(p_stack).min()
    return float(asym), float(eig_min)
