"""Shared builders for small scalar test problems."""

import numpy as np
import pytest

from msa_control import CoefficientSet, ControlDomain, ProblemSpec


def _zero(t, x, u):
    return np.zeros(x.shape[0])


def scalar_spec(
    *,
    b=None, b_x=None, b_xx=None,
    sigma=None, sigma_x=None, sigma_xx=None,
    f=None, f_x=None, f_xx=None,
    Phi=None, Phi_x=None, Phi_xx=None,
    domain=(-1.0, 0.0, 1.0),
    T=1.0,
    x0=0.0,
):
    """Build a 1-dimensional ProblemSpec from scalar callables.

    Each callable takes (t, x, u) with x and u as flat (B,) arrays and
    returns a flat (B,) array; Phi-family callables take x only.  Omitted
    pieces default to zero.
    """

    def fb(fn):
        fn = fn or _zero
        return fn

    sb, sbx, sbxx = fb(b), fb(b_x), fb(b_xx)
    ss, ssx, ssxx = fb(sigma), fb(sigma_x), fb(sigma_xx)
    sf, sfx, sfxx = fb(f), fb(f_x), fb(f_xx)
    sp = Phi or (lambda x: np.zeros(x.shape[0]))
    spx = Phi_x or (lambda x: np.zeros(x.shape[0]))
    spxx = Phi_xx or (lambda x: np.zeros(x.shape[0]))

    coeffs = CoefficientSet(
        b=lambda t, x, u: sb(t, x[:, 0], u[:, 0])[:, None],
        sigma=lambda t, x, u: ss(t, x[:, 0], u[:, 0])[:, None, None],
        f=lambda t, x, u: sf(t, x[:, 0], u[:, 0]),
        Phi=lambda x: sp(x[:, 0]),
        b_x=lambda t, x, u: sbx(t, x[:, 0], u[:, 0])[:, None, None],
        sigma_x=lambda t, x, u: ssx(t, x[:, 0], u[:, 0])[:, None, None, None],
        f_x=lambda t, x, u: sfx(t, x[:, 0], u[:, 0])[:, None],
        Phi_x=lambda x: spx(x[:, 0])[:, None],
        b_xx=lambda t, x, u: sbxx(t, x[:, 0], u[:, 0])[:, None, None, None],
        sigma_xx=lambda t, x, u: ssxx(t, x[:, 0], u[:, 0])[:, None, None, None, None],
        f_xx=lambda t, x, u: sfxx(t, x[:, 0], u[:, 0])[:, None, None],
        Phi_xx=lambda x: spxx(x[:, 0])[:, None, None],
    )
    dom = ControlDomain(np.asarray(domain, dtype=float)[:, None])
    return ProblemSpec(n=1, d=1, k=1, T=T, x0=[float(x0)], coefficients=coeffs, domain=dom)


@pytest.fixture
def zero_spec():
    return scalar_spec()
