"""Planar normalizing flows.

Each layer maps z -> z + u * tanh(w.z + b) with log|det J| =
log|1 + (u.w) * (1 - tanh^2(w.z + b))|.  The forward map takes a layer's u
at face value; a stack built by hand with u = 0 really is the identity.
Invertibility (w.u > -1) is the caller's contract.  enforce_invertibility /
effective_u_t produce such a u from unconstrained parameters, which is how
the training graph keeps every layer invertible while optimizing freely;
effective_to_raw inverts the reparameterization so training can start from
a chosen (near-identity) effective flow.

The arithmetic is written once over autodiff Tensors; the numpy-facing
functions wrap arrays in constants and run the same graph forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class PlanarLayer:
    u: np.ndarray
    w: np.ndarray
    b: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if u.ndim != 1 or u.shape != w.shape:
            raise ValueError("u and w must be 1-D with equal length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise ValueError("planar layer parameters must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self):
        return self.u.size


@dataclass(frozen=True)
class FlowStack:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if layers:
            m = layers[0].dim
            if any(l.dim != m for l in layers):
                raise ValueError("all layers must share the latent dimension")
        object.__setattr__(self, "layers", layers)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def dim(self):
        return self.layers[0].dim if self.layers else 0


def init_flow_stack(dim, n_layers, rng, scale=0.01):
    """Near-identity initialization: all parameters uniform in +/- scale."""
    layers = []
    for _ in range(n_layers):
        layers.append(
            PlanarLayer(
                u=rng.uniform(-scale, scale, dim),
                w=rng.uniform(-scale, scale, dim),
                b=float(rng.uniform(-scale, scale)),
            )
        )
    return FlowStack(tuple(layers))


def effective_u_t(u, w):
    """Invertibility reparameterization over Tensors.

    u_hat = u + (softplus(w.u) - 1 - w.u) * w / ||w||^2, which pins
    w.u_hat = softplus(w.u) - 1 > -1.  Requires ||w|| > 0.
    """
    wu = ad.tsum(ad.mul(w, u))
    wnorm2 = ad.tsum(ad.mul(w, w))
    coef = ad.div(ad.sub(ad.sub(ad.softplus(wu), 1.0), wu), wnorm2)
    return ad.add(u, ad.mul(coef, w))


def planar_forward_t(u, w, b, z, with_logdet=True):
    """One layer over a Tensor batch z of shape (n, m); u is used as-is.

    Returns (z_next, logdet) where logdet has shape (n, 1); logdet is None
    when with_logdet is False.
    """
    m = z.shape[1]
    w_col = ad.reshape(w, (m, 1))
    a = ad.add(ad.matmul(z, w_col), b)        # (n, 1)
    h = ad.tanh(a)
    u_row = ad.reshape(u, (1, m))
    z_next = ad.add(z, ad.mul(h, u_row))
    if not with_logdet:
        return z_next, None
    # psi(z) = tanh'(a) w; det = 1 + (u.w) tanh'(a)
    wu = ad.tsum(ad.mul(w, u))
    hprime = ad.sub(1.0, ad.mul(h, h))
    det = ad.add(1.0, ad.mul(wu, hprime))
    logdet = ad.log(ad.tabs(det))
    return z_next, logdet


def flow_forward_t(layer_params, z, with_logdet=True):
    """Run a stack given [(u, w, b) Tensor triples]. logdet sums over layers.

    Raises FloatingPointError naming the first layer that produces a
    non-finite value.
    """
    logdet_sum = None
    for k, (u, w, b) in enumerate(layer_params):
        z, logdet = planar_forward_t(u, w, b, z, with_logdet=with_logdet)
        if not np.all(np.isfinite(z.value)):
            raise FloatingPointError(f"non-finite output at flow layer {k}")
        if with_logdet:
            if not np.all(np.isfinite(logdet.value)):
                raise FloatingPointError(f"non-finite log-det at flow layer {k}")
            logdet_sum = logdet if logdet_sum is None else ad.add(logdet_sum, logdet)
    if with_logdet and logdet_sum is None:
        z0 = z.value
        logdet_sum = ad.constant(np.zeros((z0.shape[0], 1)))
    return z, logdet_sum


def stack_tensors(stack):
    """Wrap a FlowStack's arrays as constant Tensor triples."""
    return [(ad.constant(l.u), ad.constant(l.w), ad.constant(l.b)) for l in stack.layers]


def enforce_invertibility(layer):
    """Numpy u_hat for one layer; the degenerate ||w|| = 0 case returns u
    unchanged (the layer is then a constant shift, invertible anyway).

    One corrective step after the closed form keeps w.u_hat pinned at
    softplus(w.u) - 1 even when |w.u| is large enough that the naive
    u + coef*w cancellation would eat the margin above -1.
    """
    w = layer.w
    wnorm2 = float(w @ w)
    if wnorm2 == 0.0:
        return layer.u.copy()
    wu = float(w @ layer.u)
    target = np.logaddexp(0.0, wu) - 1.0
    u_hat = layer.u + ((target - wu) / wnorm2) * w
    u_hat = u_hat + ((target - float(w @ u_hat)) / wnorm2) * w
    return u_hat


def effective_to_raw(u_eff, w):
    """Invert the reparameterization: raw u whose effective u is u_eff.

    Needs w.u_eff > -1 (true of any valid effective u).  With ||w|| = 0 the
    reparameterization is a no-op and u_eff is returned unchanged.  Used to
    seed trainable flow parameters so that training starts at a chosen
    (typically near-identity) effective flow.
    """
    u_eff = np.asarray(u_eff, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    wnorm2 = float(w @ w)
    if wnorm2 == 0.0:
        return u_eff.copy()
    wu_eff = float(w @ u_eff)
    if wu_eff <= -1.0:
        raise ValueError("effective u must satisfy w.u > -1")
    # softplus^{-1}(1 + w.u_eff): log(expm1(.)) written stably
    raw_dot = float(np.log(np.expm1(1.0 + wu_eff)))
    return u_eff + ((raw_dot - wu_eff) / wnorm2) * w


def flow_forward(stack, z0, with_logdet=True):
    """Numpy wrapper: (n, m) -> (zK (n, m), logdet_sum (n,))."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    zk, logdet = flow_forward_t(stack_tensors(stack), ad.constant(z0), with_logdet=with_logdet)
    if not with_logdet:
        return zk.value, None
    return zk.value, logdet.value[:, 0]


def base_log_density(z0):
    """log N(z0; 0, I) per row."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    m = z0.shape[1]
    return -0.5 * (m * np.log(2.0 * np.pi) + np.sum(z0 * z0, axis=1))


def sample_latent(stack, rng, n_samples):
    """Sample zK = flow(z0), z0 ~ N(0, I), with exact log-density.

    Change of variables: log q(zK) = log N(z0; 0, I) - sum_k log|det J_k|.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    z0 = rng.standard_normal((n_samples, stack.dim))
    zk, logdet = flow_forward(stack, z0)
    return zk, base_log_density(z0) - logdet
