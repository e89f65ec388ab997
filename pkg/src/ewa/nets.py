"""Finite-width fully connected and 1D convolutional networks without biases.

MLP:   h1 = X W1^T / sqrt(N0),  h_l = sigma(h_{l-1}) W_l^T / sqrt(N_{l-1}),
       f  = sigma(h_L) v^T / (gamma sqrt(N_L)).
CNN:   h1_{a,i} = sum_{b,m} W1_{a,b,m} x_{b, S i + m} / sqrt(M A0), and so on,
       f = sum_{a,i} v_{a,i} sigma(h_L)_{a,i} / (gamma sqrt(A_L Np_L)).

Weights of layer l have prior N(0, 1/lambda_{l-1}) with the L+1 entry
precision convention of ``ewa.nngp``; the readout uses ``precisions[L]``.
With ``depth = 0`` the MLP is a linear readout on the raw inputs.

Flat parameter layout: layer-major, each layer row-major.  MLP layer l is
(N_l, N_{l-1}), readout (D, N_L).  CNN layer l is (A_l, A_{l-1}, M_l),
readout (D, A_L, Np_L).
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cnn import ConvSpec, extract_patches
from .core import _gen
from .errors import InvalidParameter, ShapeMismatch
from .nngp import Activation, check_precisions

__all__ = [
    "NetworkSpec",
    "ParamLayout",
    "init_from_prior",
    "forward",
    "mlp_forward",
    "cnn_forward",
    "loss_and_grad",
    "empirical_kernel",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture, prior and temperature of a Bayesian network.

    ``widths`` are the hidden widths N_1..N_L for an MLP, or the channel
    counts A_1..A_L for a CNN (then ``conv`` gives masks and strides).
    """

    n_in: int
    widths: tuple = ()
    activation: str = "erf"
    precisions: tuple = None
    temperature: float = 0.1
    kind: str = "mlp"
    parametrization: str = "sp"
    gamma0: float = 1.0
    out_dim: int = 1
    conv: ConvSpec = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in np.atleast_1d(self.widths)))
        object.__setattr__(self, "activation", Activation.parse(self.activation).value)
        if self.n_in < 1 or any(w < 1 for w in self.widths) or self.out_dim < 1:
            raise InvalidParameter("all layer sizes must be positive")
        if self.kind not in ("mlp", "cnn"):
            raise InvalidParameter(f"unknown network kind {self.kind!r}")
        if self.parametrization not in ("sp", "mup"):
            raise InvalidParameter(f"unknown parametrization {self.parametrization!r}")
        if not self.gamma0 > 0:
            raise InvalidParameter("gamma0 must be positive")
        lam = np.ones(self.depth + 1) if self.precisions is None else self.precisions
        lam = check_precisions(lam, self.depth + 1)
        object.__setattr__(self, "precisions", tuple(float(a) for a in lam))
        if self.kind == "cnn":
            if self.conv is None or self.conv.depth != self.depth:
                raise InvalidParameter("a CNN needs a ConvSpec with one entry per layer")
            if self.depth < 1:
                raise InvalidParameter("a CNN needs at least one layer")

    @property
    def depth(self):
        return len(self.widths)

    @property
    def act(self):
        return Activation(self.activation)

    @property
    def readout_width(self):
        return self.widths[-1] if self.widths else self.n_in

    @property
    def gamma(self):
        """Output scale 1 (SP) or gamma0 sqrt(N_L) (muP)."""
        if self.parametrization == "sp":
            return 1.0
        return float(self.gamma0 * np.sqrt(self.readout_width))

    @property
    def beta(self):
        return 1.0 / self.temperature

    def theory_precisions(self):
        """Precisions seen by the kernel theory; muP multiplies the readout one by gamma^2."""
        lam = list(self.precisions)
        lam[-1] *= self.gamma**2
        return lam

    def to_dict(self):
        d = asdict(self)
        d["precisions"] = list(self.precisions)
        d["widths"] = list(self.widths)
        if self.conv is not None:
            d["conv"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.conv).items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("conv") is not None:
            d["conv"] = ConvSpec(**d["conv"])
        return cls(**d)

    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **kw):
        return replace(self, **kw)


class ParamLayout:
    """Shapes and offsets of every weight array inside the flat vector."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        if spec.kind == "mlp":
            dims = (spec.n_in,) + spec.widths
            shapes = [(dims[l + 1], dims[l]) for l in range(spec.depth)]
            shapes.append((spec.out_dim, dims[-1]))
        else:
            c = spec.conv
            chans = (c.in_channels,) + spec.widths
            shapes = [(chans[l + 1], chans[l], c.masks[l]) for l in range(spec.depth)]
            shapes.append((spec.out_dim, chans[-1], c.n_patches()))
        self.shapes = shapes
        sizes = [int(np.prod(s)) for s in shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.size = int(self.offsets[-1])
        self.lam = self.precision_vector()

    def views(self, theta):
        theta = np.asarray(theta)
        if theta.shape != (self.size,):
            raise ShapeMismatch(f"expected {self.size} parameters, got {theta.shape}")
        return [theta[a:b].reshape(s) for a, b, s in zip(self.offsets[:-1], self.offsets[1:], self.shapes)]

    def precision_vector(self):
        """Per-entry prior precision."""
        lam = self.spec.precisions
        return np.concatenate([np.full(b - a, lam[l])
                               for l, (a, b) in enumerate(zip(self.offsets[:-1], self.offsets[1:]))])


def init_from_prior(spec: NetworkSpec, rng):
    """Draw every weight from its Gaussian prior."""
    lay = ParamLayout(spec)
    return _gen(rng).standard_normal(lay.size) / np.sqrt(lay.precision_vector())


def _as_output(f, spec):
    return f[:, 0] if spec.out_dim == 1 else f


def mlp_forward(theta, X, spec: NetworkSpec):
    """Outputs f and the list of pre-activations H_1..H_L."""
    Ws = ParamLayout(spec).views(theta)
    act = spec.act
    Z = np.asarray(X, dtype=np.float64)
    if Z.shape[1] != spec.n_in:
        raise ShapeMismatch("input dimension does not match the network")
    Hs = []
    for W in Ws[:-1]:
        H = Z @ W.T / np.sqrt(W.shape[1])
        Hs.append(H)
        Z = act(H)
    v = Ws[-1]
    f = Z @ v.T / (np.sqrt(v.shape[1]) * spec.gamma)
    return _as_output(f, spec), Hs


def _conv_layer(Z, W, M, S, n_out):
    # Z (P, N, A_prev) -> patches (P, n_out, M, A_prev); W (A, A_prev, M)
    Zp = extract_patches(Z, M, S, n_out)
    A_prev = Z.shape[2]
    H = np.einsum("pimb,abm->pia", Zp, W, optimize=True) / np.sqrt(M * A_prev)
    return H, Zp


def cnn_forward(theta, X, spec: NetworkSpec, return_hidden=False):
    """Outputs of a 1D CNN on inputs of shape (P, N0) or (P, N0, A0)."""
    c = spec.conv
    Ws = ParamLayout(spec).views(theta)
    X = np.asarray(X, dtype=np.float64)
    Z = X[:, :, None] if X.ndim == 2 else X
    if Z.shape[1:] != (c.n_in, c.in_channels):
        raise ShapeMismatch("inputs do not match the conv spec")
    counts = c.patch_counts()
    act = spec.act
    Hs = []
    for l in range(spec.depth):
        H, _ = _conv_layer(Z, Ws[l], c.masks[l], c.strides[l], counts[l + 1])
        Hs.append(H)
        Z = act(H)
    v = Ws[-1]
    f = np.einsum("pia,dai->pd", Z, v) / (np.sqrt(v.shape[1] * v.shape[2]) * spec.gamma)
    f = _as_output(f, spec)
    return (f, Hs) if return_hidden else f


def forward(theta, X, spec: NetworkSpec):
    if spec.kind == "mlp":
        return mlp_forward(theta, X, spec)[0]
    return cnn_forward(theta, X, spec)


def _mlp_value_grad(theta, X, y, spec, lay):
    Ws = lay.views(theta)
    act = spec.act
    Zs = [np.asarray(X, dtype=np.float64)]
    Hs = []
    for W in Ws[:-1]:
        H = Zs[-1] @ W.T / np.sqrt(W.shape[1])
        Hs.append(H)
        Zs.append(act(H))
    v = Ws[-1]
    c = 1.0 / (np.sqrt(v.shape[1]) * spec.gamma)
    f = c * Zs[-1] @ v.T
    r = f - y
    grads = [None] * len(Ws)
    grads[-1] = c * r.T @ Zs[-1]
    gZ = c * r @ v
    for l in reversed(range(len(Ws) - 1)):
        gH = gZ * act.derivative(Hs[l])
        s = 1.0 / np.sqrt(Ws[l].shape[1])
        grads[l] = s * gH.T @ Zs[l]
        if l > 0:
            gZ = s * gH @ Ws[l]
    return f, np.concatenate([g.ravel() for g in grads])


def _patch_adjoint(gZp, n_in, M, S):
    # scatter patch gradients (P, n_out, M, A) back to positions (P, n_in, A)
    P, n_out, _, A = gZp.shape
    out = np.zeros((P, n_in + M + S * n_out, A))
    for m in range(M):
        out[:, S * np.arange(n_out) + m, :] += gZp[:, :, m, :]
    return out[:, :n_in, :]


def _cnn_value_grad(theta, X, y, spec, lay):
    c = spec.conv
    Ws = lay.views(theta)
    act = spec.act
    X = np.asarray(X, dtype=np.float64)
    Z = X[:, :, None] if X.ndim == 2 else X
    counts = c.patch_counts()
    Zs, Zps, Hs = [Z], [], []
    for l in range(spec.depth):
        H, Zp = _conv_layer(Zs[-1], Ws[l], c.masks[l], c.strides[l], counts[l + 1])
        Hs.append(H)
        Zps.append(Zp)
        Zs.append(act(H))
    v = Ws[-1]
    cv = 1.0 / (np.sqrt(v.shape[1] * v.shape[2]) * spec.gamma)
    f = cv * np.einsum("pia,dai->pd", Zs[-1], v)
    r = f - y
    grads = [None] * len(Ws)
    grads[-1] = cv * np.einsum("pd,pia->dai", r, Zs[-1])
    gZ = cv * np.einsum("pd,dai->pia", r, v)
    for l in reversed(range(spec.depth)):
        gH = gZ * act.derivative(Hs[l])
        M, A_prev = c.masks[l], Zs[l].shape[2]
        s = 1.0 / np.sqrt(M * A_prev)
        grads[l] = s * np.einsum("pia,pimb->abm", gH, Zps[l], optimize=True)
        if l > 0:
            gZp = s * np.einsum("pia,abm->pimb", gH, Ws[l], optimize=True)
            gZ = _patch_adjoint(gZp, Zs[l].shape[1], M, c.strides[l])
    return f, np.concatenate([g.ravel() for g in grads])


def loss_and_grad(theta, data, spec: NetworkSpec, layout=None, return_output=False):
    """Regularised loss L + T sum_l (lambda_l/2) |W_l|^2 and its gradient.

    ``data`` is (X, y); L = 1/2 sum (y - f)^2.  A prebuilt ``layout``
    saves rebuilding the precision vector on every call.
    """
    X, y = data
    lay = ParamLayout(spec) if layout is None else layout
    y2 = np.asarray(y, dtype=np.float64).reshape(len(y), spec.out_dim)
    fn = _mlp_value_grad if spec.kind == "mlp" else _cnn_value_grad
    f, g = fn(theta, X, y2, spec, lay)
    lam = lay.lam
    T = spec.temperature
    r = f - y2
    val = 0.5 * float(np.sum(r * r)) + 0.5 * T * float(np.sum(lam * theta * theta))
    g += T * lam * theta
    if return_output:
        return val, g, _as_output(f, spec)
    return val, g


def empirical_kernel(H, act, lam=1.0, N=None):
    """K_E = sigma(H) sigma(H)^T / (lam N) from pre-activations H of shape (P, N)."""
    H = np.asarray(H, dtype=np.float64)
    N = H.shape[1] if N is None else N
    Z = Activation.parse(act)(H)
    return Z @ Z.T / (lam * N)


def save_params(path, theta, spec: NetworkSpec):
    """Little-endian float64 dump plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    np.asarray(theta, dtype="<f8").tofile(path)
    side = {"spec": spec.to_dict(), "size": int(np.size(theta)), "dtype": "<f8"}
    path.with_name(path.name + ".json").write_text(json.dumps(side, indent=1, sort_keys=True))


def load_params(path):
    path = Path(path)
    side = json.loads(path.with_name(path.name + ".json").read_text())
    spec = NetworkSpec.from_dict(side["spec"])
    theta = np.fromfile(path, dtype="<f8")
    if theta.size != side["size"] or theta.size != ParamLayout(spec).size:
        raise ShapeMismatch("checkpoint size does not match its spec")
    return theta, spec
