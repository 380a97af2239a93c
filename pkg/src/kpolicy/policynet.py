"""Policy network over k-space columns, with hand-rolled reverse-mode
gradients and an Adam optimizer.

The network maps the current reconstruction to a probability vector over
unmeasured columns: a stack of conv blocks (3x3 zero-padded conv, instance
norm, ReLU, 2x2 max-pool), a flatten, a leaky-ReLU dense hidden layer, a
final dense layer, and a masked softmax. Measured columns have their logits
replaced by -inf before the softmax, so their probabilities are exactly zero
while the surviving entries keep well-defined gradients.

Everything runs in float64; the architecture family is fixed, so the backward
pass is written out layer by layer rather than via a general autodiff tape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .kspace import ColumnMask

CHECKPOINT_MAGIC = b"KGPN"
CHECKPOINT_VERSION = 1

GREEDY_SCHEDULE = "greedy_schedule"
NONGREEDY_SCHEDULE = "nongreedy_schedule"

_INSTANCE_NORM_EPS = 1e-5


class NoActionsAvailableError(RuntimeError):
    """The mask is full; the policy has no column left to propose."""


class NumericalFailureError(RuntimeError):
    """A non-finite gradient reached the optimizer."""


@dataclass(frozen=True)
class ArchSpec:
    """Shape of the policy network.

    input_shape is the (H, W) of reconstructions fed to the net; width is the
    number of k-space columns (the action space). conv_channels may be empty,
    in which case the input is flattened straight into the dense layers.
    """

    input_shape: tuple
    width: int
    conv_channels: tuple = (8, 16)
    dense_hidden: int = 64
    leaky_slope: float = 0.01

    def __post_init__(self):
        h, w = self.input_shape
        factor = 2 ** len(self.conv_channels)
        if h % factor or w % factor:
            raise ValueError(
                f"input shape {self.input_shape} not divisible by pooling factor {factor}"
            )

    @property
    def flat_features(self) -> int:
        h, w = self.input_shape
        factor = 2 ** len(self.conv_channels)
        channels = self.conv_channels[-1] if self.conv_channels else 1
        return (h // factor) * (w // factor) * channels

    def layer_shapes(self):
        """(name, shape) for every parameter tensor, in storage order."""
        shapes = []
        c_in = 1
        for i, c_out in enumerate(self.conv_channels):
            shapes.append((f"conv{i}_w", (c_out, c_in, 3, 3)))
            shapes.append((f"conv{i}_b", (c_out,)))
            c_in = c_out
        shapes.append(("dense1_w", (self.dense_hidden, self.flat_features)))
        shapes.append(("dense1_b", (self.dense_hidden,)))
        shapes.append(("dense2_w", (self.width, self.dense_hidden)))
        shapes.append(("dense2_b", (self.width,)))
        return shapes

    def descriptor(self) -> str:
        h, w = self.input_shape
        conv = ",".join(str(c) for c in self.conv_channels)
        return (
            f"input={h}x{w};conv={conv};hidden={self.dense_hidden};"
            f"width={self.width};slope={self.leaky_slope!r}"
        )

    @classmethod
    def from_descriptor(cls, desc: str) -> "ArchSpec":
        fields = dict(part.split("=", 1) for part in desc.split(";"))
        h, w = (int(x) for x in fields["input"].split("x"))
        conv = tuple(int(c) for c in fields["conv"].split(",") if c)
        return cls(
            input_shape=(h, w),
            width=int(fields["width"]),
            conv_channels=conv,
            dense_hidden=int(fields["hidden"]),
            leaky_slope=float(fields["slope"]),
        )


def _im2col3x3(xpad: np.ndarray, h: int, w: int) -> np.ndarray:
    c = xpad.shape[0]
    cols = np.empty((c * 9, h * w))
    idx = 0
    for ci in range(c):
        for ky in range(3):
            for kx in range(3):
                cols[idx] = xpad[ci, ky : ky + h, kx : kx + w].ravel()
                idx += 1
    return cols


class PolicyNetwork:
    """Flat-parameter policy network; see module docstring for the layout."""

    def __init__(self, arch: ArchSpec, params: np.ndarray):
        self.arch = arch
        params = np.asarray(params, dtype=np.float64)
        expected = sum(int(np.prod(s)) for _, s in arch.layer_shapes())
        if params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {params.shape}")
        if not np.isfinite(params).all():
            raise ValueError("parameters contain non-finite values")
        self.params = params
        self._slices = {}
        offset = 0
        for name, shape in arch.layer_shapes():
            n = int(np.prod(shape))
            self._slices[name] = (slice(offset, offset + n), shape)
            offset += n

    @classmethod
    def initialize(cls, arch: ArchSpec, rng: np.random.Generator) -> "PolicyNetwork":
        """Seeded uniform init in +-sqrt(1/fan_in) per layer."""
        chunks = []
        fan_in = None
        for name, shape in arch.layer_shapes():
            if name.endswith("_w"):
                fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        return cls(arch, np.concatenate(chunks))

    @property
    def num_params(self) -> int:
        return self.params.shape[0]

    def param(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.params[sl].reshape(shape)

    def param_slice(self, name: str) -> slice:
        return self._slices[name][0]

    @property
    def final_dense_weight_slice(self) -> slice:
        """Flat-vector slice of the final dense layer's weights (no bias)."""
        return self._slices["dense2_w"][0]

    def forward(self, xhat: np.ndarray, mask: ColumnMask) -> np.ndarray:
        probs, _ = self.forward_cached(xhat, mask)
        return probs

    def forward_cached(self, xhat: np.ndarray, mask: ColumnMask):
        """Forward pass returning (probs, cache) for a later backward pass."""
        xhat = np.asarray(xhat, dtype=np.float64)
        if xhat.shape != self.arch.input_shape:
            raise ValueError(
                f"input shape {xhat.shape} != expected {self.arch.input_shape}"
            )
        if mask.width != self.arch.width:
            raise ValueError("mask width does not match action space")
        if mask.count >= mask.width:
            raise NoActionsAvailableError("all columns already measured")

        cache = {"mask": mask}
        x = xhat[np.newaxis]  # (1, H, W)
        conv_caches = []
        for i in range(len(self.arch.conv_channels)):
            x, cc = self._conv_block_forward(i, x)
            conv_caches.append(cc)
        cache["conv"] = conv_caches

        flat = x.ravel()
        cache["flat"] = flat
        w1, b1 = self.param("dense1_w"), self.param("dense1_b")
        pre1 = w1 @ flat + b1
        slope = self.arch.leaky_slope
        hidden = np.where(pre1 > 0, pre1, slope * pre1)
        cache["pre1"] = pre1
        cache["hidden"] = hidden

        w2, b2 = self.param("dense2_w"), self.param("dense2_b")
        logits = w2 @ hidden + b2

        masked = np.where(mask.selected, -np.inf, logits)
        shifted = masked - masked[~mask.selected].max()
        exp = np.where(mask.selected, 0.0, np.exp(shifted))
        probs = exp / exp.sum()
        cache["probs"] = probs
        return probs, cache

    def _conv_block_forward(self, i: int, x: np.ndarray):
        c, h, w = x.shape
        wmat = self.param(f"conv{i}_w")
        bias = self.param(f"conv{i}_b")
        c_out = wmat.shape[0]
        xpad = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        cols = _im2col3x3(xpad, h, w)
        conv = (wmat.reshape(c_out, -1) @ cols + bias[:, None]).reshape(c_out, h, w)

        mu = conv.mean(axis=(1, 2), keepdims=True)
        var = conv.var(axis=(1, 2), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + _INSTANCE_NORM_EPS)
        normed = (conv - mu) * inv_std

        act = np.maximum(normed, 0.0)

        h2, w2 = h // 2, w // 2
        windows = act.reshape(c_out, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4)
        windows = windows.reshape(c_out, h2, w2, 4)
        argmax = windows.argmax(axis=3)
        pooled = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]

        cache = {
            "cols": cols,
            "in_shape": (c, h, w),
            "normed": normed,
            "inv_std": inv_std,
            "act_pos": normed > 0,
            "argmax": argmax,
        }
        return pooled, cache

    def backward_logits(self, cache, dlogits: np.ndarray) -> np.ndarray:
        """Backpropagate a gradient w.r.t. the (pre-mask) logits; returns the
        flat parameter gradient."""
        grad = np.zeros_like(self.params)

        hidden = cache["hidden"]
        w2 = self.param("dense2_w")
        grad[self.param_slice("dense2_w")] = np.outer(dlogits, hidden).ravel()
        grad[self.param_slice("dense2_b")] = dlogits
        dhidden = w2.T @ dlogits

        slope = self.arch.leaky_slope
        dpre1 = dhidden * np.where(cache["pre1"] > 0, 1.0, slope)
        w1 = self.param("dense1_w")
        grad[self.param_slice("dense1_w")] = np.outer(dpre1, cache["flat"]).ravel()
        grad[self.param_slice("dense1_b")] = dpre1
        dflat = w1.T @ dpre1

        nblocks = len(self.arch.conv_channels)
        if nblocks:
            factor = 2**nblocks
            h, w = self.arch.input_shape
            dx = dflat.reshape(
                self.arch.conv_channels[-1], h // factor, w // factor
            )
            for i in range(nblocks - 1, -1, -1):
                dx = self._conv_block_backward(i, cache["conv"][i], dx, grad)
        return grad

    def _conv_block_backward(self, i, cc, dpooled, grad):
        c_in, h, w = cc["in_shape"]
        c_out = dpooled.shape[0]
        h2, w2 = h // 2, w // 2

        # unpool: route gradient to the argmax position of each 2x2 window
        dwin = np.zeros((c_out, h2, w2, 4))
        np.put_along_axis(dwin, cc["argmax"][..., None], dpooled[..., None], axis=3)
        dact = (
            dwin.reshape(c_out, h2, w2, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c_out, h, w)
        )

        dnormed = dact * cc["act_pos"]

        # instance norm backward (per channel, no affine)
        normed = cc["normed"]
        mean_d = dnormed.mean(axis=(1, 2), keepdims=True)
        mean_dn = (dnormed * normed).mean(axis=(1, 2), keepdims=True)
        dconv = cc["inv_std"] * (dnormed - mean_d - normed * mean_dn)

        dconv_flat = dconv.reshape(c_out, -1)
        grad[self.param_slice(f"conv{i}_w")] = (dconv_flat @ cc["cols"].T).ravel()
        grad[self.param_slice(f"conv{i}_b")] = dconv_flat.sum(axis=1)

        wmat = self.param(f"conv{i}_w").reshape(c_out, -1)
        dcols = wmat.T @ dconv_flat
        dxpad = np.zeros((c_in, h + 2, w + 2))
        idx = 0
        for ci in range(c_in):
            for ky in range(3):
                for kx in range(3):
                    dxpad[ci, ky : ky + h, kx : kx + w] += dcols[idx].reshape(h, w)
                    idx += 1
        return dxpad[:, 1:-1, 1:-1]


@dataclass
class GradientBuffer:
    """Accumulates weighted log-probability gradients between optimizer steps."""

    accum: np.ndarray
    sample_count: int = 0

    @classmethod
    def for_network(cls, net: PolicyNetwork) -> "GradientBuffer":
        return cls(np.zeros(net.num_params))

    def add(self, grad: np.ndarray, samples: int = 1) -> None:
        self.accum += grad
        self.sample_count += samples

    def scale(self, factor: float) -> None:
        self.accum *= factor

    def merge(self, other: "GradientBuffer") -> None:
        self.accum += other.accum
        self.sample_count += other.sample_count

    def reset(self) -> None:
        self.accum[:] = 0.0
        self.sample_count = 0


@dataclass
class OptimizerState:
    """Adam state (no weight decay); updates are gradient *ascent* steps."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net: PolicyNetwork, learning_rate: float) -> "OptimizerState":
        return cls(
            first_moment=np.zeros(net.num_params),
            second_moment=np.zeros(net.num_params),
            learning_rate=learning_rate,
        )


def forward(net: PolicyNetwork, xhat: np.ndarray, mask: ColumnMask) -> np.ndarray:
    """Masked policy distribution over columns; measured columns get exactly 0."""
    return net.forward(xhat, mask)


def accumulate_log_prob_gradient(net, xhat, mask, action, weight, buf) -> None:
    """buf.accum += weight * grad_phi log pi(action | xhat, mask)."""
    if mask.selected[action]:
        raise ValueError(f"action {action} is already measured")
    probs, cache = net.forward_cached(xhat, mask)
    dlogits = -weight * probs
    dlogits[action] += weight
    buf.add(net.backward_logits(cache, dlogits))


def accumulate_weighted_log_prob_gradients(net, xhat, mask, actions, weights, buf) -> None:
    """Sum of weighted log-prob gradients for several actions sampled from the
    same state, in a single forward/backward pass."""
    probs, cache = net.forward_cached(xhat, mask)
    total = float(np.sum(weights))
    dlogits = -total * probs
    for a, wgt in zip(actions, weights):
        if mask.selected[a]:
            raise ValueError(f"action {a} is already measured")
        dlogits[a] += wgt
    buf.add(net.backward_logits(cache, dlogits), samples=len(actions))


def sample_actions(policy: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    """q independent multinomial draws (with replacement) from the policy."""
    if q < 1:
        raise ValueError("q must be >= 1")
    return rng.choice(policy.shape[0], size=q, p=policy)


def optimizer_step(net: PolicyNetwork, buf: GradientBuffer, st: OptimizerState) -> None:
    """Adam ascent step consuming the accumulated gradient; resets the buffer.

    The buffer is expected to already hold the desired mean gradient (the
    estimator / training loop pre-scales); no division happens here.
    """
    g = buf.accum
    if not np.isfinite(g).all():
        raise NumericalFailureError("non-finite gradient in optimizer step")
    st.step_count += 1
    st.first_moment *= st.beta1
    st.first_moment += (1 - st.beta1) * g
    st.second_moment *= st.beta2
    st.second_moment += (1 - st.beta2) * g**2
    m_hat = st.first_moment / (1 - st.beta1**st.step_count)
    v_hat = st.second_moment / (1 - st.beta2**st.step_count)
    net.params += st.learning_rate * m_hat / (np.sqrt(v_hat) + st.epsilon)
    buf.reset()


def decay_learning_rate(st: OptimizerState, schedule: str, epoch: int) -> None:
    """Apply the per-epoch learning-rate decay at the start of `epoch` (1-based).

    greedy_schedule: one-time factor-10 drop entering epoch 41.
    nongreedy_schedule: halved entering epochs 11, 21, 31, 41 (total 16x).
    """
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    if schedule == GREEDY_SCHEDULE:
        if epoch == 41:
            st.learning_rate /= 10.0
    elif schedule == NONGREEDY_SCHEDULE:
        if epoch in (11, 21, 31, 41):
            st.learning_rate /= 2.0
    else:
        raise ValueError(f"unknown schedule {schedule!r}")


def save_checkpoint(net: PolicyNetwork, opt: OptimizerState, path: str) -> None:
    """Flat binary checkpoint: magic, version, arch descriptor, parameters,
    then the two Adam moment vectors (all f64 little-endian)."""
    desc = (
        net.arch.descriptor()
        + f";step={opt.step_count};lr={opt.learning_rate!r}"
    ).encode("ascii")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(desc)))
        f.write(desc)
        f.write(struct.pack("<Q", net.num_params))
        f.write(net.params.astype("<f8").tobytes())
        f.write(opt.first_moment.astype("<f8").tobytes())
        f.write(opt.second_moment.astype("<f8").tobytes())


def load_checkpoint(path: str):
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (desc_len,) = struct.unpack("<I", f.read(4))
        desc = f.read(desc_len).decode("ascii")
        fields = dict(part.split("=", 1) for part in desc.split(";"))
        arch = ArchSpec.from_descriptor(desc)
        (count,) = struct.unpack("<Q", f.read(8))
        params = np.frombuffer(f.read(count * 8), dtype="<f8").copy()
        m1 = np.frombuffer(f.read(count * 8), dtype="<f8").copy()
        m2 = np.frombuffer(f.read(count * 8), dtype="<f8").copy()
    net = PolicyNetwork(arch, params)
    opt = OptimizerState(
        first_moment=m1,
        second_moment=m2,
        learning_rate=float(fields["lr"]),
        step_count=int(fields["step"]),
    )
    return net, opt
