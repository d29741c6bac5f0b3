"""Point-cloud segmentation network with hand-written reverse-mode gradients.

The architecture follows the shared-MLP PointNet pattern: two per-point MLP
blocks, a max-pool over the plot's points producing a global descriptor,
concatenation of the global descriptor with the first block's features, and
a final per-point MLP ending in a 4-class softmax (bare soil, low, medium,
high vegetation).  A regression variant replaces the segmentation head with
a small MLP mapping the global descriptor to three sigmoid occupancies.

Everything is plain numpy.  The forward pass records a tape of
intermediates; ``backward`` consumes the tape once and produces exact
gradients for every parameter (max-pool and dropout route gradients
deterministically).  Training uses Adam with the stepped learning-rate
schedule from the training configuration.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ContractError, NumericError

N_CLASSES = 4
CLASS_ORDER = ("bare_soil", "low_veg", "medium_veg", "high_veg")
LOGIT_CLAMP = 50.0
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _he_uniform(rng, din, dout, dtype):
    limit = np.sqrt(6.0 / din)
    return rng.uniform(-limit, limit, size=(din, dout)).astype(dtype)


def _final_uniform(rng, din, dout, dtype):
    limit = 1.0 / np.sqrt(din)
    return rng.uniform(-limit, limit, size=(din, dout)).astype(dtype)


class _Layer:
    """Base class: parameters live in dicts shared with the owning network."""

    def params(self) -> dict:
        return {}

    def buffers(self) -> dict:
        return {}

    def forward(self, x, train, rng, ctx):
        raise NotImplementedError

    def backward(self, g, ctx, grads):
        raise NotImplementedError


class _Linear(_Layer):
    def __init__(self, name, din, dout, rng, dtype, final=False):
        self.name = name
        init = _final_uniform if final else _he_uniform
        self.W = init(rng, din, dout, dtype)
        self.b = np.zeros(dout, dtype=dtype)

    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def forward(self, x, train, rng, ctx):
        ctx["x"] = x
        out = x @ self.W
        out += self.b
        return out

    def backward(self, g, ctx, grads):
        x = ctx["x"]
        grads[f"{self.name}.W"] += x.T @ g
        grads[f"{self.name}.b"] += g.sum(axis=0)
        return g @ self.W.T


class _BatchNorm(_Layer):
    def __init__(self, name, dim, dtype):
        self.name = name
        self.gamma = np.ones(dim, dtype=dtype)
        self.beta = np.zeros(dim, dtype=dtype)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def forward(self, x, train, rng, ctx):
        if train:
            mean = x.mean(axis=0)
            xhat = x - mean
            var = np.einsum("ij,ij->j", xhat, xhat) / x.shape[0]
            self.running_mean += BN_MOMENTUM * (mean - self.running_mean)
            self.running_var += BN_MOMENTUM * (var - self.running_var)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat *= inv_std
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + BN_EPS)
            xhat = (x - self.running_mean) * inv_std
        ctx["xhat"] = xhat
        ctx["inv_std"] = inv_std
        ctx["train"] = train
        out = xhat * self.gamma
        out += self.beta
        return out

    def backward(self, g, ctx, grads):
        xhat, inv_std = ctx["xhat"], ctx["inv_std"]
        # The two column sums double as the batch-stat correction terms.
        sg = g.sum(axis=0)
        sgx = np.einsum("ij,ij->j", g, xhat)
        grads[f"{self.name}.gamma"] += sgx
        grads[f"{self.name}.beta"] += sg
        if not ctx["train"]:
            return g * (self.gamma * inv_std)
        # dx = gamma*inv_std * (g - (sg + xhat*sgx)/n), consuming xhat in place.
        n = xhat.shape[0]
        dx = xhat
        dx *= -sgx / n
        dx -= sg / n
        dx += g
        dx *= self.gamma * inv_std
        return dx


class _ReLU(_Layer):
    def forward(self, x, train, rng, ctx):
        ctx["mask"] = x > 0
        return x * ctx["mask"]

    def backward(self, g, ctx, grads):
        # Gradients flowing backward are owned by the chain; mask in place.
        g *= ctx["mask"]
        return g


class _Dropout(_Layer):
    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, train, rng, ctx):
        if not train or self.rate == 0.0:
            ctx["mask"] = None
            return x
        keep = 1.0 - self.rate
        draw = rng.random(x.shape, dtype=np.float32)
        mask = (draw < keep).astype(x.dtype) / np.asarray(keep, dtype=x.dtype)
        ctx["mask"] = mask
        return x * mask

    def backward(self, g, ctx, grads):
        return g if ctx["mask"] is None else g * ctx["mask"]


class _SplitLinear(_Layer):
    """Affine over [per-point features | per-plot descriptor] rows.

    Mathematically identical to repeating the descriptor for every point,
    concatenating, and applying one (d_point + d_global, dout) affine — but
    the two halves of the weight matrix are applied separately, so the
    repeated block is never materialized and its matmul runs on (B, d_global)
    instead of (B*M, d_global).
    """

    def __init__(self, name, d_point, d_global, dout, rng, dtype):
        self.name = name
        self.d_point = d_point
        self.W = _he_uniform(rng, d_point + d_global, dout, dtype)
        self.b = np.zeros(dout, dtype=dtype)

    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def forward_pair(self, f, g, m, ctx):
        ctx["f"] = f
        ctx["g"] = g
        ctx["m"] = m
        out = f @ self.W[: self.d_point]
        per_plot = g @ self.W[self.d_point:] + self.b
        out3 = out.reshape(g.shape[0], m, -1)
        out3 += per_plot[:, None, :]
        return out

    def backward_pair(self, gout, ctx, grads):
        f, g, m = ctx["f"], ctx["g"], ctx["m"]
        per_plot_g = gout.reshape(g.shape[0], m, -1).sum(axis=1)
        gw = grads[f"{self.name}.W"]
        gw[: self.d_point] += f.T @ gout
        gw[self.d_point:] += g.T @ per_plot_g
        grads[f"{self.name}.b"] += per_plot_g.sum(axis=0)
        return gout @ self.W[: self.d_point].T, per_plot_g @ self.W[self.d_point:].T


class _Sequential:
    def __init__(self, layers):
        self.layers = layers

    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def forward(self, x, train, rng):
        ctxs = []
        for layer in self.layers:
            ctx = {}
            x = layer.forward(x, train, rng, ctx)
            ctxs.append(ctx)
        return x, ctxs

    def backward(self, g, ctxs, grads):
        for layer, ctx in zip(reversed(self.layers), reversed(ctxs)):
            g = layer.backward(g, ctx, grads)
        return g


def _point_mlp(name, widths, rng, dtype, head=False, dropout=0.0):
    """Shared per-point MLP: affine + batchnorm + ReLU per width.

    With ``head=True`` the last affine gets neither batchnorm nor ReLU and
    an optional dropout right before it.
    """
    layers = []
    for i, (din, dout) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        if head and last and dropout > 0.0:
            layers.append(_Dropout(dropout))
        layers.append(_Linear(f"{name}.{i}", din, dout, rng, dtype,
                              final=head and last))
        if not (head and last):
            layers.append(_BatchNorm(f"{name}.{i}.bn", dout, dtype))
            layers.append(_ReLU())
    return _Sequential(layers)


def softmax_rows(logits):
    a = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Tape:
    """Recorded intermediates of one forward pass; single use."""

    ctxs: dict
    shapes: dict
    consumed: bool = field(default=False)


class _Network:
    """Shared plumbing: parameter registry, Adam state, checkpointing."""

    signature: str

    def _register(self, blocks):
        self.blocks = blocks
        self.params = {}
        self.buffers = {}
        for blk in blocks:
            self.params.update(blk.params())
            self.buffers.update(blk.buffers())

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def save(self, path):
        meta = {
            "format_version": 1,
            "signature": self.signature,
            "class_order": list(CLASS_ORDER),
        }
        arrays = {f"param:{k}": v for k, v in self.params.items()}
        arrays.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        np.savez(path, __meta__=json.dumps(meta), **arrays)

    def load_state(self, path):
        with np.load(path, allow_pickle=False) as data:
            try:
                meta = json.loads(str(data["__meta__"]))
            except KeyError:
                raise CheckpointError(f"{path}: not a model checkpoint")
            if meta.get("signature") != self.signature:
                raise CheckpointError(
                    f"{path}: architecture signature mismatch "
                    f"({meta.get('signature')!r} != {self.signature!r})"
                )
            for k, v in self.params.items():
                v[...] = data[f"param:{k}"]
            for k, v in self.buffers.items():
                v[...] = data[f"buffer:{k}"]


class SegNet(_Network):
    """Semantic segmentation network producing per-point class probabilities."""

    MLP1 = (9, 32, 32)
    MLP2 = (32, 64, 128)
    MLP3 = (32 + 128, 64, 32, N_CLASSES)

    def __init__(self, seed=0, dtype=np.float32, dropout=0.4):
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.mlp1 = _point_mlp("mlp1", self.MLP1, rng, self.dtype)
        self.mlp2 = _point_mlp("mlp2", self.MLP2, rng, self.dtype)
        # The head's first affine acts on [f1 | pooled descriptor]; splitting
        # it keeps the repeated descriptor out of the big matmuls.
        self.fuse = _SplitLinear("mlp3.0", self.MLP1[-1], self.MLP2[-1],
                                 self.MLP3[1], rng, self.dtype)
        widths = self.MLP3[1:]
        layers = [_BatchNorm("mlp3.0.bn", widths[0], self.dtype), _ReLU()]
        for i, (din, dout) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            last = i == len(widths) - 1
            if last and dropout > 0.0:
                layers.append(_Dropout(dropout))
            layers.append(_Linear(f"mlp3.{i}", din, dout, rng, self.dtype,
                                  final=last))
            if not last:
                layers.append(_BatchNorm(f"mlp3.{i}.bn", dout, self.dtype))
                layers.append(_ReLU())
        self.mlp3 = _Sequential(layers)
        self._register([self.mlp1, self.mlp2, self.fuse, self.mlp3])
        self.signature = (
            f"segnet:mlp1={list(self.MLP1)}:mlp2={list(self.MLP2)}"
            f":mlp3={list(self.MLP3)}:dropout={dropout}"
        )

    def forward(self, batch, train=False, seed=0):
        """Probabilities (B, M, 4) for a batch of sampled plots (B, M, 9)."""
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != 3 or batch.shape[2] != 9:
            raise ContractError("batch must have shape (B, M, 9)")
        finite = np.isfinite(batch).all(axis=(1, 2))
        if not finite.all():
            raise NumericError(
                f"non-finite input in batch plot(s) {np.nonzero(~finite)[0].tolist()}"
            )
        b, m, _ = batch.shape
        rng = np.random.default_rng(seed)
        x = batch.reshape(b * m, 9)
        f1, ctx1 = self.mlp1.forward(x, train, rng)
        f2, ctx2 = self.mlp2.forward(f1, train, rng)
        f2b = f2.reshape(b, m, -1)
        pool_arg = f2b.argmax(axis=1)  # ties resolve to the lowest index
        g = np.take_along_axis(f2b, pool_arg[:, None, :], axis=1)[:, 0, :]
        ctxf = {}
        h = self.fuse.forward_pair(f1, g, m, ctxf)
        logits, ctx3 = self.mlp3.forward(h, train, rng)
        probs = softmax_rows(logits)
        tape = Tape(
            ctxs={"mlp1": ctx1, "mlp2": ctx2, "fuse": ctxf, "mlp3": ctx3,
                  "pool_arg": pool_arg, "probs": probs, "logits": logits},
            shapes={"b": b, "m": m, "train": train},
        )
        return probs.reshape(b, m, N_CLASSES), tape

    def backward(self, tape: Tape, dprobs):
        """Parameter gradients for upstream dL/dprobs of shape (B, M, 4)."""
        if tape.consumed:
            raise ContractError("tape already consumed")
        tape.consumed = True
        b, m = tape.shapes["b"], tape.shapes["m"]
        train = tape.shapes["train"]
        dprobs = np.asarray(dprobs, dtype=self.dtype).reshape(b * m, N_CLASSES)
        probs = tape.ctxs["probs"]
        # Softmax backward; the clamp is inactive whenever |logit| < 50.
        dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
        clamped = np.abs(tape.ctxs["logits"]) >= LOGIT_CLAMP
        dlogits[clamped] = 0.0
        grads = self.zero_grads()
        dh = self.mlp3.backward(dlogits, tape.ctxs["mlp3"], grads)
        d1, dg = self.fuse.backward_pair(dh, tape.ctxs["fuse"], grads)
        df2 = np.zeros((b, m, self.MLP2[-1]), dtype=self.dtype)
        np.put_along_axis(df2, tape.ctxs["pool_arg"][:, None, :],
                          dg[:, None, :], axis=1)
        d1 += self.mlp2.backward(df2.reshape(b * m, -1), tape.ctxs["mlp2"], grads)
        self.mlp1.backward(d1, tape.ctxs["mlp1"], grads)
        return grads


class OccupancyRegressor(_Network):
    """Direct plot-level occupancy regression (the deep-learning baseline)."""

    MLP1 = (9, 32, 32, 64, 128)
    HEAD = (128, 64, 32, 3)

    def __init__(self, seed=0, dtype=np.float32, dropout=0.4):
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.mlp1 = _point_mlp("mlp1", self.MLP1, rng, self.dtype)
        self.head = _head_mlp("head", self.HEAD, rng, self.dtype, dropout)
        self._register([self.mlp1, self.head])
        self.signature = (
            f"regressor:mlp1={list(self.MLP1)}:head={list(self.HEAD)}"
            f":dropout={dropout}"
        )

    def forward(self, batch, train=False, seed=0):
        """Occupancy triples (B, 3) in (0, 1) for a batch (B, M, 9)."""
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != 3 or batch.shape[2] != 9:
            raise ContractError("batch must have shape (B, M, 9)")
        if not np.isfinite(batch).all():
            raise NumericError("non-finite input batch")
        b, m, _ = batch.shape
        rng = np.random.default_rng(seed)
        f1, ctx1 = self.mlp1.forward(batch.reshape(b * m, 9), train, rng)
        f1b = f1.reshape(b, m, -1)
        pool_arg = f1b.argmax(axis=1)
        g = np.take_along_axis(f1b, pool_arg[:, None, :], axis=1)[:, 0, :]
        logits, ctx2 = self.head.forward(g, train, rng)
        a = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
        occ = 1.0 / (1.0 + np.exp(-a))
        tape = Tape(
            ctxs={"mlp1": ctx1, "head": ctx2, "pool_arg": pool_arg,
                  "occ": occ, "logits": logits},
            shapes={"b": b, "m": m, "train": train},
        )
        return occ, tape

    def backward(self, tape: Tape, docc):
        if tape.consumed:
            raise ContractError("tape already consumed")
        tape.consumed = True
        b, m = tape.shapes["b"], tape.shapes["m"]
        occ = tape.ctxs["occ"]
        dlogits = np.asarray(docc, dtype=self.dtype) * occ * (1.0 - occ)
        dlogits = np.where(
            np.abs(tape.ctxs["logits"]) >= LOGIT_CLAMP, 0.0, dlogits
        ).astype(self.dtype)
        grads = self.zero_grads()
        dg = self.head.backward(dlogits, tape.ctxs["head"], grads)
        df1 = np.zeros((b, m, self.MLP1[-1]), dtype=self.dtype)
        np.put_along_axis(df1, tape.ctxs["pool_arg"][:, None, :], dg[:, None, :], axis=1)
        self.mlp1.backward(df1.reshape(b * m, -1), tape.ctxs["mlp1"], grads)
        return grads


def _head_mlp(name, widths, rng, dtype, dropout):
    """Plot-level head: linear + ReLU stacks, plain final affine (no batchnorm)."""
    layers = []
    for i, (din, dout) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        if last and dropout > 0.0:
            layers.append(_Dropout(dropout))
        layers.append(_Linear(f"{name}.{i}", din, dout, rng, dtype, final=last))
        if not last:
            layers.append(_ReLU())
    return _Sequential(layers)


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: _Network) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in net.params.items()},
            v={k: np.zeros_like(p) for k, p in net.params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        state.m[k] += (1.0 - b1) * (g - state.m[k])
        state.v[k] += (1.0 - b2) * (g * g - state.v[k])
        mhat = state.m[k] / bc1
        vhat = state.v[k] / bc2
        p -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)


def learning_rate(epoch: int, base: float = 1e-3, drop_epoch: int = 50,
                  factor: float = 0.1) -> float:
    """Stepped schedule: base rate through ``drop_epoch``, scaled after.

    Epochs are 1-based; epoch 51 with the defaults yields 1e-4.
    """
    return base if epoch <= drop_epoch else base * factor
