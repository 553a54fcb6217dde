"""Shared-trunk MLP policy/value network with hand-rolled backprop.

Architecture: a ReLU trunk shared by both heads (default 300-600-600), a
linear policy head producing action means, and a value path that passes
through one extra ReLU stack (default a single 600 layer) before its scalar
head. The Gaussian log standard deviation is a state-independent learnable
vector.

Parameters live in float32 by default (matching the checkpoint payload);
tests instantiate float64 copies for finite-difference gradient checks.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

CHECKPOINT_MAGIC = b"TQLB"
CHECKPOINT_FORMAT = 1


@dataclass
class PolicySpec:
    input_dim: int = 28
    action_dim: int = 5
    shared_layers: tuple = (300, 600, 600)
    value_layers: tuple = (600,)

    def __post_init__(self):
        self.shared_layers = tuple(int(n) for n in self.shared_layers)
        self.value_layers = tuple(int(n) for n in self.value_layers)
        if self.input_dim <= 0 or self.action_dim <= 0:
            raise ValueError("input_dim and action_dim must be positive")
        if not self.shared_layers:
            raise ValueError("need at least one shared layer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicySpec":
        return cls(input_dim=int(doc["input_dim"]), action_dim=int(doc["action_dim"]),
                   shared_layers=tuple(doc["shared_layers"]),
                   value_layers=tuple(doc["value_layers"]))


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int,
                gain: float, dtype) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return (gain * q[:n_in, :n_out]).astype(dtype)


class MLPPolicy:
    """Policy mean + value network over flat observations.

    Weight layout (also the checkpoint payload order): for each trunk layer
    then the policy head then each value layer then the value head, W before
    b, followed by log_std last. W shapes are (n_in, n_out) so a forward
    pass is x @ W + b.
    """

    def __init__(self, spec: PolicySpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.param_names: list[str] = []

        def add(name, arr):
            self.params[name] = arr
            self.param_names.append(name)

        sizes = [spec.input_dim, *spec.shared_layers]
        for i in range(len(spec.shared_layers)):
            add(f"trunk{i}_w", _orthogonal(rng, sizes[i], sizes[i + 1],
                                           np.sqrt(2.0), self.dtype))
            add(f"trunk{i}_b", np.zeros(sizes[i + 1], dtype=self.dtype))
        add("policy_w", _orthogonal(rng, sizes[-1], spec.action_dim, 0.01, self.dtype))
        add("policy_b", np.zeros(spec.action_dim, dtype=self.dtype))
        vsizes = [sizes[-1], *spec.value_layers]
        for i in range(len(spec.value_layers)):
            add(f"value{i}_w", _orthogonal(rng, vsizes[i], vsizes[i + 1],
                                           np.sqrt(2.0), self.dtype))
            add(f"value{i}_b", np.zeros(vsizes[i + 1], dtype=self.dtype))
        add("value_head_w", _orthogonal(rng, vsizes[-1], 1, 1.0, self.dtype))
        add("value_head_b", np.zeros(1, dtype=self.dtype))
        add("log_std", np.zeros(spec.action_dim, dtype=self.dtype))

    # -- forward -------------------------------------------------------------

    @property
    def log_std(self) -> np.ndarray:
        return self.params["log_std"]

    @property
    def n_shared(self) -> int:
        return len(self.spec.shared_layers)

    @property
    def n_value(self) -> int:
        return len(self.spec.value_layers)

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(action_means, values) for a batch of observations."""
        means, values, _ = self.forward_cache(obs)
        return means, values

    def forward_cache(self, obs: np.ndarray):
        """Forward pass keeping activations for a later backward()."""
        x = np.asarray(obs, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(f"observation dim {x.shape} does not match "
                             f"input_dim {self.spec.input_dim}")
        p = self.params
        cache = {"x": x, "trunk_h": [], "value_h": []}
        h = x
        for i in range(self.n_shared):
            h = np.maximum(h @ p[f"trunk{i}_w"] + p[f"trunk{i}_b"], 0.0)
            cache["trunk_h"].append(h)
        means = h @ p["policy_w"] + p["policy_b"]
        hv = h
        for i in range(self.n_value):
            hv = np.maximum(hv @ p[f"value{i}_w"] + p[f"value{i}_b"], 0.0)
            cache["value_h"].append(hv)
        values = (hv @ p["value_head_w"] + p["value_head_b"]).ravel()
        if squeeze:
            return means[0], values[0], cache
        return means, values, cache

    # -- backward -----------------------------------------------------------

    def backward(self, cache, d_means: np.ndarray,
                 d_values: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its derivatives w.r.t. the
        forward outputs. log_std enters losses analytically, so its gradient
        is the caller's job; it is returned as zeros here for completeness."""
        p = self.params
        d_means = np.asarray(d_means, dtype=self.dtype)
        d_values = np.asarray(d_values, dtype=self.dtype)
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}
        trunk_h = cache["trunk_h"]
        value_h = cache["value_h"]
        h_top = trunk_h[-1]

        dv = d_values[:, None]
        hv_last = value_h[-1] if self.n_value else h_top
        grads["value_head_w"] = hv_last.T @ dv
        grads["value_head_b"] = dv.sum(axis=0)
        dh = dv @ p["value_head_w"].T
        for i in range(self.n_value - 1, -1, -1):
            dz = dh * (value_h[i] > 0)
            h_prev = value_h[i - 1] if i > 0 else h_top
            grads[f"value{i}_w"] = h_prev.T @ dz
            grads[f"value{i}_b"] = dz.sum(axis=0)
            dh = dz @ p[f"value{i}_w"].T
        d_top = dh

        grads["policy_w"] = h_top.T @ d_means
        grads["policy_b"] = d_means.sum(axis=0)
        d_top = d_top + d_means @ p["policy_w"].T

        dh = d_top
        for i in range(self.n_shared - 1, -1, -1):
            dz = dh * (trunk_h[i] > 0)
            h_prev = trunk_h[i - 1] if i > 0 else cache["x"]
            grads[f"trunk{i}_w"] = h_prev.T @ dz
            grads[f"trunk{i}_b"] = dz.sum(axis=0)
            dh = dz @ p[f"trunk{i}_w"].T
        return grads

    # -- parameter plumbing ----------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def get_flat(self, dtype=None) -> np.ndarray:
        dtype = self.dtype if dtype is None else dtype
        return np.concatenate([self.params[n].ravel().astype(dtype)
                               for n in self.param_names])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for n in self.param_names:
            p = self.params[n]
            p[...] = flat[i:i + p.size].reshape(p.shape).astype(self.dtype)
            i += p.size
        if i != flat.size:
            raise ValueError("flat parameter vector has the wrong size")

    def clone(self) -> "MLPPolicy":
        other = MLPPolicy(self.spec, seed=0, dtype=self.dtype)
        for n in self.param_names:
            other.params[n][...] = self.params[n]
        return other


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
# Layout: magic "TQLB" | uint32 LE header length | UTF-8 JSON header |
# float32 LE payload of all parameters in MLPPolicy weight-layout order.
# Header fields: format, config_hash, step, spec, param_names, param_shapes.

def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(policy: MLPPolicy, path, step: int = 0,
                    cfg_hash: str = "") -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": cfg_hash,
        "step": int(step),
        "spec": policy.spec.to_dict(),
        "param_names": policy.param_names,
        "param_shapes": [list(policy.params[n].shape) for n in policy.param_names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = policy.get_flat(dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload.astype("<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[MLPPolicy, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a torquelab checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format "
                             f"{header.get('format')}")
        payload = np.frombuffer(fh.read(), dtype="<f4")
    spec = PolicySpec.from_dict(header["spec"])
    policy = MLPPolicy(spec, seed=0, dtype=dtype)
    if payload.size != policy.n_params:
        raise ValueError(f"{path}: payload has {payload.size} values, "
                         f"expected {policy.n_params}")
    policy.set_flat(payload)
    return policy, header
