"""Small three-branch policy/value network with hand-written backprop.

Histogram, semantic and stage feature blocks pass through separate ReLU
encoders, are concatenated into a ReLU trunk, and feed four linear heads:
ISO logits (24), shutter logits (19), stop logits (2) and a signed scalar
value.  Everything is plain numpy so gradients can be verified against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_ISO_ACTIONS = 24
N_SHUTTER_ACTIONS = 19
N_STOP_ACTIONS = 2


@dataclass(frozen=True)
class NetConfig:
    hist_dim: int
    semantic_dim: int
    stage_dim: int
    branch_widths: tuple[int, int] = (64, 32)
    trunk_widths: tuple[int, int] = (128, 64)

    @property
    def branch_names(self) -> tuple[str, ...]:
        return ("hist", "sem", "stage")

    def branch_input(self, name: str) -> int:
        return {"hist": self.hist_dim, "sem": self.semantic_dim,
                "stage": self.stage_dim}[name]


@dataclass
class PolicyNet:
    cfg: NetConfig
    layout: dict[str, tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        layout: dict[str, tuple[int, ...]] = {}
        for name in self.cfg.branch_names:
            dims = (self.cfg.branch_input(name), *self.cfg.branch_widths)
            for k in range(len(dims) - 1):
                layout[f"{name}.w{k}"] = (dims[k], dims[k + 1])
                layout[f"{name}.b{k}"] = (dims[k + 1],)
        trunk_in = self.cfg.branch_widths[-1] * len(self.cfg.branch_names)
        dims = (trunk_in, *self.cfg.trunk_widths)
        for k in range(len(dims) - 1):
            layout[f"trunk.w{k}"] = (dims[k], dims[k + 1])
            layout[f"trunk.b{k}"] = (dims[k + 1],)
        top = self.cfg.trunk_widths[-1]
        for head, width in (("iso", N_ISO_ACTIONS), ("shutter", N_SHUTTER_ACTIONS),
                            ("stop", N_STOP_ACTIONS), ("value", 1)):
            layout[f"{head}.w"] = (top, width)
            layout[f"{head}.b"] = (width,)
        self.layout = layout

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for name, shape in self.layout.items():
            if ".w" in name:
                fan_in = shape[0]
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            else:
                params[name] = np.zeros(shape)
        return params

    def _split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        h = self.cfg.hist_dim
        s = self.cfg.semantic_dim
        return {"hist": x[:, :h], "sem": x[:, h:h + s], "stage": x[:, h + s:]}

    def forward(self, params: dict[str, np.ndarray],
                x: np.ndarray) -> dict[str, np.ndarray]:
        """Forward pass caching every activation needed by backward()."""
        if x.ndim != 2 or x.shape[1] != (self.cfg.hist_dim + self.cfg.semantic_dim
                                         + self.cfg.stage_dim):
            raise ValueError(f"feature matrix has wrong shape {x.shape}")
        cache: dict[str, np.ndarray] = {"x": x}
        blocks = self._split(x)
        outs = []
        n_branch = len(self.cfg.branch_widths)
        for name in self.cfg.branch_names:
            h = blocks[name]
            cache[f"{name}.a-1"] = h
            for k in range(n_branch):
                z = h @ params[f"{name}.w{k}"] + params[f"{name}.b{k}"]
                h = np.maximum(z, 0.0)
                cache[f"{name}.z{k}"] = z
                cache[f"{name}.a{k}"] = h
            outs.append(h)
        t = np.concatenate(outs, axis=1)
        cache["trunk.a-1"] = t
        for k in range(len(self.cfg.trunk_widths)):
            z = t @ params[f"trunk.w{k}"] + params[f"trunk.b{k}"]
            t = np.maximum(z, 0.0)
            cache[f"trunk.z{k}"] = z
            cache[f"trunk.a{k}"] = t
        cache["top"] = t
        for head in ("iso", "shutter", "stop"):
            cache[f"{head}.logits"] = t @ params[f"{head}.w"] + params[f"{head}.b"]
        cache["value"] = (t @ params["value.w"] + params["value.b"])[:, 0]
        return cache

    def backward(self, params: dict[str, np.ndarray], cache: dict[str, np.ndarray],
                 dlogits: dict[str, np.ndarray],
                 dvalue: np.ndarray) -> dict[str, np.ndarray]:
        """Exact gradients of a scalar loss given head-logit/value gradients."""
        grads: dict[str, np.ndarray] = {}
        top = cache["top"]
        dtop = np.zeros_like(top)
        for head in ("iso", "shutter", "stop"):
            d = dlogits[head]
            grads[f"{head}.w"] = top.T @ d
            grads[f"{head}.b"] = d.sum(axis=0)
            dtop += d @ params[f"{head}.w"].T
        dv = dvalue[:, None]
        grads["value.w"] = top.T @ dv
        grads["value.b"] = dv.sum(axis=0)
        dtop += dv @ params["value.w"].T

        d = dtop
        for k in reversed(range(len(self.cfg.trunk_widths))):
            d = d * (cache[f"trunk.z{k}"] > 0.0)
            a_prev = cache[f"trunk.a{k-1}"] if k > 0 else cache["trunk.a-1"]
            grads[f"trunk.w{k}"] = a_prev.T @ d
            grads[f"trunk.b{k}"] = d.sum(axis=0)
            d = d @ params[f"trunk.w{k}"].T

        width = self.cfg.branch_widths[-1]
        n_branch = len(self.cfg.branch_widths)
        for idx, name in enumerate(self.cfg.branch_names):
            db = d[:, idx * width:(idx + 1) * width]
            for k in reversed(range(n_branch)):
                db = db * (cache[f"{name}.z{k}"] > 0.0)
                a_prev = cache[f"{name}.a{k-1}"]
                grads[f"{name}.w{k}"] = a_prev.T @ db
                grads[f"{name}.b{k}"] = db.sum(axis=0)
                if k > 0:
                    db = db @ params[f"{name}.w{k}"].T
        return grads


def masked_softmax(logits: np.ndarray,
                   allowed: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """(probs, safe log probs); disallowed actions get zero probability."""
    z = logits
    if allowed is not None:
        z = np.where(allowed[None, :], logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), 0.0)
    return probs, logp


def entropy_of(probs: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return -(probs * logp).sum(axis=1)
