"""Learnable fields and their composition.

Per category j: a template SDF T_j shared across instances, a hyper-network
mapping the instance code to the weights of a deformation/correction field
D_j, and D_j itself emitting a screw transform (r, t), a non-rigid offset,
a scalar SDF correction, and a feature vector from its penultimate layer.
A shared refinement net U consumes the concatenated per-category features
(fixed category order) and adds a residual to every category's SDF.

All coordinate networks use sine activations with the usual frequency scale
and first-layer-scaled initialization.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
import torch
from torch import nn


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    m: int = 2
    code_dim: int = 128
    feature_dim: int = 64
    template_hidden: tuple[int, int] = (128, 3)  # (width, depth)
    deform_hidden: tuple[int, int] = (128, 3)
    refine_hidden: tuple[int, int] = (128, 2)
    hyper_hidden: int = 256
    omega0: float = 30.0
    use_refinement: bool = True  # False = ablate the cross-category residual

    def __post_init__(self):
        for name in ("m", "code_dim", "feature_dim", "hyper_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        self.template_hidden = tuple(self.template_hidden)
        self.deform_hidden = tuple(self.deform_hidden)
        self.refine_hidden = tuple(self.refine_hidden)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "code_dim": self.code_dim, "feature_dim": self.feature_dim,
            "template_hidden": list(self.template_hidden),
            "deform_hidden": list(self.deform_hidden),
            "refine_hidden": list(self.refine_hidden),
            "hyper_hidden": self.hyper_hidden, "omega0": self.omega0,
            "use_refinement": self.use_refinement,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            m=d["m"], code_dim=d["code_dim"], feature_dim=d["feature_dim"],
            template_hidden=tuple(d["template_hidden"]),
            deform_hidden=tuple(d["deform_hidden"]),
            refine_hidden=tuple(d["refine_hidden"]),
            hyper_hidden=d["hyper_hidden"], omega0=d["omega0"],
            use_refinement=d.get("use_refinement", True),
        )


# --- screw motions ------------------------------------------------------------

def screw_apply(r: torch.Tensor, t: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Apply the SE(3) exponential of the screw (r; t) to points p.

    Rotation by the axis-angle closed form, translation through the screw
    translation operator; both switch to series coefficients below |r| = 1e-6
    so the map stays smooth (and autograd-safe) at the identity.
    """
    theta2 = (r * r).sum(dim=-1, keepdim=True)
    small = theta2 < 1e-12
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(theta2_safe)
    sin_t, cos_t = torch.sin(theta), torch.cos(theta)
    a = torch.where(small, 1.0 - theta2 / 6.0, sin_t / theta)  # sin(x)/x
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - cos_t) / theta2_safe)
    c = torch.where(small, 1.0 / 6.0 - theta2 / 120.0, (theta - sin_t) / (theta2_safe * theta))

    def k(v):  # [r]x v
        return torch.cross(r.expand_as(v), v, dim=-1)

    kp = k(p)
    rot = p + a * kp + b * k(kp)
    kt = k(t)
    trans = t + b * kt + c * k(kt)
    return rot + trans


def screw_matrix(r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """4x4 twist matrix whose matrix exponential realizes the same motion."""
    rx, ry, rz = r
    twist = np.array(
        [[0.0, -rz, ry, t[0]],
         [rz, 0.0, -rx, t[1]],
         [-ry, rx, 0.0, t[2]],
         [0.0, 0.0, 0.0, 0.0]]
    )
    return twist


# --- sine-activated coordinate networks ----------------------------------------

def _siren_init_(linear: nn.Linear, omega0: float, first: bool) -> None:
    fan_in = linear.in_features
    bound = 1.0 / fan_in if first else math.sqrt(6.0 / fan_in) / omega0
    with torch.no_grad():
        linear.weight.uniform_(-bound, bound)
        linear.bias.uniform_(-bound, bound)


class Siren(nn.Module):
    """MLP with sine activations on hidden layers and a linear head."""

    def __init__(self, in_features: int, hidden: int, depth: int, out_features: int,
                 omega0: float = 30.0):
        super().__init__()
        self.omega0 = omega0
        dims = [in_features] + [hidden] * depth
        self.hidden_layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(depth)
        )
        self.head = nn.Linear(dims[-1], out_features)
        for i, layer in enumerate(self.hidden_layers):
            _siren_init_(layer, omega0, first=(i == 0))
        _siren_init_(self.head, omega0, first=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.hidden_layers:
            x = torch.sin(self.omega0 * layer(x))
        return self.head(x)


class TemplateField(nn.Module):
    """Category-wide signed distance field in the canonical space."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        width, depth = config.template_hidden
        self.net = Siren(3, width, depth, 1, config.omega0)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        return self.net(p).squeeze(-1)


class RefinementField(nn.Module):
    """Cross-category residual head over concatenated per-category features."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        width, depth = config.refine_hidden
        self.net = Siren(config.feature_dim * config.m, width, depth, config.m, config.omega0)

    def forward(self, gammas: torch.Tensor) -> torch.Tensor:
        """gammas: (..., m, feature_dim), concatenated in category order."""
        flat = gammas.reshape(*gammas.shape[:-2], -1)
        return self.net(flat)


class DeformationSpec:
    """Architecture of D_j, evaluated functionally with hyper-generated weights.

    Layers: 3 -> width x depth (sine) -> feature_dim (sine, the penultimate
    activation fed to the refinement net) -> 10 (linear: r, t, offset, ds).
    """

    def __init__(self, config: ModelConfig):
        width, depth = config.deform_hidden
        dims = [3] + [width] * depth + [config.feature_dim, 10]
        self.shapes: list[tuple[str, tuple[int, ...]]] = []
        for i in range(len(dims) - 1):
            self.shapes.append((f"w{i}", (dims[i + 1], dims[i])))
            self.shapes.append((f"b{i}", (dims[i + 1],)))
        self.n_layers = len(dims) - 1
        self.omega0 = config.omega0
        self.feature_dim = config.feature_dim

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes)

    def split(self, theta: torch.Tensor) -> list[torch.Tensor]:
        out, offset = [], 0
        for _, shape in self.shapes:
            n = int(np.prod(shape))
            out.append(theta[offset : offset + n].reshape(shape))
            offset += n
        return out

    def forward(self, theta: torch.Tensor, p: torch.Tensor):
        """Returns (r, t, delta_p, delta_s, gamma); gamma is post-activation."""
        params = self.split(theta)
        x = p
        for i in range(self.n_layers - 1):
            w, b = params[2 * i], params[2 * i + 1]
            x = torch.sin(self.omega0 * (x @ w.T + b))
        gamma = x
        w, b = params[-2], params[-1]
        out = x @ w.T + b
        return out[..., 0:3], out[..., 3:6], out[..., 6:9], out[..., 9], gamma


class HyperNetwork(nn.Module):
    """Generates every parameter tensor of D_j from a per-instance code.

    One two-layer ReLU MLP per target tensor; the output layers start small
    (scaled-down Kaiming) so a fresh model begins near zero deformation.
    """

    def __init__(self, config: ModelConfig, spec: DeformationSpec):
        super().__init__()
        self.spec = spec
        self.nets = nn.ModuleList()
        for _, shape in spec.shapes:
            head = nn.Linear(config.hyper_hidden, int(np.prod(shape)))
            nn.init.kaiming_normal_(head.weight, a=0.0, nonlinearity="relu", mode="fan_in")
            with torch.no_grad():
                head.weight.mul_(1e-2)
                fan_in = shape[-1] if len(shape) > 1 else max(shape[0], 1)
                head.bias.uniform_(-1.0 / fan_in, 1.0 / fan_in)
            self.nets.append(
                nn.Sequential(nn.Linear(config.code_dim, config.hyper_hidden), nn.ReLU(), head)
            )

    def forward(self, code: torch.Tensor) -> torch.Tensor:
        if code.shape[-1] != self.nets[0][0].in_features:
            raise ConfigError(
                f"code dimension {code.shape[-1]} != {self.nets[0][0].in_features}"
            )
        return torch.cat([net(code) for net in self.nets], dim=-1)


class ModelState(nn.Module):
    """All trainable parameters: m templates, m hyper-nets, one refinement net."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.spec = DeformationSpec(config)
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            self.templates = nn.ModuleList(TemplateField(config) for _ in range(config.m))
            self.hypernets = nn.ModuleList(
                HyperNetwork(config, self.spec) for _ in range(config.m)
            )
            self.refine = RefinementField(config)
        finally:
            torch.random.set_rng_state(gen_state)
        self.centroid_prior: np.ndarray | None = None  # (m, 3), set by training
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def parameter_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()


@dataclass
class ForwardResult:
    """Everything the losses need, with autograd graph attached."""

    s: torch.Tensor  # (n, m) refined SDF vector
    s_prime: torch.Tensor  # (n, m) pre-refinement
    delta_s_refine: torch.Tensor  # (n, m)
    p_def: torch.Tensor  # (n, m, 3) deformed (template-space) coordinates
    r: torch.Tensor  # (n, m, 3)
    t: torch.Tensor  # (n, m, 3)
    delta_p: torch.Tensor  # (n, m, 3)
    delta_s: torch.Tensor  # (n, m)
    gamma: torch.Tensor  # (n, m, feature_dim)
    points: torch.Tensor  # (n, 3) the input leaf (requires_grad when asked)
    # original per-category graph nodes (the stacked copies above are not
    # ancestors of s, so gradient queries need these)
    p_def_cats: list = dataclass_field(default_factory=list)
    s_prime_cats: list = dataclass_field(default_factory=list)


def subfunction_forward(
    state: ModelState, j: int, code: torch.Tensor, points: torch.Tensor,
    zero_deformation: bool = False,
):
    """One category's field: s' = T_j(e^S p + dp) + ds, plus the feature vector."""
    theta = state.hypernets[j](code)
    r, t, dp, ds, gamma = state.spec.forward(theta, points)
    if zero_deformation:
        r, t, dp, ds = (torch.zeros_like(r), torch.zeros_like(t),
                        torch.zeros_like(dp), torch.zeros_like(ds))
    p_def = screw_apply(r, t, points) + dp
    s_prime = state.templates[j](p_def) + ds
    return s_prime, gamma, p_def, (r, t, dp, ds)


def model_forward(
    state: ModelState,
    codes: torch.Tensor,
    points: torch.Tensor,
    zero_deformation: bool = False,
) -> ForwardResult:
    """Full forward map for one instance: (m codes, n points) -> n x m SDFs."""
    if codes.shape != (state.config.m, state.config.code_dim):
        raise ConfigError(
            f"codes must be ({state.config.m}, {state.config.code_dim}), got {tuple(codes.shape)}"
        )
    per_cat = [
        subfunction_forward(state, j, codes[j], points, zero_deformation)
        for j in range(state.config.m)
    ]
    s_prime = torch.stack([pc[0] for pc in per_cat], dim=-1)
    gamma = torch.stack([pc[1] for pc in per_cat], dim=-2)
    p_def = torch.stack([pc[2] for pc in per_cat], dim=-2)
    r = torch.stack([pc[3][0] for pc in per_cat], dim=-2)
    t = torch.stack([pc[3][1] for pc in per_cat], dim=-2)
    dp = torch.stack([pc[3][2] for pc in per_cat], dim=-2)
    ds = torch.stack([pc[3][3] for pc in per_cat], dim=-1)
    if state.config.use_refinement:
        delta_s_refine = state.refine(gamma)
    else:
        delta_s_refine = torch.zeros_like(s_prime)
    return ForwardResult(
        s=s_prime + delta_s_refine,
        s_prime=s_prime,
        delta_s_refine=delta_s_refine,
        p_def=p_def,
        r=r, t=t, delta_p=dp, delta_s=ds,
        gamma=gamma,
        points=points,
        p_def_cats=[pc[2] for pc in per_cat],
        s_prime_cats=[pc[0] for pc in per_cat],
    )


# --- checkpoint container -------------------------------------------------------

CKPT_MAGIC = b"MSCK1\x00"
CKPT_VERSION = 1


def save_checkpoint(
    state: ModelState, path: str | Path, codes: dict[str, np.ndarray] | None = None,
    extra: dict | None = None,
) -> None:
    """Single-file checkpoint: config JSON + named float32 parameter blocks."""
    meta = {
        "format_version": CKPT_VERSION,
        "config": state.config.to_dict(),
        "centroid_prior": None if state.centroid_prior is None
        else np.asarray(state.centroid_prior).tolist(),
        "code_ids": sorted(codes) if codes else [],
        "extra": extra or {},
    }
    blocks: list[tuple[str, np.ndarray]] = [
        (name, p.detach().cpu().numpy().astype(np.float32))
        for name, p in sorted(state.named_parameters())
    ]
    for iid in meta["code_ids"]:
        blocks.append((f"codes/{iid}", np.asarray(codes[iid], dtype=np.float32)))
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    payload = json.dumps(meta).encode()
    buf.write(struct.pack("<IQ", CKPT_VERSION, len(payload)))
    buf.write(payload)
    for name, arr in blocks:
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(
    path: str | Path, expect_config: ModelConfig | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[ModelState, dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:6] != CKPT_MAGIC:
        raise ConfigError(f"not a checkpoint file: bad magic {data[:6]!r}")
    version, jlen = struct.unpack_from("<IQ", data, 6)
    if version != CKPT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    offset = 6 + struct.calcsize("<IQ")
    meta = json.loads(data[offset : offset + jlen].decode())
    offset += jlen
    config = ModelConfig.from_dict(meta["config"])
    if expect_config is not None and config.to_dict() != expect_config.to_dict():
        raise ConfigError(
            f"checkpoint config {config.to_dict()} does not match expected "
            f"{expect_config.to_dict()}"
        )
    blocks: dict[str, np.ndarray] = {}
    while offset < len(data):
        (nlen,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + nlen].decode()
        offset += nlen
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, offset)
        offset += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += 4 * count
    state = ModelState(config, dtype=dtype)
    tensors = {
        name: torch.as_tensor(arr, dtype=dtype)
        for name, arr in blocks.items()
        if not name.startswith("codes/")
    }
    missing = state.load_state_dict(tensors, strict=True)
    if state.config.m and meta.get("centroid_prior") is not None:
        state.centroid_prior = np.asarray(meta["centroid_prior"], dtype=np.float64)
    codes = {
        name[len("codes/"):]: blocks[name]
        for name in blocks
        if name.startswith("codes/")
    }
    return state, codes, meta.get("extra", {})
