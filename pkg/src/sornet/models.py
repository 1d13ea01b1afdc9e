"""EDSR, pure self-organized and hybrid super-resolution networks.

Topology (all variants): head (3 -> C) -> residual blocks -> mid (C -> C)
-> add head output -> upsampler (x2 stages) -> tail (C -> 3).

Parameter names are canonical and shared with the checkpoint format::

    head.kernel / head.kernel{n}, head.bias
    block{i}.conv{1,2}.* (EDSR block) or block{i}.sol{1,2}.* (SOR block)
    mid.*, upsampler.stage{j}.*, tail.*
"""

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Tuple

from . import autograd as ag
from .layers import (LayerSpec, init_params, layer_forward,
                     res_block_forward, sor_block_forward, upsampler_forward)

ARCHS = ("edsr", "selfonn", "hybrid")


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "edsr"
    num_blocks: int = 16
    channels: int = 64
    q: int = 3
    scale: int = 2
    num_sor: int = 0
    sor_position: str = "last"
    upsampler_kind: str = "conv"

    @classmethod
    def edsr(cls, num_blocks=16, channels=64, scale=2):
        return cls("edsr", num_blocks, channels, 3, scale, 0, "last", "conv")

    @classmethod
    def selfonn(cls, num_blocks=8, channels=64, q=3, scale=2):
        return cls("selfonn", num_blocks, channels, q, scale, num_blocks, "last", "sol")

    @classmethod
    def hybrid(cls, num_blocks=16, channels=64, q=3, scale=2, num_sor=4,
               sor_position="last", upsampler_kind="sol"):
        return cls("hybrid", num_blocks, channels, q, scale, num_sor, sor_position,
                   upsampler_kind)

    def validate(self):
        problems = []
        if self.arch not in ARCHS:
            problems.append(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.num_blocks < 0:
            problems.append(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.channels < 1:
            problems.append(f"channels must be >= 1, got {self.channels}")
        if self.q < 1:
            problems.append(f"q must be >= 1, got {self.q}")
        if self.scale not in (2, 4):
            problems.append(f"scale must be 2 or 4, got {self.scale}")
        if self.sor_position not in ("first", "last"):
            problems.append(f"sor_position must be first or last, got {self.sor_position!r}")
        if self.upsampler_kind not in ("conv", "sol"):
            problems.append(f"upsampler_kind must be conv or sol, got {self.upsampler_kind!r}")
        if self.arch == "edsr":
            if self.num_sor != 0:
                problems.append(f"edsr has no SOR blocks, got num_sor={self.num_sor}")
            if self.upsampler_kind != "conv":
                problems.append("edsr requires upsampler_kind=conv")
        elif self.arch == "selfonn":
            if self.num_sor != self.num_blocks:
                problems.append(f"selfonn uses SOR blocks only: num_sor={self.num_sor} "
                                f"!= num_blocks={self.num_blocks}")
            if self.upsampler_kind != "sol":
                problems.append("selfonn requires upsampler_kind=sol")
        elif self.arch == "hybrid" and not 0 <= self.num_sor <= self.num_blocks:
            problems.append(f"num_sor={self.num_sor} outside 0..{self.num_blocks}")
        if problems:
            raise ValueError("invalid model spec: " + "; ".join(problems))
        return self

    def block_kinds(self):
        """'sor' or 'res' for each residual block, in order."""
        if self.arch == "edsr":
            return ["res"] * self.num_blocks
        if self.arch == "selfonn":
            return ["sor"] * self.num_blocks
        n_res = self.num_blocks - self.num_sor
        if self.sor_position == "first":
            return ["sor"] * self.num_sor + ["res"] * n_res
        return ["res"] * n_res + ["sor"] * self.num_sor

    def layer_specs(self) -> List[Tuple[str, LayerSpec]]:
        """(layer name, LayerSpec) for every layer in canonical order."""
        c, q = self.channels, self.q
        outer = "sol" if self.upsampler_kind == "sol" else "conv"
        head = "sol" if self.arch == "selfonn" else "conv"

        def mk(kind, c_in, c_out):
            return LayerSpec(kind, c_in, c_out, q if kind == "sol" else 1)

        out = [("head", mk(head, 3, c))]
        for i, kind in enumerate(self.block_kinds()):
            if kind == "sor":
                out += [(f"block{i}.sol1", mk("sol", c, c)), (f"block{i}.sol2", mk("sol", c, c))]
            else:
                out += [(f"block{i}.conv1", mk("conv", c, c)), (f"block{i}.conv2", mk("conv", c, c))]
        out.append(("mid", mk(outer, c, c)))
        for j in range(self.scale.bit_length() - 1):
            out.append((f"upsampler.stage{j}", mk(outer, c, 4 * c)))
        out.append(("tail", mk(outer, c, 3)))
        return out

    def to_dict(self) -> Dict[str, str]:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                kwargs[f.name] = int(d[f.name]) if f.type in (int, "int") else str(d[f.name])
        return cls(**kwargs)


class Model:
    """A built network: its spec plus named layer parameters."""

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = layers  # ordered {layer name: ConvParams | SolParams}

    def named_parameters(self):
        out = []
        for lname, params in self.layers.items():
            out += [(f"{lname}.{tname}", t) for tname, t in params.tensors()]
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def state_dict(self):
        return {name: t.data for name, t in self.named_parameters()}

    def num_parameters(self):
        return sum(t.size for t in self.parameters())

    def __call__(self, x):
        return model_forward(self, x)


def build_model(spec, rng):
    spec.validate()
    layers = {}
    for name, lspec in spec.layer_specs():
        params = init_params(lspec, rng)
        for tname, t in params.tensors():
            t.name = f"{name}.{tname}"
        layers[name] = params
    return Model(spec, layers)


def model_forward(m, x):
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"model expects an N x 3 x H x W input, got {x.shape}")
    L = m.layers
    head = layer_forward(x, L["head"])
    h = head
    for i, kind in enumerate(m.spec.block_kinds()):
        if kind == "sor":
            h = sor_block_forward(h, L[f"block{i}.sol1"], L[f"block{i}.sol2"])
        else:
            h = res_block_forward(h, L[f"block{i}.conv1"], L[f"block{i}.conv2"])
    h = ag.add(layer_forward(h, L["mid"]), head)
    n_stages = m.spec.scale.bit_length() - 1
    h = upsampler_forward(h, m.spec.scale, [L[f"upsampler.stage{j}"] for j in range(n_stages)])
    return layer_forward(h, L["tail"])


def count_params(spec):
    spec.validate()
    return sum(lspec.count() for _, lspec in spec.layer_specs())


@dataclass
class LoadReport:
    loaded: List[str]
    skipped: List[str]
    missing: List[str]  # skipped names the source does not have at all
    unused: List[str]  # source names the model does not have


def load_partial(m, tensors, skip_prefixes=()):
    """Copy named tensors into ``m``, leaving names under ``skip_prefixes`` untouched.

    ``tensors`` is a {name: array} mapping (e.g. ``Checkpoint.params``).
    Missing or mis-shaped non-skipped names raise.
    """
    def skipped(name):
        return any(name == p or name.startswith(p.rstrip(".") + ".") for p in skip_prefixes)

    loaded, skipped_names = [], []
    updates = []
    for name, t in m.named_parameters():
        if skipped(name):
            skipped_names.append(name)
            continue
        if name not in tensors:
            raise KeyError(f"checkpoint has no tensor {name!r}")
        src = tensors[name]
        if tuple(src.shape) != t.shape:
            raise ValueError(f"shape mismatch for {name!r}: checkpoint {tuple(src.shape)} "
                             f"vs model {t.shape}")
        updates.append((t, src))
        loaded.append(name)
    for t, src in updates:
        t.data = src.astype(t.dtype, copy=True)
    own = {name for name, _ in m.named_parameters()}
    missing = [name for name in skipped_names if name not in tensors]
    unused = sorted(name for name in tensors if name not in own)
    return m, LoadReport(loaded, skipped_names, missing, unused)
