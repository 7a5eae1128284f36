"""Symmetric graph generator, connectivity discriminator, and checkpoints.

The generator stacks L layers of dual-channel masked attention (one channel
over directly connected region pairs, one over the rest) followed by a
two-GCN block with an affine output map; a learnable per-step embedding is
added as a bias at each stage. A sigmoid Gram head turns the final node
features into a symmetric blurred connectivity estimate, which is re-noised
to the target step. The discriminator is three GCN layers over one-hot node
features with a mean readout to a single raw score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorgrad as tg
from .errors import ConfigError, FormatError, ShapeError
from .symdiffusion import NoiseSchedule, renoise_prediction, sample_symmetric_noise
from .tensorgrad import AdamState, Tensor

Array = np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters shared by generator and discriminator.

    ``gcn_self_loop`` is the self-loop weight in the normalized adjacency.
    The generator convolves over noisy matrices at every denoising step; a
    heavy self-loop keeps node features distinguishable through the six
    graph convolutions of a forward pass even when the adjacency is mostly
    noise, which is what lets the conditioning series reach the output head.
    """

    n: int
    s: int
    model_dim: int = 64
    heads: int = 4
    layers: int = 3
    T: int = 100
    d: int = 10
    gcn_self_loop: float = 8.0

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.d < 1 or self.T % self.d != 0:
            raise ConfigError(f"skip step d={self.d} must divide T={self.T}")
        if self.gcn_self_loop <= 0:
            raise ConfigError("gcn_self_loop must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def n_embed(self) -> int:
        return self.T // self.d + 1


# neighbor partition ----------------------------------------------------------


@dataclass(frozen=True)
class NeighborPartition:
    """Disjoint direct/indirect masks covering all off-diagonal pairs."""

    direct: Array
    indirect: Array
    num_direct: Array
    num_indirect: Array


def partition_neighbors(a: Array) -> NeighborPartition:
    """Split pairs by the mean off-diagonal weight; ties go to indirect."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    off = ~np.eye(n, dtype=bool)
    tau = a[off].mean()
    direct = (a > tau) & off
    indirect = off & ~direct
    return NeighborPartition(
        direct=direct,
        indirect=indirect,
        num_direct=direct.sum(axis=1),
        num_indirect=indirect.sum(axis=1),
    )


# parameters -------------------------------------------------------------------


@dataclass
class AttentionParams:
    """Per-head projections; w_o holds the per-head blocks of the output map."""

    w_q: list[Tensor]
    w_k1: list[Tensor]
    w_k2: list[Tensor]
    w_v: list[Tensor]
    w_o: list[Tensor]


@dataclass
class GeneratorLayerParams:
    attn: AttentionParams
    w_gcn1: Tensor
    w_gcn2: Tensor
    w_lm: Tensor
    b_lm: Tensor


@dataclass
class GeneratorParams:
    input_proj: Tensor
    layers: list[GeneratorLayerParams]
    embed: list[Tensor]

    def tensors(self) -> dict[str, Tensor]:
        out = {"input_proj": self.input_proj}
        for li, layer in enumerate(self.layers):
            for hi in range(len(layer.attn.w_q)):
                out[f"layer{li}.head{hi}.w_q"] = layer.attn.w_q[hi]
                out[f"layer{li}.head{hi}.w_k1"] = layer.attn.w_k1[hi]
                out[f"layer{li}.head{hi}.w_k2"] = layer.attn.w_k2[hi]
                out[f"layer{li}.head{hi}.w_v"] = layer.attn.w_v[hi]
                out[f"layer{li}.head{hi}.w_o"] = layer.attn.w_o[hi]
            out[f"layer{li}.w_gcn1"] = layer.w_gcn1
            out[f"layer{li}.w_gcn2"] = layer.w_gcn2
            out[f"layer{li}.w_lm"] = layer.w_lm
            out[f"layer{li}.b_lm"] = layer.b_lm
        for k, e in enumerate(self.embed):
            out[f"embed{k}"] = e
        return out


@dataclass
class DiscriminatorParams:
    w_gcn1: Tensor
    w_gcn2: Tensor
    w_gcn3: Tensor
    w_out: Tensor
    b_out: Tensor
    embed: list[Tensor]

    def tensors(self) -> dict[str, Tensor]:
        out = {
            "w_gcn1": self.w_gcn1,
            "w_gcn2": self.w_gcn2,
            "w_gcn3": self.w_gcn3,
            "w_out": self.w_out,
            "b_out": self.b_out,
        }
        for k, e in enumerate(self.embed):
            out[f"embed{k}"] = e
        return out


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> Tensor:
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


EMBED_INIT_STD = 0.01
# Positive embedding offset: features ride above zero so the block ReLUs
# pass them through at initialization instead of halving the signal.
EMBED_INIT_MEAN = 1.0
IDENTITY_INIT_NOISE = 0.02
# Attention output projections start near (not at) zero: each layer is
# approximately the identity at first, but Q/K/V still receive gradients.
ATTN_OUTPUT_GAIN = 0.05
# Calibration target for the Gram head's off-diagonal mean at init. Exactly
# centered feature rows sum to zero, so their mean pairwise dot product is
# -mean(|f|^2)/(n-1): scaling the rows sets the mean to any negative value.
# Matching the connectivity background level removes the uniform head-on
# pressure from the reconstruction loss at the start of training.
GRAM_TARGET_MEAN = -2.0


def _near_identity(rng: np.random.Generator, m: int) -> Tensor:
    return Tensor(
        np.eye(m) + IDENTITY_INIT_NOISE * rng.standard_normal((m, m)),
        requires_grad=True,
    )


def init_generator(spec: ModelSpec, rng: np.random.Generator) -> GeneratorParams:
    """Signal-preserving initialization.

    The network starts as a similarity reader: attention output projections
    are zero (each attention layer is the identity through its residual),
    GCN and affine maps are near-identity, and the input projection has
    orthonormal columns, so the Gram head initially sees a faithful linear
    sketch of the ROI series. Started from generic random weights instead,
    the input-dependent path contributes only noise to the output and
    training collapses it in favor of a flat prediction, after which node
    features are indistinguishable and no pattern can form.
    """
    m, hd = spec.model_dim, spec.head_dim
    layers = []
    for _ in range(spec.layers):
        attn = AttentionParams(
            w_q=[_xavier(rng, m, hd) for _ in range(spec.heads)],
            w_k1=[_xavier(rng, m, hd) for _ in range(spec.heads)],
            w_k2=[_xavier(rng, m, hd) for _ in range(spec.heads)],
            w_v=[_xavier(rng, m, hd) for _ in range(spec.heads)],
            w_o=[
                _xavier(rng, hd, m, gain=ATTN_OUTPUT_GAIN)
                for _ in range(spec.heads)
            ],
        )
        layers.append(
            GeneratorLayerParams(
                attn=attn,
                w_gcn1=_near_identity(rng, m),
                w_gcn2=_near_identity(rng, m),
                w_lm=_near_identity(rng, m),
                b_lm=Tensor(np.zeros((1, m)), requires_grad=True),
            )
        )
    embed = [
        Tensor(
            EMBED_INIT_MEAN + EMBED_INIT_STD * rng.standard_normal((1, m)),
            requires_grad=True,
        )
        for _ in range(spec.n_embed)
    ]
    gauss = rng.standard_normal((spec.s, max(spec.s, m)))
    q, _ = np.linalg.qr(gauss)
    input_proj = Tensor(q[:, :m].copy(), requires_grad=True)
    return GeneratorParams(input_proj=input_proj, layers=layers, embed=embed)


def calibrate_generator(
    gen: "Generator", feats: Array, rng: np.random.Generator
) -> None:
    """One-shot scale calibration on a probe forward pass.

    Scales the input projection to unit feature spread, then rescales the
    last affine map so the Gram head's off-diagonal mean starts near
    GRAM_TARGET_MEAN (the background logit level) instead of saturating.
    Deterministic given the probe features and rng; called once before
    training, and the result is what checkpoints store.
    """
    spec = gen.spec
    x0 = feats @ gen.params.input_proj.data
    gen.params.input_proj.data = gen.params.input_proj.data / max(x0.std(), 1e-9)
    a_probe = sample_symmetric_noise(spec.n, rng)
    part = partition_neighbors(a_probe)
    e_t = gen.params.embed[spec.n_embed - 2]
    a_const = Tensor(a_probe)
    x = Tensor(feats) @ gen.params.input_proj
    for layer in gen.params.layers:
        x = dual_channel_attention(x, part, layer.attn)
        x = generator_block(x, a_const, layer, e_t, self_loop=spec.gcn_self_loop)
    f = x.data
    fc = f - f.mean(axis=0, keepdims=True)
    gram = fc @ fc.T
    off = gram[~np.eye(spec.n, dtype=bool)]
    scale = float(np.sqrt(abs(GRAM_TARGET_MEAN) / max(abs(off.mean()), 1e-9)))
    last = gen.params.layers[-1]
    last.w_lm.data = last.w_lm.data * scale
    last.b_lm.data = last.b_lm.data * scale


def init_discriminator(spec: ModelSpec, rng: np.random.Generator) -> DiscriminatorParams:
    m = spec.model_dim
    return DiscriminatorParams(
        w_gcn1=_xavier(rng, spec.n, m),
        w_gcn2=_xavier(rng, m, m),
        w_gcn3=_xavier(rng, m, m),
        w_out=_xavier(rng, m, 1),
        b_out=Tensor(np.zeros((1, 1)), requires_grad=True),
        embed=[
            Tensor(EMBED_INIT_STD * rng.standard_normal((1, m)), requires_grad=True)
            for _ in range(spec.n_embed)
        ],
    )


# forward passes ----------------------------------------------------------------


def dual_channel_attention(
    x: Tensor, part: NeighborPartition, p: AttentionParams
) -> Tensor:
    """Two-channel masked attention with residual connection.

    Per head the query/key logits of each channel are scaled row-wise by
    1/sqrt(max(count, 1)) of that row's channel members, masked-softmaxed
    over the channel mask, applied to the values, and the two channels are
    summed. Head outputs are mapped through their block of the output
    projection and summed (equivalent to concatenation followed by a single
    output matrix), then the input is added back.
    """
    n = x.data.shape[0]
    scale1 = np.repeat(
        1.0 / np.sqrt(np.maximum(part.num_direct, 1.0)).reshape(n, 1), n, axis=1
    )
    scale2 = np.repeat(
        1.0 / np.sqrt(np.maximum(part.num_indirect, 1.0)).reshape(n, 1), n, axis=1
    )
    out = None
    for h in range(len(p.w_q)):
        q = x @ p.w_q[h]
        k1 = x @ p.w_k1[h]
        k2 = x @ p.w_k2[h]
        v = x @ p.w_v[h]
        att1 = tg.masked_softmax((q @ tg.transpose(k1)) * scale1, part.direct)
        att2 = tg.masked_softmax((q @ tg.transpose(k2)) * scale2, part.indirect)
        head = (att1 + att2) @ v
        proj = head @ p.w_o[h]
        out = proj if out is None else out + proj
    return out + x


def gcn_layer(
    x: Tensor, a: Tensor | Array, w: Tensor, e_t: Tensor, self_loop: float = 1.0
) -> Tensor:
    """Normalized graph convolution: D^-1/2 (relu(A) + cI) D^-1/2 X W + e_t.

    Negative noisy weights are rectified before normalization; the self-loop
    weight c keeps every degree positive and controls how lazily features
    mix. The step embedding is broadcast onto every row.
    """
    a_t = a if isinstance(a, Tensor) else Tensor(a)
    n = a_t.data.shape[0]
    m = tg.relu(a_t) + self_loop * np.eye(n)
    inv = tg.rsqrt(tg.sum_rows(m))
    a_hat = m * (inv @ tg.transpose(inv))
    return tg.bias_add((a_hat @ x) @ w, e_t)


def generator_block(
    x: Tensor,
    a: Tensor | Array,
    layer: GeneratorLayerParams,
    e_t: Tensor,
    self_loop: float = 1.0,
) -> Tensor:
    """GCN -> ReLU -> GCN -> ReLU -> affine map, step-embedding bias at each stage."""
    h = tg.relu(gcn_layer(x, a, layer.w_gcn1, e_t, self_loop))
    h = tg.relu(gcn_layer(h, a, layer.w_gcn2, e_t, self_loop))
    return tg.bias_add(tg.bias_add(h @ layer.w_lm, layer.b_lm), e_t)


# Soft bound for the Gram logits. sigmoid'(x) underflows for large |x|,
# leaving saturated entries gradient-dead for every loss; they accumulate as
# permanent 0/1 artifacts. c*tanh(g/c) is the identity to within a few
# percent over the meaningful logit range and keeps every entry trainable.
GRAM_LOGIT_BOUND = 8.0


def gram_connectome(feats: Tensor) -> Tensor:
    """Sigmoid Gram head: features -> symmetric blurred connectivity.

    The Gram is computed on across-node-centered features. Centering removes
    the shared feature direction, which is otherwise a runaway mode: any
    common component c adds |c|^2 to every pairwise dot product, so a
    normalized optimizer drifts it until the sigmoid saturates at a constant
    matrix. Centered rows sum to zero, giving the off-diagonal a stable
    negative mean (background) with pattern on top. Logits are soft-bounded
    before the sigmoid (see GRAM_LOGIT_BOUND).

    The Gram matrix is explicitly symmetrized so the output is symmetric to
    the bit even under non-associative BLAS accumulation, and the diagonal
    (where sigmoid(|f_i|^2) - 1 would be negative) is forced to exactly 0.
    """
    fc = tg.center_rows(feats)
    g = fc @ tg.transpose(fc)
    g = (g + tg.transpose(g)) * 0.5
    g = tg.tanh(g * (1.0 / GRAM_LOGIT_BOUND)) * GRAM_LOGIT_BOUND
    n = g.data.shape[0]
    return tg.sigmoid(g) * (1.0 - np.eye(n))


class Generator:
    """Conditional denoiser mapping (noisy SC, ROI series, step) -> clean SC."""

    def __init__(self, spec: ModelSpec, params: GeneratorParams, sched: NoiseSchedule):
        self.spec = spec
        self.params = params
        self.sched = sched

    def _check_t(self, t: int) -> int:
        d = self.spec.d
        if t % d != 0 or not 0 <= t <= self.spec.T - d:
            raise IndexError(
                f"t={t} is not on the skip grid {{0, {d}, ..., {self.spec.T - d}}}"
            )
        return t // d

    def forward(
        self, a_prev: Array, feats: Array, t: int, rng: np.random.Generator
    ) -> tuple[Tensor, Tensor]:
        """Returns (predicted clean SC, its re-noised version at step t)."""
        idx = self._check_t(t)
        if feats.shape != (self.spec.n, self.spec.s):
            raise ShapeError(
                f"features shape {feats.shape} does not match model "
                f"({self.spec.n}, {self.spec.s})"
            )
        part = partition_neighbors(a_prev)
        e_t = self.params.embed[idx]
        a_const = Tensor(a_prev)
        x = Tensor(feats) @ self.params.input_proj
        for layer in self.params.layers:
            x = dual_channel_attention(x, part, layer.attn)
            x = generator_block(x, a_const, layer, e_t, self.spec.gcn_self_loop)
        a0_hat = gram_connectome(x)
        if t > 0:
            noise = sample_symmetric_noise(self.spec.n, rng)
            a_t = renoise_prediction(a0_hat, t, noise, self.sched)
        else:
            a_t = a0_hat
        return a0_hat, a_t

    def __call__(
        self, a_prev: Array, feats: Array, t: int, rng: np.random.Generator
    ) -> tuple[Array, Array]:
        """Array-in/array-out adapter for the sampling loop."""
        a0_hat, a_t = self.forward(a_prev, feats, t, rng)
        return a0_hat.data, a_t.data


class Discriminator:
    """GCN critic scoring how empirical a (noisy) connectivity matrix looks."""

    def __init__(self, spec: ModelSpec, params: DiscriminatorParams):
        self.spec = spec
        self.params = params
        self._onehot = Tensor(np.eye(spec.n))

    def forward(self, a: Tensor | Array, t: int) -> Tensor:
        d = self.spec.d
        if t % d != 0 or not 0 <= t <= self.spec.T:
            raise IndexError(
                f"t={t} is not on the skip grid {{0, {d}, ..., {self.spec.T}}}"
            )
        p = self.params
        e_t = p.embed[t // d]
        h = tg.relu(gcn_layer(self._onehot, a, p.w_gcn1, e_t))
        h = tg.relu(gcn_layer(h, a, p.w_gcn2, e_t))
        h = gcn_layer(h, a, p.w_gcn3, e_t)
        return (tg.mean_rows(h) @ p.w_out) + p.b_out


# checkpoint format --------------------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class CheckpointData:
    spec: ModelSpec
    gen: GeneratorParams
    disc: DiscriminatorParams
    adam_gen: AdamState
    adam_disc: AdamState
    epoch: int
    rng_state: dict | None
    config_hash: str
    config: dict | None


def _rng_state_to_json(state: dict | None) -> dict | None:
    if state is None:
        return None
    if state.get("bit_generator") != "PCG64":
        raise ConfigError(f"unsupported rng {state.get('bit_generator')!r}")
    return {
        "bit_generator": "PCG64",
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_state_from_json(obj: dict | None) -> dict | None:
    if obj is None:
        return None
    return {
        "bit_generator": "PCG64",
        "state": {"state": int(obj["state"]), "inc": int(obj["inc"])},
        "has_uint32": int(obj["has_uint32"]),
        "uinteger": int(obj["uinteger"]),
    }


def _adam_meta(state: AdamState) -> dict:
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
    }


def save_checkpoint(path, ckpt: CheckpointData) -> None:
    """Single file: one JSON header line, then CSV blocks in header order.

    Blocks cover generator and discriminator parameters followed by both
    optimizers' first and second moments; values carry 17 significant digits
    so a load/save round trip is bitwise exact. The write goes through a
    temp file and an atomic rename.
    """
    gen_t = ckpt.gen.tensors()
    disc_t = ckpt.disc.tensors()
    blocks: list[tuple[str, Array]] = []
    for name, t in gen_t.items():
        blocks.append((f"gen.{name}", t.data))
    for name, t in disc_t.items():
        blocks.append((f"disc.{name}", t.data))
    for role, state, params in (
        ("adam_gen", ckpt.adam_gen, gen_t),
        ("adam_disc", ckpt.adam_disc, disc_t),
    ):
        for name in params:
            blocks.append((f"{role}.m.{name}", state.m[name]))
        for name in params:
            blocks.append((f"{role}.v.{name}", state.v[name]))
    header = {
        "format": "f2s-checkpoint",
        "version": CHECKPOINT_VERSION,
        "epoch": ckpt.epoch,
        "config_hash": ckpt.config_hash,
        "config": ckpt.config,
        "model": {
            "n": ckpt.spec.n,
            "s": ckpt.spec.s,
            "model_dim": ckpt.spec.model_dim,
            "heads": ckpt.spec.heads,
            "layers": ckpt.spec.layers,
            "T": ckpt.spec.T,
            "d": ckpt.spec.d,
            "gcn_self_loop": ckpt.spec.gcn_self_loop,
        },
        "adam": {"gen": _adam_meta(ckpt.adam_gen), "disc": _adam_meta(ckpt.adam_disc)},
        "rng_state": _rng_state_to_json(ckpt.rng_state),
        "blocks": [
            {"name": name, "rows": arr.shape[0], "cols": arr.shape[1]}
            for name, arr in blocks
        ],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for _, arr in blocks:
            for row in arr:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    tmp.replace(path)


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad checkpoint header: {exc}")
        if header.get("format") != "f2s-checkpoint":
            raise FormatError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise FormatError(
                f"{path}: unsupported checkpoint version {header.get('version')}"
            )
        arrays: dict[str, Array] = {}
        for block in header["blocks"]:
            rows = []
            for _ in range(block["rows"]):
                line = fh.readline()
                if not line:
                    raise FormatError(f"{path}: truncated in block {block['name']}")
                rows.append([float(tok) for tok in line.rstrip("\n").split(",")])
            arr = np.asarray(rows, dtype=np.float64)
            if arr.shape != (block["rows"], block["cols"]):
                raise FormatError(
                    f"{path}: block {block['name']} has shape {arr.shape}, "
                    f"expected ({block['rows']}, {block['cols']})"
                )
            arrays[block["name"]] = arr
    m = header["model"]
    spec = ModelSpec(
        n=m["n"], s=m["s"], model_dim=m["model_dim"], heads=m["heads"],
        layers=m["layers"], T=m["T"], d=m["d"],
        gcn_self_loop=m.get("gcn_self_loop", 1.0),
    )
    rng0 = np.random.default_rng(0)
    gen = init_generator(spec, rng0)
    disc = init_discriminator(spec, rng0)
    for name, t in gen.tensors().items():
        t.data = arrays[f"gen.{name}"]
    for name, t in disc.tensors().items():
        t.data = arrays[f"disc.{name}"]
    adam = {}
    for role, params in (("gen", gen.tensors()), ("disc", disc.tensors())):
        meta = header["adam"][role]
        state = AdamState(
            lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"],
            eps=meta["eps"], step=meta["step"],
        )
        for name in params:
            state.m[name] = arrays[f"adam_{role}.m.{name}"]
            state.v[name] = arrays[f"adam_{role}.v.{name}"]
        adam[role] = state
    return CheckpointData(
        spec=spec,
        gen=gen,
        disc=disc,
        adam_gen=adam["gen"],
        adam_disc=adam["disc"],
        epoch=header["epoch"],
        rng_state=_rng_state_from_json(header.get("rng_state")),
        config_hash=header.get("config_hash", ""),
        config=header.get("config"),
    )
