"""Adaptive graph-convolution backbone, GRU context summarizer and classifier.

Internally feature maps are channel-last, ``(N, T, V, C)``, so every 1x1 map
is a plain ``matmul`` against a ``(C_in, C_out)`` weight.  Public entry points
accept and return the channel-first layouts ``(N, C, T, V[, M])`` and
``(N, D, T')``.

Block layout (the first BN is the model-level input normalization).  Maps
that feed straight into a BN carry no bias: BN cancels any constant shift,
so such a bias would have an identically zero gradient.

    input BN (per joint and channel)
    repeat per block:
        adaptive graph conv -> BN -> ReLU -> temporal conv (k=9, stride s) -> BN
        (+ residual: identity, or strided 1x1 conv -> BN when the shape changes)
        -> ReLU
    mean over joints and present persons            -> (N, D, T')
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor
from .rng import SplitMix64, derive_seed
from .skeleton import build_graph, get_topology

PRESETS = {
    "tiny": {"channels": [6, 6], "strides": [1, 2], "gru_hidden": 6},
    "desk": {"channels": [16, 16, 32, 64], "strides": [1, 1, 2, 2], "gru_hidden": 64},
    "full": {"channels": [64, 64, 64, 64, 128, 128, 128, 256, 256, 256],
             "strides": [1, 1, 1, 1, 2, 1, 1, 2, 1, 1], "gru_hidden": 256},
}


@dataclass
class ModelConfig:
    topology: str = "chain9"
    strategy: str = "spatial"
    num_classes: int = 4
    in_channels: int | None = None
    persons: int = 1
    channels: list = field(default_factory=lambda: [16, 16, 32, 64])
    strides: list = field(default_factory=lambda: [1, 1, 2, 2])
    gru_hidden: int = 64
    temporal_kernel: int = 9
    embed_ratio: int = 4
    data_graph: bool = True
    score: str = "bilinear"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.in_channels is None:
            self.in_channels = get_topology(self.topology).channels
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError("channels and strides must be nonempty and of equal length")
        if self.score not in ("bilinear", "dot"):
            raise ValueError(f"unknown score {self.score!r}")
        if self.score == "dot" and self.channels[-1] != self.gru_hidden:
            raise ValueError("dot score needs backbone width == gru_hidden")
        if self.temporal_kernel % 2 != 1:
            raise ValueError("temporal kernel must be odd")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}")
        return cls(**{**PRESETS[name], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def feature_width(self) -> int:
        return self.channels[-1]

    def embed_width(self, c_out: int) -> int:
        return max(1, c_out // self.embed_ratio)


# ---------------------------------------------------------------------------
# parameters

def _uniform(rng: SplitMix64, shape, bound: float) -> np.ndarray:
    n = int(np.prod(shape))
    return ((2.0 * rng.uniform(n) - 1.0) * bound).reshape(shape)


def init_params(cfg: ModelConfig) -> tuple[dict, dict]:
    """Fresh ``(params, buffers)``; deterministic in ``cfg.seed``."""
    topo = get_topology(cfg.topology)
    V = topo.joint_count
    K = build_graph(topo, cfg.strategy).shape[0]
    rng = SplitMix64(derive_seed(cfg.seed, "init"))
    p, b = {}, {}

    def bn(name, c):
        p[name + ".gamma"] = np.ones(c)
        p[name + ".beta"] = np.zeros(c)
        b[name + ".mean"] = np.zeros(c)
        b[name + ".var"] = np.ones(c)

    bn("data_bn", V * cfg.in_channels)
    c_in = cfg.in_channels
    for i, (c_out, stride) in enumerate(zip(cfg.channels, cfg.strides)):
        pre = f"block{i}"
        ce = cfg.embed_width(c_out)
        p[pre + ".gconv.W"] = _uniform(rng, (K, c_in, c_out), math.sqrt(6.0 / (K * c_in)))
        p[pre + ".gconv.B"] = np.zeros((K, V, V))
        if cfg.data_graph:
            p[pre + ".gconv.theta"] = _uniform(rng, (K, c_in, ce), 0.1 / math.sqrt(c_in))
            p[pre + ".gconv.phi"] = _uniform(rng, (K, c_in, ce), 0.1 / math.sqrt(c_in))
        bn(pre + ".bn1", c_out)
        fan = cfg.temporal_kernel * c_out
        p[pre + ".tconv.W"] = _uniform(rng, (fan, c_out), math.sqrt(6.0 / fan))
        bn(pre + ".bn2", c_out)
        if c_in != c_out or stride != 1:
            p[pre + ".res.W"] = _uniform(rng, (c_in, c_out), math.sqrt(6.0 / c_in))
            bn(pre + ".res_bn", c_out)
        c_in = c_out
    D, H = cfg.feature_width, cfg.gru_hidden
    g = 1.0 / math.sqrt(H)
    for gate in ("z", "r", "h"):
        p[f"gru.W_{gate}"] = _uniform(rng, (D, H), g)
        p[f"gru.U_{gate}"] = _uniform(rng, (H, H), g)
        p[f"gru.b_{gate}"] = _uniform(rng, (H,), g)
    p["fc.W"] = _uniform(rng, (H, cfg.num_classes), g)
    p["fc.b"] = _uniform(rng, (cfg.num_classes,), g)
    if cfg.score == "bilinear":
        p["pe.W"] = init_pe_matrix(rng, D, H)
    dt = cfg.np_dtype
    return ({k: v.astype(dt) for k, v in p.items()}, {k: v.astype(dt) for k, v in b.items()})


def init_pe_matrix(rng: SplitMix64, D: int, H: int) -> np.ndarray:
    """Score matrix scaled so unit-variance inputs give O(1) scores."""
    return _uniform(rng, (D, H), 1.0 / math.sqrt(D * H))


class PeGCNModel:
    """Configuration plus named parameter and running-statistic arrays."""

    def __init__(self, cfg: ModelConfig, params: dict | None = None, buffers: dict | None = None):
        self.cfg = cfg
        fresh_p, fresh_b = init_params(cfg)
        self.params = fresh_p if params is None else params
        self.buffers = fresh_b if buffers is None else buffers
        self._check(fresh_p, fresh_b)
        self.graph = build_graph(get_topology(cfg.topology), cfg.strategy).astype(cfg.np_dtype)

    def _check(self, ref_p, ref_b):
        for kind, got, ref in (("parameter", self.params, ref_p), ("buffer", self.buffers, ref_b)):
            if set(got) != set(ref):
                missing, extra = sorted(set(ref) - set(got)), sorted(set(got) - set(ref))
                raise ValueError(f"{kind} names do not match config (missing {missing}, extra {extra})")
            for k, v in got.items():
                if v.shape != ref[k].shape:
                    raise ValueError(f"{kind} {k!r}: shape {v.shape} does not match config {ref[k].shape}")

    def tensors(self) -> dict:
        return {k: Tensor(v) for k, v in self.params.items()}

    def copy(self) -> "PeGCNModel":
        return PeGCNModel(replace(self.cfg), {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def commit_stats(self, stats: dict) -> None:
        """Fold batch statistics recorded during a training forward into the running ones."""
        m = self.cfg.bn_momentum
        for name, (mu, var, count) in stats.items():
            unbiased = var * count / max(count - 1.0, 1.0)
            self.buffers[name + ".mean"] = ((1 - m) * self.buffers[name + ".mean"] + m * mu).astype(self.cfg.np_dtype)
            self.buffers[name + ".var"] = ((1 - m) * self.buffers[name + ".var"] + m * unbiased).astype(self.cfg.np_dtype)


# ---------------------------------------------------------------------------
# forward pieces

@dataclass
class _Ctx:
    params: dict
    buffers: dict
    training: bool
    stats: dict | None
    weights: np.ndarray | None = None


def _bn(ctx: _Ctx, name: str, x: Tensor, eps: float) -> Tensor:
    y, st = nx.batch_norm(x, ctx.params[name + ".gamma"], ctx.params[name + ".beta"],
                          ctx.buffers[name + ".mean"], ctx.buffers[name + ".var"],
                          ctx.training, eps, ctx.weights)
    if st is not None and ctx.stats is not None:
        ctx.stats.setdefault(name, st)
    return y


def data_graph(x: Tensor, theta: Tensor, phi: Tensor) -> Tensor:
    """Per-sample joint-similarity graph, rows softmax-normalized.

    ``x`` is ``(N, T, V, C)``; the embeddings see its time average.
    """
    xm = nx.mean(x, axis=1)  # (N, V, C)
    a = nx.matmul(xm, theta)
    b = nx.matmul(xm, phi)
    s = nx.matmul(a, nx.transpose(b, (0, 2, 1)))
    return nx.softmax(nx.scale(s, 1.0 / theta.shape[-1]), axis=-1)


def _gconv(x: Tensor, A: np.ndarray, W: Tensor, B: Tensor, theta: Tensor | None = None,
           phi: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Channel-last adaptive graph convolution, ``(N, T, V, C_in) -> (N, T, V, C_out)``."""
    N, T, V, C = x.shape
    K = A.shape[0]
    if A.shape[1:] != (V, V):
        raise ShapeError(f"adaptive_gconv: input has {V} joints, graph is {A.shape[1:]}")
    if W.shape[:2] != (K, C) or B.shape != (K, V, V):
        raise ShapeError(f"adaptive_gconv: W {W.shape} / B {B.shape} inconsistent with "
                         f"{K} partitions, {V} joints and {C} input channels")
    xv = nx.reshape(nx.transpose(x, (0, 2, 1, 3)), (N, V, T * C))
    aggs = []
    for k in range(K):
        adj = nx.add(nx.getitem(B, k), A[k])
        if theta is not None:
            adj = nx.add(data_graph(x, nx.getitem(theta, k), nx.getitem(phi, k)), adj)
        aggs.append(nx.reshape(nx.matmul(adj, xv), (N, V, T, C)))
    cat = nx.transpose(nx.concat(aggs, axis=-1), (0, 2, 1, 3))  # (N, T, V, K*C)
    out = nx.matmul(cat, nx.reshape(W, (K * C, W.shape[2])))
    return out if bias is None else nx.add(out, bias)


def adaptive_gconv(f_in, A, W, B, theta=None, phi=None, bias=None) -> Tensor:
    """Adaptive graph convolution on channel-first ``(N, C_in, T, V)`` input.

    ``out = sum_k W_k f_in (A_k + B_k + C_k)``: row ``v`` of each adjacency
    weights the joints that joint ``v`` aggregates from, ``W`` is
    ``(K, C_in, C_out)`` and ``C_k`` is the data graph built from ``theta``
    and ``phi`` (omitted when they are ``None``).
    """
    f_in = nx.as_tensor(f_in)
    if f_in.ndim != 4:
        raise ShapeError(f"adaptive_gconv: expected (N, C, T, V), got {f_in.shape}")
    A = np.asarray(A, dtype=f_in.dtype)
    ts = [None if t is None else nx.as_tensor(np.asarray(t, dtype=f_in.dtype) if not isinstance(t, Tensor) else t)
          for t in (W, B, theta, phi, bias)]
    y = _gconv(nx.transpose(f_in, (0, 2, 3, 1)), A, *ts)
    return nx.transpose(y, (0, 3, 1, 2))


def _layer_gconv(ctx: _Ctx, pre: str, x: Tensor, A: np.ndarray, use_data_graph: bool) -> Tensor:
    p = ctx.params
    theta = p.get(pre + ".theta") if use_data_graph else None
    phi = p.get(pre + ".phi") if use_data_graph else None
    return _gconv(x, A, p[pre + ".W"], p[pre + ".B"], theta, phi)


def adaptive_gconv_forward(model: PeGCNModel, block: int, f_in, params: dict | None = None,
                           use_data_graph: bool | None = None) -> Tensor:
    """The adaptive graph convolution of block ``block`` on ``(N, C_in, T, V)`` input.

    ``use_data_graph=False`` suppresses the per-sample graph ``C_k``.
    """
    if not isinstance(f_in, Tensor):
        f_in = Tensor(np.asarray(f_in, dtype=model.cfg.np_dtype))
    if f_in.ndim != 4:
        raise ShapeError(f"adaptive_gconv: expected (N, C, T, V), got {f_in.shape}")
    ctx = _Ctx(params or model.tensors(), model.buffers, False, None)
    if use_data_graph is None:
        use_data_graph = model.cfg.data_graph
    y = _layer_gconv(ctx, f"block{block}.gconv", nx.transpose(f_in, (0, 2, 3, 1)), model.graph, use_data_graph)
    return nx.transpose(y, (0, 3, 1, 2))


def _block(ctx: _Ctx, cfg: ModelConfig, i: int, x: Tensor, A, use_data_graph: bool) -> Tensor:
    pre = f"block{i}"
    stride = cfg.strides[i]
    kt = cfg.temporal_kernel
    h = _layer_gconv(ctx, pre + ".gconv", x, A, use_data_graph)
    h = nx.relu(_bn(ctx, pre + ".bn1", h, cfg.bn_eps))
    h = nx.matmul(nx.unfold_time(h, kt, stride, kt // 2), ctx.params[pre + ".tconv.W"])
    h = _bn(ctx, pre + ".bn2", h, cfg.bn_eps)
    if pre + ".res.W" in ctx.params:
        r = nx.getitem(x, (slice(None), slice(None, None, stride)))
        r = nx.matmul(r, ctx.params[pre + ".res.W"])
        r = _bn(ctx, pre + ".res_bn", r, cfg.bn_eps)
    else:
        r = x
    return nx.relu(nx.add(h, r))


def person_weights(batch: np.ndarray) -> np.ndarray:
    """``(N, M)`` mask of present persons; a sample with none present counts all."""
    present = np.any(batch != 0, axis=(1, 2, 3)).astype(batch.dtype)
    empty = present.sum(axis=1) == 0
    present[empty] = 1.0
    return present


def gcn_forward(model: PeGCNModel, batch, params: dict | None = None, training: bool = False,
                stats: dict | None = None, use_data_graph: bool | None = None) -> Tensor:
    """Latent sequence ``(N, D, T')`` for a ``(N, C, T, V, M)`` batch."""
    cfg = model.cfg
    x = np.asarray(batch, dtype=cfg.np_dtype)
    V = model.graph.shape[1]
    if x.ndim != 5 or x.shape[1] != cfg.in_channels or x.shape[3] != V:
        raise ShapeError(f"gcn_forward: expected (N, {cfg.in_channels}, T, {V}, M), got {x.shape}")
    N, C, T, _, M = x.shape
    w = person_weights(x)
    ctx = _Ctx(params or model.tensors(), model.buffers, training, stats, w.reshape(-1))
    if use_data_graph is None:
        use_data_graph = cfg.data_graph
    h = Tensor(x.transpose(0, 4, 2, 3, 1).reshape(N * M, T, V * C))
    h = nx.reshape(_bn(ctx, "data_bn", h, cfg.bn_eps), (N * M, T, V, C))
    for i in range(len(cfg.channels)):
        h = _block(ctx, cfg, i, h, model.graph, use_data_graph)
    _, T2, _, D = h.shape
    h = nx.mean(h, axis=2)  # (N*M, T', D)
    if M == 1:
        h = nx.reshape(h, (N, T2, D))
    else:
        pw = (w / w.sum(axis=1, keepdims=True)).reshape(N, M, 1)
        h = nx.transpose(nx.reshape(h, (N, M, T2 * D)), (0, 2, 1))
        h = nx.reshape(nx.matmul(h, pw), (N, T2, D))
    return nx.transpose(h, (0, 2, 1))


def pool_latent(seq: Tensor) -> Tensor:
    """Mean over the time axis of ``(N, D, T')``."""
    seq = nx.as_tensor(seq)
    if seq.ndim != 3 or seq.shape[2] == 0:
        raise ShapeError(f"pool_latent: expected nonempty (N, D, T'), got {seq.shape}")
    return nx.mean(seq, axis=2)


def gru_forward(params: dict, seq, h0=None) -> Tensor:
    """Final hidden state of a single-layer GRU run over ``(N, D, T')``."""
    seq = nx.as_tensor(seq)
    if seq.ndim != 3 or seq.shape[2] == 0:
        raise ShapeError(f"gru_forward: expected nonempty (N, D, T'), got {seq.shape}")
    W = {g: params[f"gru.W_{g}"] for g in "zrh"}
    U = {g: params[f"gru.U_{g}"] for g in "zrh"}
    b = {g: params[f"gru.b_{g}"] for g in "zrh"}
    N, D, T = seq.shape
    if W["z"].shape[0] != D:
        raise ShapeError(f"gru_forward: input width {D} but W_z is {W['z'].shape}")
    H = W["z"].shape[1]
    h = nx.as_tensor(np.zeros((N, H), dtype=seq.dtype) if h0 is None else h0)
    xs = nx.transpose(seq, (2, 0, 1))  # (T', N, D)
    for t in range(T):
        xt = nx.getitem(xs, t)
        z = nx.sigmoid(nx.add(nx.add(nx.matmul(xt, W["z"]), nx.matmul(h, U["z"])), b["z"]))
        r = nx.sigmoid(nx.add(nx.add(nx.matmul(xt, W["r"]), nx.matmul(h, U["r"])), b["r"]))
        cand = nx.tanh(nx.add(nx.add(nx.matmul(xt, W["h"]), nx.matmul(nx.mul(r, h), U["h"])), b["h"]))
        h = nx.add(h, nx.mul(z, nx.sub(cand, h)))  # (1 - z) h + z cand
    return h


def classify(params: dict, context) -> Tensor:
    context = nx.as_tensor(context)
    W = params["fc.W"]
    if context.ndim != 2 or context.shape[1] != W.shape[0]:
        raise ShapeError(f"classify: context {context.shape} does not match fc.W {W.shape}")
    return nx.add(nx.matmul(context, W), params["fc.b"])


def pe_matrix(model: PeGCNModel, params: dict) -> Tensor:
    if "pe.W" in params:
        return params["pe.W"]
    return Tensor(np.eye(model.cfg.feature_width, dtype=model.cfg.np_dtype))


def forward_train(model: PeGCNModel, clean, noisy, params: dict | None = None,
                  stats: tuple | None = None, training: bool = True):
    """``(pooled clean latent, noisy context, logits)``; both branches share the backbone.

    ``stats``, if given, is a pair of dicts receiving the clean and noisy
    branches' batch statistics.
    """
    clean, noisy = np.asarray(clean), np.asarray(noisy)
    if clean.shape != noisy.shape:
        raise ShapeError(f"forward_train: clean {clean.shape} and noisy {noisy.shape} batches differ")
    params = params or model.tensors()
    s_clean, s_noisy = stats if stats is not None else (None, None)
    alpha = pool_latent(gcn_forward(model, clean, params, training, s_clean))
    context = gru_forward(params, gcn_forward(model, noisy, params, training, s_noisy))
    return alpha, context, classify(params, context)


def forward_infer(model: PeGCNModel, batch, params: dict | None = None) -> Tensor:
    params = params or model.tensors()
    return classify(params, gru_forward(params, gcn_forward(model, batch, params, training=False)))


def predict_logits(model: PeGCNModel, batch: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Inference logits for a large batch, evaluated in chunks."""
    out = [forward_infer(model, batch[i:i + chunk]).data for i in range(0, len(batch), chunk)]
    return np.concatenate(out, axis=0)
