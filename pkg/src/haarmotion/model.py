"""The multi-resolution spectrum network and its prediction wrappers.

Forward pipeline (batch of windows stacked along the row axis):

    [DCT] -> fc_pre (channel axis) -> transpose -> m x (MR block + skip)
          -> transpose -> fc_post (channel axis) -> temporal head (T -> dt)
          -> [IDCT over dt]

Each MR block runs a ladder of resolution branches: the branch at level l
applies ``fc_per_level[l]`` FC blocks (square affine along the temporal axis,
then layer norm) at column width ``level_widths(T)[l]``; the output of the
FIRST FC block at level l is zoomed in to seed level l+1.  Every branch is
then zoomed back out to level 0 (cropping recorded pads), merged by
elementwise sum, and passed through one more FC block.

The network emits residuals; ``predict`` adds the last observed frame back,
so a freshly built network (zero fc_post, zero head bias) reproduces the
repeat-last-frame baseline exactly.

Units: clips carry millimeters, but the graph runs on last-frame-centered,
meter-scale values (see MM_PER_UNIT).  Raw mm activations leave the published
optimizer settings (Adam at 3e-4) three orders of magnitude too coarse to
converge; centering and rescaling fix the conditioning without touching any
external contract — outputs, losses and metrics all remain mm.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import transforms

CHECKPOINT_FORMAT = 1
MANIFEST_NAME = "manifest.txt"
PARAMS_NAME = "params.bin"

# The graph computes in meters; windows and predictions are millimeters.
MM_PER_UNIT = 1000.0


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; channels are always 3 coordinates per joint."""

    frames_in: int = 50
    frames_out: int = 10
    joints: int = 22
    num_blocks: int = 4
    levels: int = 3
    fc_per_level: tuple = (4, 2, 1)
    use_dct: bool = True
    use_ln: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fc_per_level", tuple(self.fc_per_level))
        if self.frames_in < 1 or self.frames_out < 1 or self.joints < 1:
            raise ValueError("frames_in, frames_out and joints must be >= 1")
        if self.num_blocks < 0:
            raise ValueError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(self.fc_per_level) != self.levels:
            raise ValueError(
                f"fc_per_level has {len(self.fc_per_level)} entries "
                f"for {self.levels} levels"
            )
        if any(n < 1 for n in self.fc_per_level):
            raise ValueError(f"fc_per_level must be positive: {self.fc_per_level}")

    @property
    def channels(self) -> int:
        return 3 * self.joints

    def branch_widths(self) -> list[int]:
        return transforms.level_widths(self.frames_in, self.levels)


class FCBlockParams:
    """Square affine along the temporal/resolution axis, then layer norm."""

    def __init__(self, affine: ad.AffineParams, ln: ad.LayerNormParams):
        if affine.out_dim != affine.in_dim:
            raise ValueError(f"FC block weight must be square, got {affine.weight.shape}")
        if ln.width != affine.out_dim:
            raise ValueError(
                f"layer-norm width {ln.width} != FC width {affine.out_dim}"
            )
        self.affine = affine
        self.ln = ln

    @property
    def width(self) -> int:
        return self.affine.out_dim


@dataclass
class MRHaarBlockParams:
    """Per-level FC chains plus the post-merge FC block at level 0."""

    levels: list  # list of lists of FCBlockParams, one chain per level
    merge: FCBlockParams


@dataclass
class Network:
    config: ModelConfig
    fc_pre: ad.AffineParams
    blocks: list  # of MRHaarBlockParams
    fc_post: ad.AffineParams
    temporal_head: ad.AffineParams
    _named: list = field(default_factory=list, repr=False)

    def named_parameters(self) -> list:
        """Fixed (name, Value) order; also the checkpoint serialization order."""
        return list(self._named)

    def parameters(self) -> list:
        return [v for _, v in self._named]


def _uniform_affine(rng, out_dim: int, in_dim: int) -> ad.AffineParams:
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return ad.AffineParams(w, b)


def _fresh_fc_block(rng, width: int) -> FCBlockParams:
    affine = _uniform_affine(rng, width, width)
    ln = ad.LayerNormParams(np.ones(width), np.zeros(width))
    return FCBlockParams(affine, ln)


def build(config: ModelConfig, seed: int | None = None) -> Network:
    """Construct a network with seeded parameters.

    All affines draw uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)]; layer norms
    start at gamma=1, beta=0.  Two exceptions keep the untrained network an
    exact repeat-last-frame predictor: fc_post is all zero, and the temporal
    head's bias is zero (a nonzero head bias would leak into the residual
    even when fc_post blocks the signal path).
    """
    if seed is not None:
        config = replace(config, seed=int(seed))
    rng = np.random.default_rng(config.seed)
    c = config.channels
    widths = config.branch_widths()

    fc_pre = _uniform_affine(rng, c, c)
    blocks = []
    for _ in range(config.num_blocks):
        chains = [
            [_fresh_fc_block(rng, widths[lvl]) for _ in range(config.fc_per_level[lvl])]
            for lvl in range(config.levels)
        ]
        blocks.append(MRHaarBlockParams(chains, _fresh_fc_block(rng, widths[0])))
    fc_post = ad.AffineParams(np.zeros((c, c)), np.zeros(c))
    head = _uniform_affine(rng, config.frames_out, config.frames_in)
    head.bias.data[:] = 0.0

    net = Network(config, fc_pre, blocks, fc_post, head)
    named = [("fc_pre.weight", fc_pre.weight), ("fc_pre.bias", fc_pre.bias)]

    def add_fc(prefix, fcb):
        named.append((prefix + ".weight", fcb.affine.weight))
        named.append((prefix + ".bias", fcb.affine.bias))
        named.append((prefix + ".gamma", fcb.ln.gamma))
        named.append((prefix + ".beta", fcb.ln.beta))

    for bi, bp in enumerate(blocks):
        for lvl, chain in enumerate(bp.levels):
            for fi, fcb in enumerate(chain):
                add_fc(f"block{bi}.level{lvl}.fc{fi}", fcb)
        add_fc(f"block{bi}.merge", bp.merge)
    named.append(("fc_post.weight", fc_post.weight))
    named.append(("fc_post.bias", fc_post.bias))
    named.append(("temporal_head.weight", head.weight))
    named.append(("temporal_head.bias", head.bias))
    net._named = named
    return net


def _fc_block(x: ad.Value, p: FCBlockParams, use_ln: bool) -> ad.Value:
    y = ad.affine(x, p.affine)
    return ad.layer_norm(y, p.ln) if use_ln else y


def _mr_block(h: ad.Value, bp: MRHaarBlockParams, config: ModelConfig, batch: int) -> ad.Value:
    widths = config.branch_widths()
    pads = [w % 2 for w in widths]  # pad added when zooming IN from level l

    branch_out = []
    cur = h
    for lvl in range(config.levels):
        y = cur
        first = None
        for i, fcb in enumerate(bp.levels[lvl]):
            y = _fc_block(y, fcb, config.use_ln)
            if i == 0:
                first = y
        branch_out.append(y)
        if lvl + 1 < config.levels:
            cur = ad.fixed_linear(first, "haar_in", blocks=batch)

    merged = branch_out[0]
    for lvl in range(1, config.levels):
        y = branch_out[lvl]
        for j in range(lvl, 0, -1):
            y = ad.fixed_linear(y, "haar_out", pad=pads[j - 1], blocks=batch)
        merged = ad.add(merged, y)
    return _fc_block(merged, bp.merge, config.use_ln)


def forward_value(net: Network, x: ad.Value, batch: int = 1) -> ad.Value:
    """Differentiable pipeline on `batch` windows stacked along the row axis.

    Input (batch*T) x C, output (batch*dt) x C of residuals relative to each
    window's last frame.
    """
    cfg = net.config
    t, c = cfg.frames_in, cfg.channels
    if x.data.shape != (batch * t, c):
        raise ValueError(
            f"expected {batch}x{t} frames with {c} channels, got {x.data.shape}"
        )
    h = x
    if cfg.use_dct:
        h = ad.fixed_linear(h, "dct", blocks=batch)
    h = ad.affine(h, net.fc_pre)
    h = ad.transpose(h, blocks=batch)  # (batch*C) x T
    for bp in net.blocks:
        h = ad.add(_mr_block(h, bp, cfg, batch), h)
    h = ad.transpose(h, blocks=batch)  # (batch*T) x C
    h = ad.affine(h, net.fc_post)
    h = ad.transpose(h, blocks=batch)  # (batch*C) x T
    h = ad.affine(h, net.temporal_head)  # (batch*C) x dt
    h = ad.transpose(h, blocks=batch)  # (batch*dt) x C
    if cfg.use_dct:
        h = ad.fixed_linear(h, "idct", blocks=batch)
    return h


def encode_windows(windows: np.ndarray) -> np.ndarray:
    """(batch, T, C) mm windows -> (batch*T, C) graph inputs: per-window
    last-frame-centered, rescaled to meters."""
    batch, t, c = windows.shape
    return ((windows - windows[:, -1:, :]) / MM_PER_UNIT).reshape(batch * t, c)


def forward(net: Network, window: np.ndarray) -> np.ndarray:
    """Residual matrix (dt x C, mm) for one T x C mm window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError(f"expected a 2D window, got shape {window.shape}")
    x = ad.Value(encode_windows(window[None]))
    return forward_value(net, x).data * MM_PER_UNIT


def predict(net: Network, window: np.ndarray) -> np.ndarray:
    """Absolute coordinates: residuals plus the window's last frame."""
    window = np.asarray(window, dtype=np.float64)
    return forward(net, window) + window[-1:]


def predict_batch(net: Network, windows: np.ndarray) -> np.ndarray:
    """Vectorized predict on a (batch, T, C) stack; returns (batch, dt, C)."""
    batch, t, c = windows.shape
    flat = ad.Value(encode_windows(windows))
    res = forward_value(net, flat, batch=batch).data * MM_PER_UNIT
    return res.reshape(batch, net.config.frames_out, c) + windows[:, -1:, :]


def rollout(net: Network, window: np.ndarray, horizon_frames: int) -> np.ndarray:
    """Auto-regressive prediction of `horizon_frames` frames (horizon x C)."""
    return rollout_batch(net, np.asarray(window, dtype=np.float64)[None], horizon_frames)[0]


def rollout_batch(net: Network, windows: np.ndarray, horizon_frames: int) -> np.ndarray:
    """Batched rollout on (batch, T, C) windows -> (batch, horizon, C)."""
    if horizon_frames < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon_frames}")
    t = net.config.frames_in
    buf = np.array(windows, dtype=np.float64)
    if buf.ndim != 3 or buf.shape[1] != t:
        raise ValueError(f"expected (batch, {t}, C) windows, got {buf.shape}")
    out: list[np.ndarray] = []
    produced = 0
    while produced < horizon_frames:
        step = predict_batch(net, buf[:, -t:, :])
        out.append(step)
        buf = np.concatenate((buf, step), axis=1)
        produced += step.shape[1]
    return np.concatenate(out, axis=1)[:, :horizon_frames, :]


def zero_velocity_baseline(window: np.ndarray, horizon_frames: int) -> np.ndarray:
    """Repeat the last observed frame for the whole horizon."""
    if horizon_frames < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon_frames}")
    window = np.asarray(window, dtype=np.float64)
    return np.repeat(window[-1:], horizon_frames, axis=0)


# ------------------------------------------------------------- checkpoints


class CheckpointError(Exception):
    """Malformed or inconsistent checkpoint contents."""


def _config_items(config: ModelConfig) -> list[tuple[str, str]]:
    return [
        ("frames_in", str(config.frames_in)),
        ("frames_out", str(config.frames_out)),
        ("joints", str(config.joints)),
        ("num_blocks", str(config.num_blocks)),
        ("levels", str(config.levels)),
        ("fc_per_level", ",".join(str(n) for n in config.fc_per_level)),
        ("use_dct", "true" if config.use_dct else "false"),
        ("use_ln", "true" if config.use_ln else "false"),
        ("seed", str(config.seed)),
    ]


def save_checkpoint(net: Network, directory: str, iteration: int = 0) -> None:
    """Write manifest.txt (config + parameter table) and params.bin
    (float64 little-endian concatenation in manifest order)."""
    os.makedirs(directory, exist_ok=True)
    lines = [f"format={CHECKPOINT_FORMAT}"]
    lines += [f"{k}={v}" for k, v in _config_items(net.config)]
    lines.append(f"iteration={int(iteration)}")
    payload = bytearray()
    for name, value in net.named_parameters():
        rows, cols = value.data.shape
        lines.append(f"param={name} {rows} {cols}")
        payload += value.data.astype("<f8").tobytes()
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(directory, PARAMS_NAME), "wb") as fh:
        fh.write(bytes(payload))


def load_checkpoint(directory: str) -> tuple[Network, int]:
    """Rebuild a network from a checkpoint directory; returns (net, iteration)."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    params_path = os.path.join(directory, PARAMS_NAME)
    if not os.path.isfile(manifest_path) or not os.path.isfile(params_path):
        raise CheckpointError(f"checkpoint incomplete under {directory!r}")

    fields: dict[str, str] = {}
    table: list[tuple[str, int, int]] = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            if not _:
                raise CheckpointError(f"manifest line without '=': {line!r}")
            if key == "param":
                try:
                    name, rows, cols = value.split()
                    table.append((name, int(rows), int(cols)))
                except ValueError:
                    raise CheckpointError(f"bad param line: {line!r}") from None
            else:
                fields[key] = value

    if fields.get("format") != str(CHECKPOINT_FORMAT):
        raise CheckpointError(f"unsupported format {fields.get('format')!r}")
    try:
        config = ModelConfig(
            frames_in=int(fields["frames_in"]),
            frames_out=int(fields["frames_out"]),
            joints=int(fields["joints"]),
            num_blocks=int(fields["num_blocks"]),
            levels=int(fields["levels"]),
            fc_per_level=tuple(int(n) for n in fields["fc_per_level"].split(",")),
            use_dct=fields["use_dct"] == "true",
            use_ln=fields["use_ln"] == "true",
            seed=int(fields["seed"]),
        )
        iteration = int(fields["iteration"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad manifest field: {exc}") from None

    net = build(config)
    named = net.named_parameters()
    if [(n, *v.data.shape) for n, v in named] != table:
        raise CheckpointError("manifest parameter table does not match the config")

    expected = sum(r * c for _, r, c in table) * 8
    blob = open(params_path, "rb").read()
    if len(blob) != expected:
        raise CheckpointError(
            f"params.bin holds {len(blob)} bytes, manifest promises {expected}"
        )
    offset = 0
    for _, value in named:
        n = value.data.size * 8
        flat = np.frombuffer(blob[offset : offset + n], dtype="<f8")
        value.data[...] = flat.reshape(value.data.shape)
        offset += n
    return net, iteration
