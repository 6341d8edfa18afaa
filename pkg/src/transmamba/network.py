"""Four-level dual-branch encoder-decoder assembly.

Each level runs a stack of spectral Transformer blocks and a Mamba layer on
the same input and fuses the two branch outputs by concatenation plus a
point-wise convolution.  Levels are bridged by pixel-unshuffle (down) and
pixel-shuffle (up) transitions; same-level encoder features reach the
decoder through concat + 1x1 skip fusion.  The network predicts a residual
added to the rainy input.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .attention import SpectralTransformerBlock
from .mamba import MambaLayer
from .module import Conv2d, Module, ModuleList
from .ops import pixel_shuffle, pixel_unshuffle, reflect_pad2d
from .rng import Rng
from .spectral import MeshIndex, build_mesh_index
from .tensor import ShapeError, Tensor, as_tensor, clamp, concat, no_grad, reshape, slice_axis, stack


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the desk-scale setting."""

    base_channels: int = 8
    sdtb_counts: tuple = (1, 3, 4, 4)
    cbsm_counts: tuple = (1, 3, 4, 4)
    heads: tuple = (1, 2, 4, 8)
    bands: int = 2
    seff_ratio: float = 2.667
    seff_weight_size: int = 48
    ssm_state_dim: int = 8
    flip_axis: str = "channel"
    scale_mode: str = "heads"
    direction_order: tuple = ("forward", "backward")
    levels: int = 4

    def __post_init__(self):
        if self.levels != len(self.sdtb_counts) or self.levels != len(self.cbsm_counts) \
                or self.levels != len(self.heads):
            raise ValueError("sdtb_counts, cbsm_counts and heads must have one entry per level")
        for i, c in enumerate(self.level_channels()):
            if (2 * c * self.bands) % self.heads[i]:
                raise ValueError(
                    f"level {i + 1}: heads={self.heads[i]} must divide 2*C*b = {2 * c * self.bands}")

    def level_channels(self) -> list[int]:
        return [self.base_channels * (1 << i) for i in range(self.levels)]

    def spatial_divisor(self) -> int:
        return 1 << (self.levels - 1)

    def validate_spatial(self, H: int, W: int):
        d = self.spatial_divisor()
        if H % d or W % d:
            raise ShapeError(f"input {H}x{W} must be divisible by {d} for {self.levels} levels")
        for i in range(self.levels):
            hw = (H >> i) * (W >> i)
            if hw % self.bands:
                raise ShapeError(
                    f"level {i + 1} plane has {hw} positions, not divisible by b={self.bands}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("sdtb_counts", "cbsm_counts", "heads", "direction_order"):
            if key in d:
                d[key] = tuple(d[key])
        return ModelConfig(**d)


PAPER_PRESET = ModelConfig(base_channels=36, ssm_state_dim=16, seff_weight_size=48)
# smaller spectral weight planes and SSM state keep the desk run light
DESK_PRESET = ModelConfig(base_channels=8, ssm_state_dim=8, seff_weight_size=16)


class DualBranchLevel(Module):
    def __init__(self, channels: int, sdtbs: int, cbsms: int, heads: int,
                 cfg: ModelConfig, rng: Rng):
        self.sdtbs = ModuleList([
            SpectralTransformerBlock(channels, heads, cfg.bands, rng,
                                     cfg.seff_ratio, cfg.seff_weight_size, cfg.scale_mode)
            for _ in range(sdtbs)
        ])
        self.mamba = MambaLayer(channels, cbsms, cfg.ssm_state_dim, rng,
                                cfg.direction_order, cfg.flip_axis)
        self.fuse = Conv2d(2 * channels, channels, 1, rng)

    def forward(self, x, mesh: MeshIndex):
        a = x
        for blk in self.sdtbs:
            a = blk(a, mesh)
        m = self.mamba(x)
        return self.fuse(concat([a, m], axis=0))


class Downsample(Module):
    """pixel-unshuffle(2) then 1x1 conv folding 4C down to 2C."""

    def __init__(self, channels: int, rng: Rng):
        self.conv = Conv2d(4 * channels, 2 * channels, 1, rng)

    def forward(self, x):
        return self.conv(pixel_unshuffle(x, 2))


class Upsample(Module):
    """1x1 conv doubling channels then pixel-shuffle(2), mirroring Downsample."""

    def __init__(self, channels: int, rng: Rng):
        self.conv = Conv2d(channels, 2 * channels, 1, rng)

    def forward(self, x):
        return pixel_shuffle(self.conv(x), 2)


class TransMamba(Module):
    """Dual-branch spectral-Transformer / Mamba deraining network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = Rng(seed)
        chans = cfg.level_channels()
        self.embed = Conv2d(3, chans[0], 3, rng)
        self.enc_levels = ModuleList([
            DualBranchLevel(chans[i], cfg.sdtb_counts[i], cfg.cbsm_counts[i],
                            cfg.heads[i], cfg, rng)
            for i in range(cfg.levels - 1)
        ])
        self.downs = ModuleList([Downsample(chans[i], rng) for i in range(cfg.levels - 1)])
        last = cfg.levels - 1
        self.bottleneck = DualBranchLevel(chans[last], cfg.sdtb_counts[last],
                                          cfg.cbsm_counts[last], cfg.heads[last], cfg, rng)
        self.ups = ModuleList([Upsample(chans[i + 1], rng) for i in reversed(range(cfg.levels - 1))])
        self.skip_fuse = ModuleList([
            Conv2d(2 * chans[i], chans[i], 1, rng) for i in reversed(range(cfg.levels - 1))
        ])
        self.dec_levels = ModuleList([
            DualBranchLevel(chans[i], cfg.sdtb_counts[i], cfg.cbsm_counts[i],
                            cfg.heads[i], cfg, rng)
            for i in reversed(range(cfg.levels - 1))
        ])
        # small output gain keeps the start near the identity mapping
        self.out_conv = Conv2d(chans[0], 3, 3, rng, gain=0.1)
        self._mesh_cache: dict[tuple[int, int], MeshIndex] = {}

    def _mesh(self, H: int, W: int) -> MeshIndex:
        key = (H, W)
        if key not in self._mesh_cache:
            self._mesh_cache[key] = build_mesh_index(H, W, self.cfg.bands)
        return self._mesh_cache[key]

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 4:
            outs = [self._forward_single(reshape(slice_axis(x, 0, i, i + 1), x.shape[1:]))
                    for i in range(x.shape[0])]
            return stack(outs, axis=0)
        return self._forward_single(x)

    def _forward_single(self, x) -> Tensor:
        if x.ndim != 3 or x.shape[0] != 3:
            raise ShapeError(f"expected a (3, H, W) image, got {x.shape}")
        _, H, W = x.shape
        self.cfg.validate_spatial(H, W)
        f = self.embed(x)
        skips = []
        h, w = H, W
        for level, down in zip(self.enc_levels, self.downs):
            f = level(f, self._mesh(h, w))
            skips.append(f)
            f = down(f)
            h, w = h // 2, w // 2
        f = self.bottleneck(f, self._mesh(h, w))
        for up, fuse, level, skip in zip(self.ups, self.skip_fuse, self.dec_levels,
                                         reversed(skips)):
            f = up(f)
            h, w = h * 2, w * 2
            f = fuse(concat([f, skip], axis=0))
            f = level(f, self._mesh(h, w))
        return x + self.out_conv(f)

    # ------------------------------------------------------------------
    def padded_size(self, H: int, W: int) -> tuple[int, int]:
        """Smallest valid (H', W') >= (H, W) for this configuration."""
        d = self.cfg.spatial_divisor()
        base_h = -(-H // d) * d
        base_w = -(-W // d) * d
        for total in range(0, 33):
            for a in range(total + 1):
                h2, w2 = base_h + a * d, base_w + (total - a) * d
                try:
                    self.cfg.validate_spatial(h2, w2)
                except ShapeError:
                    continue
                return h2, w2
        raise ShapeError(f"no valid padded size found near {H}x{W} for b={self.cfg.bands}")

    def derain(self, img) -> Tensor:
        """Reflect-pad to a valid size, forward, crop back, clamp to [0, 1]."""
        img = as_tensor(img)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ShapeError(f"derain expects a (3, H, W) image, got {img.shape}")
        _, H, W = img.shape
        if H < 16 or W < 16:
            raise ShapeError(f"image {H}x{W} is smaller than the 16x16 minimum")
        H2, W2 = self.padded_size(H, W)
        with no_grad():
            x = reflect_pad2d(img, (0, H2 - H, 0, W2 - W)) if (H2, W2) != (H, W) else img
            y = self._forward_single(x)
            y = slice_axis(slice_axis(y, 1, 0, H), 2, 0, W)
            return clamp(y, 0.0, 1.0)


# ----------------------------------------------------------------------
# analytic parameter inventory (used by describe; kept in sync with the
# constructors by a unit test)
# ----------------------------------------------------------------------
def _conv_shapes(cin, cout, k, groups=1, bias=True):
    yield (cout, cin // groups, k, k)
    if bias:
        yield (cout,)


def _sdtb_shapes(C, cfg: ModelConfig):
    h = int(cfg.seff_ratio * C)
    s = cfg.seff_weight_size
    yield (C,)
    yield (C,)
    yield from _conv_shapes(C, 3 * C, 1)
    yield from _conv_shapes(3 * C, 3 * C, 3, groups=3 * C)
    yield from _conv_shapes(C, C, 1)
    yield (C,)
    yield (C,)
    yield from _conv_shapes(C, 2 * h, 1)
    yield from _conv_shapes(h, h, 3, groups=h)
    yield from _conv_shapes(h, h, 3, groups=h)
    for _ in range(4):
        yield (h, s, s)
    yield (h,)
    yield (h,)
    yield from _conv_shapes(h, C, 1)


def _cbsm_shapes(C, cfg: ModelConfig):
    N = cfg.ssm_state_dim
    hid = max(1, C // 4)
    for _ in range(2):  # two scan directions
        yield from _conv_shapes(C, 2 * C, 1)
        yield from _conv_shapes(C, C, 5, groups=C)
        yield from _conv_shapes(C, C, 5, groups=C)
        yield (C, 1, 3)
        yield (C,)
        yield from _conv_shapes(2, 1, 7)
        yield from _conv_shapes(C, hid, 1)
        yield from _conv_shapes(hid, C, 1)
        yield (C, N)
        yield (1, C)
        yield (C,)
        yield (N, C)
        yield (N,)
        yield (N, C)
        yield (N,)
        yield (C,)


def _level_shapes(C, n_sdtb, n_cbsm, cfg: ModelConfig):
    for _ in range(n_sdtb):
        yield from _sdtb_shapes(C, cfg)
    for _ in range(n_cbsm):
        yield from _cbsm_shapes(C, cfg)
    yield from _conv_shapes(2 * C, C, 1)


def iter_parameter_shapes(cfg: ModelConfig):
    chans = cfg.level_channels()
    yield from _conv_shapes(3, chans[0], 3)
    for i in range(cfg.levels - 1):
        yield from _level_shapes(chans[i], cfg.sdtb_counts[i], cfg.cbsm_counts[i], cfg)
        yield from _conv_shapes(4 * chans[i], 2 * chans[i], 1)
    last = cfg.levels - 1
    yield from _level_shapes(chans[last], cfg.sdtb_counts[last], cfg.cbsm_counts[last], cfg)
    for i in reversed(range(cfg.levels - 1)):
        yield from _conv_shapes(chans[i + 1], 2 * chans[i + 1], 1)
        yield from _conv_shapes(2 * chans[i], chans[i], 1)
        yield from _level_shapes(chans[i], cfg.sdtb_counts[i], cfg.cbsm_counts[i], cfg)
    yield from _conv_shapes(chans[0], 3, 3)


def count_parameters(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in iter_parameter_shapes(cfg))


def describe(cfg: ModelConfig) -> dict:
    """Per-level table of widths/depths plus the total parameter count."""
    levels = [
        {
            "level": i + 1,
            "channels": c,
            "spatial_scale": 1 << i,
            "sdtbs": cfg.sdtb_counts[i],
            "cbsms": cfg.cbsm_counts[i],
            "heads": cfg.heads[i],
        }
        for i, c in enumerate(cfg.level_channels())
    ]
    return {
        "levels": levels,
        "parameter_count": count_parameters(cfg),
        "config": cfg.to_dict(),
    }


# ----------------------------------------------------------------------
# checkpoint container: magic, version, config JSON, float32 records
# ----------------------------------------------------------------------
MAGIC = b"TMBA"
FORMAT_VERSION = 1


def save_checkpoint(path: str, model: TransMamba):
    state = model.state_dict()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    cfg_blob = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    buf.write(struct.pack("<I", len(state)))
    for name, p in state.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", p.data.ndim))
        for dim in p.data.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(p.data.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> TransMamba:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (cfg_len,) = struct.unpack_from("<I", view, 8)
    off = 12
    cfg = ModelConfig.from_dict(json.loads(bytes(view[off:off + cfg_len]).decode()))
    off += cfg_len
    (count,) = struct.unpack_from("<I", view, off)
    off += 4
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, off)
        off += 2
        name = bytes(view[off:off + name_len]).decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", view, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", view, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(view, dtype="<f4", count=n, offset=off).astype(np.float64)
        off += 4 * n
        state[name] = values.reshape(shape)
    model = TransMamba(cfg, seed=0)
    expected = model.state_dict()
    for name, p in expected.items():
        if name not in state:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if state[name].shape != p.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {state[name].shape}, config expects {p.data.shape}")
    unexpected = set(state) - set(expected)
    if unexpected:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(unexpected)[:3]}")
    model.load_state_dict(state)
    return model
