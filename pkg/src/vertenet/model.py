"""Encoder, fusion decoder and the three output heads; model file I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import WindowSpec
from .fusion import FUSION_MODES, McfbParams, decoder_level
from .landmarks import LandmarkSet, decode_landmarks
from .layers import ConvBNParams, conv_bn_relu, conv_weight, zeros
from .tensor import ShapeError, Tensor, named_tensors

# (r, p) grid explored in the reduction-factor / window-size ablation
SUPPORTED_R = (2, 4)
SUPPORTED_P = (10, 20)
DECODER_LEVELS = (4, 3, 2)  # deepest first; level n fuses the stride 2**n skip map


@dataclass
class ModelConfig:
    encoder_widths: tuple[int, int, int, int] = (8, 16, 16, 32)
    levels: dict = field(default_factory=lambda: {2: (2, 10), 3: (2, 10), 4: (2, 10)})
    fusion_mode: str = "full"
    head_stride: int = 4
    input_size: tuple[int, int] = (1024, 512)
    num_vertebrae: int = 6
    heads: int = 2
    low_head_fraction: float = 0.5
    gdfn_expansion: int = 2
    normalize: bool = True
    head_width: int = 16

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.levels = {int(k): (int(v[0]), int(v[1])) for k, v in self.levels.items()}
        self.input_size = tuple(int(v) for v in self.input_size)
        self.validate()

    def validate(self) -> None:
        if len(self.encoder_widths) != 4:
            raise ValueError("encoder_widths needs four stage widths")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if set(self.levels) != set(DECODER_LEVELS):
            raise ValueError(f"levels must cover decoder levels {sorted(DECODER_LEVELS)}")
        for lvl, (r, p) in self.levels.items():
            if r not in SUPPORTED_R or p not in SUPPORTED_P:
                raise ValueError(f"level {lvl}: (r={r}, p={p}) outside the supported grid "
                                 f"r in {SUPPORTED_R}, p in {SUPPORTED_P}")
        if self.num_vertebrae < 1:
            raise ValueError("num_vertebrae must be >= 1")
        if self.head_stride != 4:
            raise ValueError("head_stride is fixed at 4 by the encoder layout")
        for w in self.encoder_widths[:3]:
            if w % self.heads:
                raise ValueError(f"width {w} not divisible by {self.heads} attention heads")

    def window_spec(self, level: int) -> WindowSpec:
        r, p = self.levels[level]
        return WindowSpec.split(p, r, self.heads, self.low_head_fraction)


@dataclass
class HeadParams:
    hidden: Tensor
    hidden_bias: Tensor
    out: Tensor
    out_bias: Tensor

    @classmethod
    def create(cls, rng, c_in: int, width: int, c_out: int, bias: float = 0.0) -> "HeadParams":
        return cls(conv_weight(rng, width, c_in, 3), zeros(width),
                   conv_weight(rng, c_out, width, 1, gain=0.1),
                   Tensor(np.full(c_out, bias), requires_grad=True))


def head_forward(x: Tensor, p: HeadParams) -> Tensor:
    h = ops.relu(ops.conv2d(x, p.hidden, p.hidden_bias, padding=1))
    return ops.conv2d(h, p.out, p.out_bias)


@dataclass
class VertenetParams:
    config: ModelConfig = field(metadata={"static": True})
    encoder: list
    decoder: dict
    heatmap: HeadParams
    center_offset: HeadParams
    corner_offset: HeadParams

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "VertenetParams":
        rng = np.random.default_rng(seed)
        w0, w1, w2, w3 = config.encoder_widths
        encoder = [
            [ConvBNParams.create(rng, w0, 1, 7, stride=4)],
            [ConvBNParams.create(rng, w1, w0, 3, 2), ConvBNParams.create(rng, w1, w1, 3)],
            [ConvBNParams.create(rng, w2, w1, 3, 2), ConvBNParams.create(rng, w2, w2, 3)],
            [ConvBNParams.create(rng, w3, w2, 3, 2), ConvBNParams.create(rng, w3, w3, 3)],
        ]
        widths = dict(zip((2, 3, 4, 5), config.encoder_widths))
        decoder = {}
        for lvl in DECODER_LEVELS:
            decoder[lvl] = McfbParams.create(rng, widths[lvl + 1], widths[lvl], widths[lvl],
                                             config.window_spec(lvl), config.fusion_mode,
                                             config.normalize, config.gdfn_expansion)
        hw = config.head_width
        return cls(config, encoder, decoder,
                   HeadParams.create(rng, w0, hw, 1, bias=-2.19),
                   HeadParams.create(rng, w0, hw, 2),
                   HeadParams.create(rng, w0, hw, 8))


@dataclass
class HeadOutputs:
    heatmap: Tensor  # (B, 1, h, w), sigmoid
    center_offset: Tensor  # (B, 2, h, w) cells
    corner_offset: Tensor  # (B, 8, h, w) cells


def encoder_forward(image: Tensor, params: VertenetParams, training: bool = False) -> list[Tensor]:
    """Feature maps at strides 4, 8, 16, 32."""
    if image.ndim != 4 or image.shape[1] != 1:
        raise ShapeError(f"encoder_forward: expected (B, 1, H, W), got {image.shape}")
    H, W = image.shape[2:]
    if H < 32 or W < 32:
        raise ShapeError(f"encoder_forward: input {H}x{W} is smaller than 32 px on a side")
    if H % 32 or W % 32:
        raise ShapeError(f"encoder_forward: input {H}x{W} not divisible by 32; pad first")
    feats = []
    x = image
    for stage in params.encoder:
        for block in stage:
            x = conv_bn_relu(x, block, training)
        feats.append(x)
    return feats


def vertenet_forward(image: Tensor, params: VertenetParams, training: bool = False) -> HeadOutputs:
    f4, f8, f16, f32 = encoder_forward(image, params, training)
    skips = {4: f16, 3: f8, 2: f4}
    x = f32
    for lvl in DECODER_LEVELS:
        x = decoder_level(skips[lvl], x, params.decoder[lvl], training)
    return HeadOutputs(ops.sigmoid(head_forward(x, params.heatmap)),
                       head_forward(x, params.center_offset),
                       head_forward(x, params.corner_offset))


def pad_image(image: np.ndarray, multiple: int = 32) -> np.ndarray:
    """Edge-pad a (H, W) image at the bottom/right to a multiple of ``multiple``."""
    H, W = image.shape
    return np.pad(image, ((0, (-H) % multiple), (0, (-W) % multiple)), mode="edge")


def predict_landmarks(image: np.ndarray, params: VertenetParams, orientation: str = "anterior-right",
                      threshold: float = 0.1) -> LandmarkSet:
    H, W = image.shape
    x = Tensor(pad_image(image)[None, None])
    out = vertenet_forward(x, params)
    cfg = params.config
    lm = decode_landmarks(out.heatmap.data[0, 0], out.center_offset.data[0], out.corner_offset.data[0],
                          cfg.head_stride, cfg.num_vertebrae, threshold, (H, W), orientation)
    # offsets from a poorly fitted model can push points past the border; keep documents valid
    hi = np.array([W, H], dtype=np.float64)
    for v in lm.vertebrae:
        v.center = np.clip(v.center, 0.0, hi)
        v.corners = np.clip(v.corners, 0.0, hi)
    return lm


# ---------------------------------------------------------------- model files

MAGIC = b"VNET"
VERSION = 1


def _config_records(cfg: ModelConfig) -> list[tuple[str, np.ndarray]]:
    mode = float(FUSION_MODES.index(cfg.fusion_mode))
    levels = np.array([[lvl, *cfg.levels[lvl]] for lvl in sorted(cfg.levels)], dtype=np.float64)
    return [
        ("config.encoder_widths", np.array(cfg.encoder_widths, dtype=np.float64)),
        ("config.levels", levels),
        ("config.fusion_mode", np.array([mode])),
        ("config.head_stride", np.array([cfg.head_stride], dtype=np.float64)),
        ("config.input_size", np.array(cfg.input_size, dtype=np.float64)),
        ("config.num_vertebrae", np.array([cfg.num_vertebrae], dtype=np.float64)),
        ("config.heads", np.array([cfg.heads], dtype=np.float64)),
        ("config.low_head_fraction", np.array([cfg.low_head_fraction])),
        ("config.gdfn_expansion", np.array([cfg.gdfn_expansion], dtype=np.float64)),
        ("config.normalize", np.array([float(cfg.normalize)])),
        ("config.head_width", np.array([cfg.head_width], dtype=np.float64)),
    ]


def _config_from_records(rec: dict) -> ModelConfig:
    i = lambda name: int(rec[name][0])  # noqa: E731
    return ModelConfig(
        encoder_widths=tuple(int(v) for v in rec["config.encoder_widths"]),
        levels={int(row[0]): (int(row[1]), int(row[2])) for row in rec["config.levels"]},
        fusion_mode=FUSION_MODES[i("config.fusion_mode")],
        head_stride=i("config.head_stride"),
        input_size=tuple(int(v) for v in rec["config.input_size"]),
        num_vertebrae=i("config.num_vertebrae"),
        heads=i("config.heads"),
        low_head_fraction=float(rec["config.low_head_fraction"][0]),
        gdfn_expansion=i("config.gdfn_expansion"),
        normalize=bool(rec["config.normalize"][0]),
        head_width=i("config.head_width"),
    )


def write_records(path, records) -> None:
    """Binary layout: magic, u32 version, then per tensor: u32 name length,
    name bytes (utf-8), u32 rank, rank x u64 dims, float64 payload; all
    little-endian."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in records:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_records(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic {buf[:4]!r})")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported model file version {version}")
    pos = 8
    out = {}
    while pos < len(buf):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    return out


def save_model(path, params: VertenetParams) -> None:
    records = _config_records(params.config)
    records += [(name, t.data) for name, t in named_tensors(params)]
    write_records(path, records)


def load_model(path) -> VertenetParams:
    rec = read_records(path)
    params = VertenetParams.create(_config_from_records(rec), seed=0)
    for name, t in named_tensors(params):
        if name not in rec:
            raise ValueError(f"{path}: missing tensor {name}")
        if rec[name].shape != t.shape:
            raise ValueError(f"{path}: tensor {name} has shape {rec[name].shape}, expected {t.shape}")
        t.data = rec[name].copy()
    return params
