"""File formats: PFM, binary PLY, camera text, raw unity volumes and INI configs."""

from __future__ import annotations

import configparser
import dataclasses
import io as _io
import re
from dataclasses import dataclass, field

import numpy as np

from .fusion import FilterParams, PointCloud
from .geometry import Camera, DepthMap
from .loss import UflParams
from .pipeline import PipelineConfig, StageConfig
from .synth import SceneConfig
from .unity import UnityVolume


# ---- PFM -------------------------------------------------------------------

def write_pfm(path, data) -> None:
    """Write an H x W (``Pf``) or H x W x 3 (``PF``) array as little-endian PFM.

    Values are stored as float32, rows bottom-to-top.  A ``DepthMap`` is
    written with masked pixels set to 0.
    """
    if isinstance(data, DepthMap):
        data = np.where(data.mask, data.values, 0.0)
    image = np.asarray(data)
    if image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    elif image.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError(f"PFM needs H x W or H x W x 3 data, got shape {image.shape}")
    H, W = image.shape[:2]
    payload = np.ascontiguousarray(np.flipud(image), dtype="<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(b"%d %d\n" % (W, H))
        f.write(b"-1.0\n")
        f.write(payload.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file of either byte order; returns float32 rows top-to-bottom."""
    with open(path, "rb") as f:
        tag = f.readline().rstrip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", f.readline())
        if dims is None:
            raise ValueError(f"{path}: malformed PFM header")
        W, H = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(f.readline())
        except ValueError:
            raise ValueError(f"{path}: malformed PFM scale") from None
        if scale == 0:
            raise ValueError(f"{path}: PFM scale must be nonzero")
        shape = (H, W, 3) if tag == b"PF" else (H, W)
        count = int(np.prod(shape))
        buf = f.read(4 * count)
    if len(buf) != 4 * count:
        raise ValueError(f"{path}: truncated PFM payload")
    data = np.frombuffer(buf, dtype="<f4" if scale < 0 else ">f4").reshape(shape)
    return np.flipud(data).astype(np.float32)


def read_depth(path) -> DepthMap:
    return DepthMap(read_pfm(path).astype(np.float64))


# ---- PLY -------------------------------------------------------------------

_PLY_VERTEX = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def write_ply(path, cloud: PointCloud) -> None:
    """Binary little-endian PLY with float xyz and uchar rgb per vertex."""
    vertices = np.empty(len(cloud), dtype=_PLY_VERTEX)
    for i, name in enumerate("xyz"):
        vertices[name] = cloud.points[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        vertices[name] = cloud.colors[:, i]
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(cloud)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\n"
              "end_header\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(vertices.tobytes())


def read_ply(path) -> PointCloud:
    """Read the vertex layout produced by ``write_ply``."""
    with open(path, "rb") as f:
        lines = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: PLY header has no end_header")
            line = line.decode("ascii").strip()
            lines.append(line)
            if line == "end_header":
                break
        if lines[0] != "ply" or "format binary_little_endian 1.0" not in lines:
            raise ValueError(f"{path}: only binary little-endian PLY is supported")
        props = [ln.split()[-1] for ln in lines if ln.startswith("property")]
        if props != list(_PLY_VERTEX.names):
            raise ValueError(f"{path}: unexpected vertex properties {props}")
        n = next(int(ln.split()[2]) for ln in lines if ln.startswith("element vertex"))
        buf = f.read(n * _PLY_VERTEX.itemsize)
    if len(buf) != n * _PLY_VERTEX.itemsize:
        raise ValueError(f"{path}: truncated PLY payload")
    v = np.frombuffer(buf, dtype=_PLY_VERTEX)
    points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    colors = np.stack([v["red"], v["green"], v["blue"]], axis=1)
    return PointCloud(points, colors)


# ---- cameras ---------------------------------------------------------------

def format_camera(cam: Camera, d_min: float, interval: float) -> str:
    rows = ["extrinsic"]
    rows += [" ".join(repr(float(v)) for v in row) for row in cam.T]
    rows += ["", "intrinsic"]
    rows += [" ".join(repr(float(v)) for v in row) for row in cam.K]
    rows += ["", f"{float(d_min)!r} {float(interval)!r}"]
    return "\n".join(rows) + "\n"


def write_camera(path, cam: Camera, d_min: float, interval: float) -> None:
    with open(path, "w") as f:
        f.write(format_camera(cam, d_min, interval))


def parse_camera(text: str, size: tuple[int, int]) -> tuple[Camera, float, float]:
    """Parse the extrinsic / intrinsic / ``d_min interval`` text layout."""
    tokens = text.split()
    try:
        e = tokens.index("extrinsic")
        k = tokens.index("intrinsic")
        T = np.array(tokens[e + 1:e + 17], dtype=np.float64).reshape(4, 4)
        K = np.array(tokens[k + 1:k + 10], dtype=np.float64).reshape(3, 3)
        d_min, interval = (float(v) for v in tokens[k + 10:k + 12])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed camera text: {exc}") from None
    return Camera(K, T, size), d_min, interval


def read_camera(path, size: tuple[int, int]) -> tuple[Camera, float, float]:
    with open(path) as f:
        return parse_camera(f.read(), size)


# ---- unity volumes ---------------------------------------------------------

def write_unity(path, vol: UnityVolume) -> None:
    """Text header ``M H W role``, then M*H*W little-endian float32 values and
    H*W mask bytes."""
    M, H, W = vol.values.shape
    with open(path, "wb") as f:
        f.write(f"{M} {H} {W} {vol.role}\n".encode("ascii"))
        f.write(np.ascontiguousarray(vol.values, dtype="<f4").tobytes())
        f.write(vol.mask.astype(np.uint8).tobytes())


def read_unity(path) -> UnityVolume:
    with open(path, "rb") as f:
        head = f.readline().decode("ascii").split()
        if len(head) != 4:
            raise ValueError(f"{path}: malformed unity header")
        M, H, W = (int(v) for v in head[:3])
        values = np.frombuffer(f.read(4 * M * H * W), dtype="<f4")
        mask = np.frombuffer(f.read(H * W), dtype=np.uint8)
    if values.size != M * H * W or mask.size != H * W:
        raise ValueError(f"{path}: truncated unity volume")
    return UnityVolume(values.reshape(M, H, W).astype(np.float64), mask.reshape(H, W) > 0, role=head[3])


# ---- configuration ---------------------------------------------------------

@dataclass
class Config:
    scene: SceneConfig = field(default_factory=SceneConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        if v and isinstance(v[0], StageConfig):
            return ", ".join(f"{s.fraction!r}:{s.M}:{s.ratio!r}" for s in v)
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _parse_value(text: str, default, key: str):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    if isinstance(default, list) and default and isinstance(default[0], StageConfig):
        stages = []
        for item in filter(None, (s.strip() for s in text.split(","))):
            parts = item.split(":")
            if len(parts) != 3:
                raise ValueError(f"{key}: stage entries are fraction:M:ratio, got {item!r}")
            stages.append(StageConfig(float(parts[0]), int(parts[1]), float(parts[2])))
        return stages
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if default and all(isinstance(x, int) for x in default):
            return tuple(int(x) for x in items)
        return tuple(float(x) for x in items)
    raise TypeError(f"{key}: unsupported config type {type(default).__name__}")


_NESTED = ("loss", "filter")


def _section_items(obj) -> dict[str, str]:
    return {f.name: _format_value(getattr(obj, f.name))
            for f in dataclasses.fields(obj) if f.name not in _NESTED}


def config_to_text(cfg: Config) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["scene"] = _section_items(cfg.scene)
    parser["pipeline"] = _section_items(cfg.pipeline)
    parser["loss"] = _section_items(cfg.pipeline.loss)
    parser["filter"] = _section_items(cfg.pipeline.filter)
    buf = _io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _build(cls, section, nested=None):
    default = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = dict(nested or {})
    for key, text in (section.items() if section is not None else []):
        if key not in known or key in _NESTED:
            raise ValueError(f"unknown {cls.__name__} key {key!r}")
        try:
            kwargs[key] = _parse_value(text, getattr(default, key), key)
        except ValueError as exc:
            raise ValueError(f"bad value for {key!r}: {exc}") from None
    return cls(**kwargs)


def config_from_text(text: str) -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    unknown = set(parser.sections()) - {"scene", "pipeline", "loss", "filter"}
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")

    def get(name):
        return parser[name] if parser.has_section(name) else None

    loss = _build(UflParams, get("loss"))
    filt = _build(FilterParams, get("filter"))
    pipeline = _build(PipelineConfig, get("pipeline"), {"loss": loss, "filter": filt})
    scene = _build(SceneConfig, get("scene"))
    return Config(scene, pipeline)


def read_config(path) -> Config:
    with open(path) as f:
        return config_from_text(f.read())


def write_config(path, cfg: Config) -> None:
    with open(path, "w") as f:
        f.write(config_to_text(cfg))
