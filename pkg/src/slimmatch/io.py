"""File formats: PGM images, dataset directories, match TSVs, model files, SVG.

Everything is plain text or simple binary so outputs stay diffable and
language neutral:

* images: binary PGM (P5, maxval 255);
* dataset: pair_%05d/{a.pgm, b.pgm, h.txt}, h.txt holding nine
  whitespace-separated decimals row-major;
* matches: TSV with header xA/yA/xB/yB/conf, fixed 4-decimal values;
* model: `key=value` header lines, then `[param <name> shape=a,b,...]`
  blocks with whitespace-separated decimals (full float64 round-trip);
* match visualisation: SVG with both images embedded as PNG data URIs and
  one line element per match.
"""

from __future__ import annotations

import base64
import struct
import zlib

from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .losses import LossWeights
from .matching import MatchSet
from .pipeline import ModelParams, RunConfig, init_model

PAIR_DIR_FORMAT = "pair_%05d"
TSV_HEADER = "xA\tyA\txB\tyB\tconf"
MODEL_MAGIC = "slimmatch-model-v1"


class FileFormatError(ValueError):
    """Raised when an input file does not parse as its declared format."""


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    """Store a [0, 1] float image as 8-bit binary PGM."""
    img = np.asarray(img)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Load a binary PGM into a [0, 1] float image."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(raw):
            raise FileFormatError(f"{path}: truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":  # comment to end of line
            pos = raw.find(b"\n", pos)
            if pos < 0:
                raise FileFormatError(f"{path}: unterminated comment")
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise FileFormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise FileFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = raw[pos:pos + w * h]
    if len(pixels) != w * h:
        raise FileFormatError(f"{path}: expected {w * h} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w) / 255.0


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def write_homography(path, h_mat: np.ndarray) -> None:
    flat = " ".join(f"{v:.17g}" for v in np.asarray(h_mat).reshape(-1))
    Path(path).write_text(flat + "\n")


def read_homography(path) -> np.ndarray:
    vals = Path(path).read_text().split()
    if len(vals) != 9:
        raise FileFormatError(f"{path}: expected 9 values, got {len(vals)}")
    return np.array([float(v) for v in vals]).reshape(3, 3)


def pair_dir(root, index: int) -> Path:
    return Path(root) / (PAIR_DIR_FORMAT % index)


def write_scene(root, index: int, scene) -> Path:
    d = pair_dir(root, index)
    d.mkdir(parents=True, exist_ok=True)
    write_pgm(d / "a.pgm", scene.image_a)
    write_pgm(d / "b.pgm", scene.image_b)
    write_homography(d / "h.txt", scene.h_mat)
    return d


def list_pair_dirs(root) -> list[Path]:
    return sorted(p for p in Path(root).iterdir()
                  if p.is_dir() and p.name.startswith("pair_"))


# ---------------------------------------------------------------------------
# match TSV
# ---------------------------------------------------------------------------

def write_matches_tsv(path, matches: MatchSet) -> None:
    lines = [TSV_HEADER]
    for (xa, ya), (xb, yb), conf in zip(matches.points_a, matches.points_b,
                                        matches.confidence):
        lines.append(f"{xa:.4f}\t{ya:.4f}\t{xb:.4f}\t{yb:.4f}\t{conf:.4f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matches_tsv(path) -> MatchSet:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != TSV_HEADER:
        raise FileFormatError(f"{path}: missing TSV header")
    pa, pb, conf = [], [], []
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != 5:
            raise FileFormatError(f"{path}: malformed row {line!r}")
        vals = [float(v) for v in parts]
        pa.append(vals[0:2])
        pb.append(vals[2:4])
        conf.append(vals[4])
    return MatchSet(points_a=np.array(pa).reshape(-1, 2),
                    points_b=np.array(pb).reshape(-1, 2),
                    confidence=np.array(conf), level="fine")


# ---------------------------------------------------------------------------
# pose files (for the AUC evaluation)
# ---------------------------------------------------------------------------

def write_pose_pair(path, r, t, r_est, t_est) -> None:
    """24 decimals: ground-truth R (9) and t (3), then the estimates."""
    vals = np.concatenate([np.asarray(r).reshape(-1), np.asarray(t).reshape(-1),
                           np.asarray(r_est).reshape(-1), np.asarray(t_est).reshape(-1)])
    Path(path).write_text(" ".join(f"{v:.17g}" for v in vals) + "\n")


def read_pose_pair(path):
    vals = [float(v) for v in Path(path).read_text().split()]
    if len(vals) != 24:
        raise FileFormatError(f"{path}: expected 24 values, got {len(vals)}")
    a = np.array(vals)
    return (a[0:9].reshape(3, 3), a[9:12], a[12:21].reshape(3, 3), a[21:24])


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _config_to_header(cfg: RunConfig) -> list[str]:
    b = cfg.backbone
    w = cfg.loss_weights
    items = [
        ("stem_width", b.stem_width),
        ("stage_widths", ",".join(str(v) for v in b.stage_widths)),
        ("coarse_channels", b.coarse_channels),
        ("fine_channels", b.fine_channels),
        ("layers", cfg.layers),
        ("fine_layers", cfg.fine_layers),
        ("ffn_scale", cfg.ffn_scale),
        ("heads", cfg.heads),
        ("match_threshold", repr(cfg.match_threshold)),
        ("window", cfg.window),
        ("fine_conf_gate", repr(cfg.fine_conf_gate)),
        ("rope_mode", cfg.rope_mode),
        ("layer_scale_enabled", int(cfg.layer_scale_enabled)),
        ("score_scaled", int(cfg.score_scaled)),
        ("strict_matching_normalizer", int(cfg.strict_matching_normalizer)),
        ("seed", cfg.seed),
        ("learning_rate", repr(cfg.learning_rate)),
        ("epochs", cfg.epochs),
        ("lr_decay_every", cfg.lr_decay_every),
        ("lr_decay_factor", repr(cfg.lr_decay_factor)),
        ("weight_decay", repr(cfg.weight_decay)),
        ("alternate_directions", int(cfg.alternate_directions)),
        ("regression_weight", repr(w.regression)),
        ("classification_weight", repr(w.classification)),
        ("focal_alpha", repr(w.focal_alpha)),
        ("focal_gamma", repr(w.focal_gamma)),
        ("offset_limit", repr(w.offset_limit)),
    ]
    return [f"{k}={v}" for k, v in items]


def _config_from_header(fields: dict[str, str]) -> RunConfig:
    backbone = BackboneConfig(
        stem_width=int(fields["stem_width"]),
        stage_widths=tuple(int(v) for v in fields["stage_widths"].split(",")),
        coarse_channels=int(fields["coarse_channels"]),
        fine_channels=int(fields["fine_channels"]),
    )
    weights = LossWeights(
        regression=float(fields["regression_weight"]),
        classification=float(fields["classification_weight"]),
        focal_alpha=float(fields["focal_alpha"]),
        focal_gamma=float(fields["focal_gamma"]),
        offset_limit=float(fields["offset_limit"]),
    )
    return RunConfig(
        backbone=backbone,
        layers=int(fields["layers"]),
        fine_layers=int(fields["fine_layers"]),
        ffn_scale=int(fields["ffn_scale"]),
        heads=int(fields.get("heads", "1")),
        match_threshold=float(fields["match_threshold"]),
        window=int(fields["window"]),
        fine_conf_gate=float(fields["fine_conf_gate"]),
        loss_weights=weights,
        rope_mode=fields["rope_mode"],
        layer_scale_enabled=bool(int(fields["layer_scale_enabled"])),
        score_scaled=bool(int(fields["score_scaled"])),
        strict_matching_normalizer=bool(int(fields.get("strict_matching_normalizer", "0"))),
        seed=int(fields["seed"]),
        learning_rate=float(fields["learning_rate"]),
        epochs=int(fields["epochs"]),
        lr_decay_every=int(fields.get("lr_decay_every", "0")),
        lr_decay_factor=float(fields.get("lr_decay_factor", "0.5")),
        weight_decay=float(fields.get("weight_decay", "0.0")),
        alternate_directions=bool(int(fields.get("alternate_directions", "0"))),
    )


def save_model(path, params: ModelParams, cfg: RunConfig) -> None:
    lines = [MODEL_MAGIC]
    lines += _config_to_header(cfg)
    for name, leaf in params.named_leaves():
        shape = ",".join(str(d) for d in leaf.shape) if leaf.ndim else "scalar"
        lines.append(f"[param {name} shape={shape}]")
        lines.append(" ".join(f"{v:.17g}" for v in leaf.data.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> tuple[ModelParams, RunConfig]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise FileFormatError(f"{path}: not a {MODEL_MAGIC} file")
    fields = {}
    idx = 1
    while idx < len(lines) and not lines[idx].startswith("[param "):
        if lines[idx].strip():
            key, _, value = lines[idx].partition("=")
            fields[key.strip()] = value.strip()
        idx += 1
    cfg = _config_from_header(fields)
    params = init_model(cfg)
    by_name = dict(params.named_leaves())

    filled = set()
    while idx < len(lines):
        header = lines[idx]
        if not header.startswith("[param ") or not header.endswith("]"):
            raise FileFormatError(f"{path}: bad block header {header!r}")
        body = header[len("[param "):-1]
        name, _, shape_field = body.partition(" shape=")
        if name not in by_name:
            raise FileFormatError(f"{path}: unknown parameter {name!r}")
        leaf = by_name[name]
        shape = () if shape_field == "scalar" else tuple(
            int(v) for v in shape_field.split(","))
        if shape != leaf.shape:
            raise FileFormatError(
                f"{path}: {name} has shape {shape}, expected {leaf.shape}")
        values = np.array([float(v) for v in lines[idx + 1].split()])
        if values.size != leaf.size:
            raise FileFormatError(f"{path}: {name} has {values.size} values")
        leaf.data = values.reshape(leaf.shape)
        filled.add(name)
        idx += 2
    missing = set(by_name) - filled
    if missing:
        raise FileFormatError(f"{path}: missing parameters {sorted(missing)[:3]}...")
    return params, cfg


# ---------------------------------------------------------------------------
# SVG visualisation
# ---------------------------------------------------------------------------

def _png_bytes(img: np.ndarray) -> bytes:
    """Minimal 8-bit grayscale PNG encoder."""
    data = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    raw = b"".join(b"\x00" + data[r].tobytes() for r in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b""))


def write_matches_svg(path, img_a: np.ndarray, img_b: np.ndarray,
                      matches: MatchSet, gap: int = 8) -> None:
    """Side-by-side images with one coloured line per match."""
    ha, wa = img_a.shape
    hb, wb = img_b.shape
    width = wa + gap + wb
    height = max(ha, hb)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    for img, x_off in ((img_a, 0), (img_b, wa + gap)):
        uri = base64.b64encode(_png_bytes(img)).decode("ascii")
        parts.append(
            f'<image x="{x_off}" y="0" width="{img.shape[1]}" height="{img.shape[0]}" '
            f'href="data:image/png;base64,{uri}"/>')
    for (xa, ya), (xb, yb), conf in zip(matches.points_a, matches.points_b,
                                        matches.confidence):
        hue = int(120 * min(max(conf, 0.0), 1.0))  # red -> green by confidence
        parts.append(
            f'<line x1="{xa:.2f}" y1="{ya:.2f}" x2="{xb + wa + gap:.2f}" y2="{yb:.2f}" '
            f'stroke="hsl({hue},90%,45%)" stroke-width="0.6"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
