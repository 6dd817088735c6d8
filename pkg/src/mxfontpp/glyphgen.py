"""Procedural glyph corpus with ground-truth component labels.

Characters are built from a fixed alphabet of stroke primitives placed into
layout slots; fonts are parametric transforms (stroke width, shear, scale,
jitter, contrast).  Everything is a pure function of the seed.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

IMAGE_SIZE = 32
SUPERSAMPLE = 4
BASE_FONT = 0

COMPONENT_NAMES = (
    "bar_h",
    "bar_v",
    "diag",
    "anti_diag",
    "cross",
    "box",
    "left_hook",
    "arc",
    "dot",
    "t_junction",
)
N_COMPONENTS = len(COMPONENT_NAMES)
COMPONENT_IDS = {name: i for i, name in enumerate(COMPONENT_NAMES)}


def _arc(cx, cy, r, a0, a1, n=12):
    t = np.linspace(np.radians(a0), np.radians(a1), n)
    return list(zip(cx + r * np.cos(t), cy + r * np.sin(t)))


# polylines in a unit box, y pointing down
_PRIMITIVES: dict[int, list[list[tuple[float, float]]]] = {
    0: [[(0.1, 0.5), (0.9, 0.5)]],
    1: [[(0.5, 0.1), (0.5, 0.9)]],
    2: [[(0.15, 0.15), (0.85, 0.85)]],
    3: [[(0.85, 0.15), (0.15, 0.85)]],
    4: [[(0.1, 0.5), (0.9, 0.5)], [(0.5, 0.1), (0.5, 0.9)]],
    5: [[(0.2, 0.2), (0.8, 0.2), (0.8, 0.8), (0.2, 0.8), (0.2, 0.2)]],
    6: [[(0.6, 0.1), (0.6, 0.72), (0.52, 0.86), (0.3, 0.8)]],
    7: [_arc(0.5, 0.62, 0.36, 180, 360)],
    8: [[(0.43, 0.5), (0.57, 0.5)], [(0.5, 0.43), (0.5, 0.57)]],
    9: [[(0.1, 0.2), (0.9, 0.2)], [(0.5, 0.2), (0.5, 0.9)]],
}

# slot boxes (x0, y0, x1, y1) in the unit glyph box
LAYOUTS: dict[str, tuple[tuple[float, float, float, float], ...]] = {
    "full": ((0.0, 0.0, 1.0, 1.0),),
    "left-right": ((0.0, 0.0, 0.5, 1.0), (0.5, 0.0, 1.0, 1.0)),
    "top-bottom": ((0.0, 0.0, 1.0, 0.5), (0.0, 0.5, 1.0, 1.0)),
    "3-slot": ((0.0, 0.0, 0.5, 1.0), (0.5, 0.0, 1.0, 0.5), (0.5, 0.5, 1.0, 1.0)),
}
_LAYOUTS_BY_SIZE = {1: ("full",), 2: ("left-right", "top-bottom"), 3: ("3-slot",)}


@dataclass(frozen=True)
class CharDef:
    char_id: int
    components: tuple[int, ...]
    layout: str

    def __post_init__(self):
        if not 1 <= len(self.components) <= 3:
            raise ValueError(f"char {self.char_id}: 1-3 components required")
        if len(set(self.components)) != len(self.components):
            raise ValueError(f"char {self.char_id}: components must be distinct")
        if any(not 0 <= c < N_COMPONENTS for c in self.components):
            raise ValueError(f"char {self.char_id}: component id out of range")
        if self.layout not in LAYOUTS or len(LAYOUTS[self.layout]) != len(self.components):
            raise ValueError(f"char {self.char_id}: layout {self.layout!r} does not fit")


@dataclass(frozen=True)
class FontParams:
    font_id: int
    stroke_width: int
    shear: float
    scale: float
    jitter_seed: int
    contrast: float

    def __post_init__(self):
        if self.stroke_width not in (1, 2, 3):
            raise ValueError(f"font {self.font_id}: stroke_width must be 1, 2 or 3")
        if not -0.4 <= self.shear <= 0.4:
            raise ValueError(f"font {self.font_id}: shear outside [-0.4, 0.4]")
        if not 0.8 <= self.scale <= 1.0:
            raise ValueError(f"font {self.font_id}: scale outside [0.8, 1.0]")
        if not 0.7 <= self.contrast <= 1.0:
            raise ValueError(f"font {self.font_id}: contrast outside [0.7, 1.0]")


@dataclass
class GlyphSample:
    image: np.ndarray  # (1, 32, 32), ink 0.0, background 1.0
    font_id: int
    char_id: int
    comp_gt: frozenset[int]


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def glyph_segments(char: CharDef, font: FontParams) -> np.ndarray:
    """Stroke segments of ``char`` in pixel coordinates after all font transforms."""
    rng = np.random.default_rng([font.jitter_seed, char.char_id])
    extent = (IMAGE_SIZE - 6) * font.scale
    centre = IMAGE_SIZE / 2.0
    segs = []
    for comp, (x0, y0, x1, y1) in zip(char.components, LAYOUTS[char.layout]):
        # inset keeps neighbouring slots from touching
        w, h = (x1 - x0) * 0.84, (y1 - y0) * 0.84
        ox, oy = x0 + (x1 - x0) * 0.08, y0 + (y1 - y0) * 0.08
        shift = rng.normal(0.0, 0.012, size=2)
        for line in _PRIMITIVES[comp]:
            pts = np.asarray(line, dtype=np.float64)
            pts = pts + rng.normal(0.0, 0.006, size=pts.shape) + shift
            u = ox + pts[:, 0] * w
            v = oy + pts[:, 1] * h
            py = centre + (v - 0.5) * extent
            px = centre + (u - 0.5) * extent + font.shear * (py - centre)
            segs.extend(
                (px[i], py[i], px[i + 1], py[i + 1]) for i in range(len(px) - 1)
            )
    return np.asarray(segs, dtype=np.float64)


def render_glyph(char: CharDef, font: FontParams) -> GlyphSample:
    segs = glyph_segments(char, font)
    cov = kernels.stroke_coverage(segs, font.stroke_width / 2.0, IMAGE_SIZE, SUPERSAMPLE)
    img = np.clip(1.0 - font.contrast * cov, 0.0, 1.0)
    return GlyphSample(
        image=img[None].astype(np.float32),
        font_id=font.font_id,
        char_id=char.char_id,
        comp_gt=frozenset(char.components),
    )


# --------------------------------------------------------------------------
# charset / fonts
# --------------------------------------------------------------------------

def all_combinations() -> list[tuple[tuple[int, ...], str]]:
    """Every distinct (component set, layout) pair, components sorted."""
    out = []
    for size, layouts in _LAYOUTS_BY_SIZE.items():
        for comps in itertools.combinations(range(N_COMPONENTS), size):
            out.extend((comps, layout) for layout in layouts)
    return out


def build_charset(n_chars: int, seed: int, n_train: int | None = None) -> list[CharDef]:
    """Sample ``n_chars`` distinct characters; the first ``n_train`` cover every component."""
    combos = all_combinations()
    n_train = n_chars if n_train is None else n_train
    if n_chars > len(combos):
        raise ValueError(f"n_chars={n_chars} exceeds the {len(combos)} distinct combinations")
    if not 0 < n_train <= n_chars:
        raise ValueError(f"n_train={n_train} must lie in [1, {n_chars}]")
    rng = np.random.default_rng(seed)
    order = [combos[i] for i in rng.permutation(len(combos))]

    # greedy cover: take the first combination (in shuffled order) adding the most new components
    chosen, covered = [], set()
    while len(covered) < N_COMPONENTS:
        best = max(order, key=lambda combo: len(set(combo[0]) - covered))
        chosen.append(best)
        covered |= set(best[0])
    if len(chosen) > n_train:
        raise ValueError(f"{n_train} training characters cannot cover {N_COMPONENTS} components")
    rest = [c for c in order if c not in chosen]
    train = chosen + rest[: n_train - len(chosen)]
    unseen = rest[n_train - len(chosen) : n_chars - len(chosen)]
    train = [train[i] for i in rng.permutation(len(train))]

    charset = []
    for char_id, (comps, layout) in enumerate(train + unseen):
        slots = tuple(int(c) for c in rng.permutation(comps))
        charset.append(CharDef(char_id, slots, layout))
    return charset


def make_fonts(n_fonts: int, seed: int) -> list[FontParams]:
    """Font 0 is the canonical upright base font used as the content source."""
    rng = np.random.default_rng([seed, 1])
    fonts = [FontParams(BASE_FONT, 2, 0.0, 0.9, int(rng.integers(2**31)), 1.0)]
    for font_id in range(1, n_fonts):
        fonts.append(
            FontParams(
                font_id=font_id,
                stroke_width=int(rng.integers(1, 4)),
                shear=round(float(rng.uniform(-0.4, 0.4)), 4),
                scale=round(float(rng.uniform(0.8, 1.0)), 4),
                jitter_seed=int(rng.integers(2**31)),
                contrast=round(float(rng.uniform(0.7, 1.0)), 4),
            )
        )
    return fonts


def component_set(char_id: int, charset: Sequence[CharDef]) -> frozenset[int]:
    for char in charset:
        if char.char_id == char_id:
            return frozenset(char.components)
    raise KeyError(f"unknown char_id {char_id}")


# --------------------------------------------------------------------------
# on-disk dataset
# --------------------------------------------------------------------------

MANIFEST = "manifest.tsv"
SPLIT = "split.txt"
FONTS = "fonts.tsv"
CHARSET = "charset.tsv"


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Write a [0, 1] image of shape (H, W) or (1, H, W) as binary P5."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"write_pgm expects a single-channel image, got {img.shape}")
    data = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    """Read a binary P5 file as float32 values in [0, 1]."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported")
    body = raw[pos + 1 : pos + 1 + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float32) / 255.0


def _id_range(ids: Sequence[int]) -> str:
    ids = list(ids)
    if not ids:
        return ""
    if ids != list(range(ids[0], ids[-1] + 1)):
        return ",".join(map(str, ids))
    return f"{ids[0]}-{ids[-1]}"


def _parse_ids(text: str) -> list[int]:
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t]


@dataclass
class DatasetSplit:
    train_fonts: list[int]
    unseen_fonts: list[int]
    train_chars: list[int]
    unseen_chars: list[int]
    samples: list[tuple[str, int, int, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        if set(self.train_fonts) & set(self.unseen_fonts):
            raise ValueError("train and unseen fonts overlap")
        if set(self.train_chars) & set(self.unseen_chars):
            raise ValueError("train and unseen chars overlap")

    def pairs(self, name: str) -> list[tuple[int, int]]:
        """(font, char) pairs of ``train``, ``ufsc`` or ``ufuc``."""
        if name == "train":
            fonts, chars = self.train_fonts, self.train_chars
        elif name == "ufsc":
            fonts, chars = self.unseen_fonts, self.train_chars
        elif name == "ufuc":
            fonts, chars = self.unseen_fonts, self.unseen_chars
        else:
            raise ValueError(f"unknown split {name!r}")
        return [(f, c) for f in fonts for c in chars]

    def chars_of(self, name: str) -> list[int]:
        return self.unseen_chars if name == "ufuc" else self.train_chars


def make_dataset(
    out_dir: str | Path,
    n_fonts: int = 16,
    n_unseen_fonts: int = 4,
    n_chars: int = 80,
    n_unseen_chars: int = 20,
    seed: int = 0,
    force: bool = False,
) -> DatasetSplit:
    """Render every font × char glyph to PGM and write manifest and split files."""
    if min(n_fonts, n_chars) <= 0 or min(n_unseen_fonts, n_unseen_chars) < 0:
        raise ValueError("dataset counts must be positive")
    if n_unseen_fonts >= n_fonts or n_unseen_chars >= n_chars:
        raise ValueError("unseen counts must be smaller than totals")
    out = Path(out_dir)
    if (out / MANIFEST).exists() and not force:
        raise FileExistsError(f"{out / MANIFEST} exists; pass force to overwrite")
    (out / "images").mkdir(parents=True, exist_ok=True)

    n_train_chars = n_chars - n_unseen_chars
    charset = build_charset(n_chars, seed, n_train=n_train_chars)
    fonts = make_fonts(n_fonts, seed)
    split = DatasetSplit(
        train_fonts=list(range(n_fonts - n_unseen_fonts)),
        unseen_fonts=list(range(n_fonts - n_unseen_fonts, n_fonts)),
        train_chars=list(range(n_train_chars)),
        unseen_chars=list(range(n_train_chars, n_chars)),
    )

    for font in fonts:
        for char in charset:
            rel = f"images/f{font.font_id:03d}_c{char.char_id:03d}.pgm"
            write_pgm(out / rel, render_glyph(char, font).image)
            split.samples.append((rel, font.font_id, char.char_id, char.components))

    lines = ["# relative_path\tfont_id\tchar_id\tcomp_ids"]
    lines += [
        f"{rel}\t{f}\t{c}\t{','.join(map(str, comps))}" for rel, f, c, comps in split.samples
    ]
    (out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / SPLIT).write_text(
        "\n".join(
            [
                f"seed={seed}",
                f"train_fonts={_id_range(split.train_fonts)}",
                f"unseen_fonts={_id_range(split.unseen_fonts)}",
                f"train_chars={_id_range(split.train_chars)}",
                f"unseen_chars={_id_range(split.unseen_chars)}",
                f"base_font={BASE_FONT}",
                f"image_size={IMAGE_SIZE}",
                f"n_components={N_COMPONENTS}",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    (out / FONTS).write_text(
        "# font_id\tstroke_width\tshear\tscale\tjitter_seed\tcontrast\n"
        + "".join(
            f"{f.font_id}\t{f.stroke_width}\t{f.shear}\t{f.scale}\t{f.jitter_seed}\t{f.contrast}\n"
            for f in fonts
        ),
        encoding="utf-8",
    )
    (out / CHARSET).write_text(
        "# char_id\tlayout\tcomp_ids\n"
        + "".join(
            f"{c.char_id}\t{c.layout}\t{','.join(map(str, c.components))}\n" for c in charset
        ),
        encoding="utf-8",
    )
    log.info("wrote %d glyphs to %s", len(split.samples), out)
    return split


class Dataset:
    """A generated corpus loaded into memory, with an optional access log."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        kv = {}
        for line in (self.root / SPLIT).read_text(encoding="utf-8").splitlines():
            if line.strip() and not line.startswith("#"):
                key, _, value = line.partition("=")
                kv[key.strip()] = value.strip()
        self.split = DatasetSplit(
            train_fonts=_parse_ids(kv["train_fonts"]),
            unseen_fonts=_parse_ids(kv["unseen_fonts"]),
            train_chars=_parse_ids(kv["train_chars"]),
            unseen_chars=_parse_ids(kv["unseen_chars"]),
        )
        self.base_font = int(kv.get("base_font", BASE_FONT))
        fonts = self.split.train_fonts + self.split.unseen_fonts
        chars = self.split.train_chars + self.split.unseen_chars
        self.n_fonts, self.n_chars = max(fonts) + 1, max(chars) + 1
        self.images = np.zeros((self.n_fonts, self.n_chars, IMAGE_SIZE, IMAGE_SIZE), np.float32)
        self.components: dict[int, tuple[int, ...]] = {}
        seen = set()
        for lineno, line in enumerate(
            (self.root / MANIFEST).read_text(encoding="utf-8").splitlines(), 1
        ):
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{MANIFEST}:{lineno}: expected 4 TAB-separated fields")
            rel, f, c, comps = parts[0], int(parts[1]), int(parts[2]), parts[3]
            comp_ids = tuple(int(t) for t in comps.split(","))
            if self.components.setdefault(c, comp_ids) != comp_ids:
                raise ValueError(f"{MANIFEST}:{lineno}: inconsistent components for char {c}")
            self.images[f, c] = read_pgm(self.root / rel)
            self.split.samples.append((rel, f, c, comp_ids))
            seen.add((f, c))
        missing = {(f, c) for f in fonts for c in chars} - seen
        if missing:
            raise ValueError(f"manifest is missing {len(missing)} font/char pairs")
        self.access_log: list[tuple[int, int, str]] | None = None

    @property
    def n_train_fonts(self) -> int:
        return len(self.split.train_fonts)

    def read(self, font: int, char: int, role: str) -> np.ndarray:
        """Image (1, 32, 32) for ``(font, char)``; logged when auditing is on."""
        if self.access_log is not None:
            self.access_log.append((font, char, role))
        return self.images[font, char][None]

    def comp_gt(self, char: int) -> frozenset[int]:
        return frozenset(self.components[char])


