"""Procedural text-strip rendering: the package's training data source.

Labels are drawn over a configurable character subset and rendered from a
built-in 5x7 bitmap font (letter glyphs use uppercase letterforms; labels stay
lowercase), dark ink on a light background, with optional uniform pixel noise
pulling values toward mid-gray. Rendering is deterministic given (label,
config, seed), canvases are always 32 pixels tall, and widths are padded up to
a multiple of 8, which guarantees every label is CTC-feasible at its rendered
width: each character occupies at least 16 pixels, so W/8 >= 2 * len(label).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DataError

CANVAS_HEIGHT = 32
GLYPH_ROWS = 7
GLYPH_COLS = 5

# classic 5x7 dot-matrix letterforms
_FONT_ROWS = {
    "a": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "b": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "c": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "d": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "e": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "f": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "g": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."),
    "h": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "i": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "j": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "l": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "m": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "n": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "o": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "p": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "r": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "s": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "t": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "u": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "v": ("#...#", "#...#", "#...#", "#...#", ".#.#.", ".#.#.", "..#.."),
    "w": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "x": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}

SUPPORTED_CHARS = "".join(sorted(_FONT_ROWS))


def _glyph_bitmap(ch: str) -> np.ndarray:
    rows = _FONT_ROWS[ch]
    return np.array([[cell == "#" for cell in row] for row in rows], dtype=bool)


@dataclass(frozen=True)
class GenConfig:
    """Rendering and sampling knobs for the synthetic task.

    The default task draws labels of length 3-5 over the 8-symbol subset
    {a, b, c, d, e, 1, 2, 3}. ``words``, when set, samples labels from a fixed
    word list instead of random character concatenation.
    """

    charset: str = "abcde123"
    min_len: int = 3
    max_len: int = 5
    scale: int = 3
    spacing: int = 2
    margin: int = 2
    noise: float = 0.1
    words: tuple[str, ...] | None = None

    def __post_init__(self):
        unknown = [ch for ch in self.charset if ch not in _FONT_ROWS]
        if unknown:
            raise DataError(f"unsupported characters in charset: {unknown}")
        if len(set(self.charset)) != len(self.charset):
            raise DataError("charset characters must be unique")
        if not 1 <= self.min_len <= self.max_len:
            raise DataError("need 1 <= min_len <= max_len")
        if not 1 <= self.scale <= (CANVAS_HEIGHT - 2) // GLYPH_ROWS:
            raise DataError(f"scale must be in 1..{(CANVAS_HEIGHT - 2) // GLYPH_ROWS}")
        if self.spacing < 0 or self.margin < 0:
            raise DataError("spacing and margin must be non-negative")
        if not 0.0 <= self.noise <= 0.5:
            raise DataError("noise amplitude must be in [0, 0.5]")
        # every character must span >= 16 px so W/8 >= 2*len holds by construction
        if GLYPH_COLS * self.scale + self.spacing < 16:
            raise DataError(
                "glyph scale and spacing too small for CTC feasibility: "
                f"need 5*scale + spacing >= 16, got {GLYPH_COLS * self.scale + self.spacing}"
            )
        if self.words is not None:
            for w in self.words:
                if not w:
                    raise DataError("word list entries must be non-empty")
                bad = [ch for ch in w if ch not in self.charset]
                if bad:
                    raise DataError(f"word {w!r} uses characters outside the charset: {bad}")
            if len(set(self.words)) != len(self.words):
                raise DataError("word list entries must be unique")


@dataclass
class Sample:
    """One rendered strip: grayscale image in [0, 1], its label, and the seed."""

    image: np.ndarray  # (1, 1, 32, W) float64
    label: str
    seed: int

    @property
    def width(self) -> int:
        return self.image.shape[3]

    @property
    def num_frames(self) -> int:
        return self.width // 8


def rendered_width(label_len: int, config: GenConfig) -> int:
    raw = (
        label_len * GLYPH_COLS * config.scale
        + (label_len - 1) * config.spacing
        + 2 * config.margin
    )
    return max(8, 8 * math.ceil(raw / 8))


def render(label: str, config: GenConfig, seed: int) -> Sample:
    """Render one label deterministically; dark glyphs on a light background."""
    if not label:
        raise DataError("cannot render an empty label")
    bad = [ch for ch in label if ch not in config.charset]
    if bad:
        raise DataError(f"label {label!r} contains characters outside the charset: {bad}")

    width = rendered_width(len(label), config)
    canvas = np.ones((CANVAS_HEIGHT, width))
    top = (CANVAS_HEIGHT - GLYPH_ROWS * config.scale) // 2
    x = config.margin
    for ch in label:
        bitmap = np.repeat(np.repeat(_glyph_bitmap(ch), config.scale, 0), config.scale, 1)
        gh, gw = bitmap.shape
        canvas[top : top + gh, x : x + gw][bitmap] = 0.0
        x += gw + config.spacing

    if config.noise > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        n = rng.uniform(0.0, config.noise, size=canvas.shape)
        canvas = canvas + n * (1.0 - 2.0 * canvas)  # pull both extremes toward gray

    return Sample(image=canvas[None, None, :, :], label=label, seed=seed)


def _label_space_size(config: GenConfig) -> int:
    if config.words is not None:
        return len(config.words)
    a = len(config.charset)
    return sum(a**length for length in range(config.min_len, config.max_len + 1))


def _sample_distinct_labels(config: GenConfig, count: int, rng: np.random.Generator) -> list[str]:
    space = _label_space_size(config)
    if space < count:
        raise DataError(
            f"label space has only {space} distinct strings but {count} are needed; "
            "use longer labels or a larger alphabet"
        )
    if config.words is not None:
        picked = rng.choice(len(config.words), size=count, replace=False)
        return [config.words[i] for i in picked]
    if space <= 1 << 20:
        universe = [
            "".join(combo)
            for length in range(config.min_len, config.max_len + 1)
            for combo in product(config.charset, repeat=length)
        ]
        picked = rng.choice(len(universe), size=count, replace=False)
        return [universe[i] for i in picked]
    # huge spaces: rejection sampling, length weighted by string counts
    lengths = np.arange(config.min_len, config.max_len + 1)
    weights = np.array([len(config.charset) ** int(l) for l in lengths], dtype=np.float64)
    weights /= weights.sum()
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        length = int(rng.choice(lengths, p=weights))
        chars = rng.choice(list(config.charset), size=length)
        label = "".join(chars)
        if label not in seen:
            seen.add(label)
            out.append(label)
    return out


def make_split(
    config: GenConfig, n_train: int, n_test: int, seed: int
) -> tuple[list[Sample], list[Sample]]:
    """Render disjoint train/test sets: no test label string appears in train."""
    if n_train < 1 or n_test < 1:
        raise DataError("n_train and n_test must both be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    labels = _sample_distinct_labels(config, n_train + n_test, rng)
    samples = []
    for idx, label in enumerate(labels):
        sample_seed = int(np.random.SeedSequence((seed, 1, idx)).generate_state(1)[0])
        samples.append(render(label, config, sample_seed))
    return samples[:n_train], samples[n_train:]
