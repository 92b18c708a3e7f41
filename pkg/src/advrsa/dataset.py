"""Procedural shape dataset, image file I/O, and stimulus bookkeeping.

The dataset is a desk-scale stand-in for a natural-image corpus: 32x32 RGB
images of geometric shape classes with randomized position, scale, rotation,
colors, and additive noise. Generation is a pure function of (parameters,
seed); every image gets its own counter-derived random stream, so results do
not depend on generation order or worker count.

Files on disk: each image is a viewable binary PPM (P6) plus a lossless
sidecar (magic ``ADVIMG01``, u32 ndim, u32 dims, little-endian float64
payload). The sidecar is authoritative -- adversarial perturbations are often
smaller than one 8-bit quantization step.
"""

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = b"ADVIMG01"

CLASS_NAMES = ("disk", "square", "triangle", "ring", "cross",
               "stripes", "checker", "star", "grid", "frame")

_SPLIT_CODES = {"train": 0, "val": 1}


# ----------------------------------------------------------------------
# shape rendering
# ----------------------------------------------------------------------

def _shape_mask(class_name, u, v):
    """Boolean mask of the shape in normalized rotated coordinates (unit box)."""
    if class_name == "disk":
        return u * u + v * v <= 1.0
    if class_name == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.9
    if class_name == "triangle":
        return (v >= -0.62) & (v <= 1.05 - np.sqrt(3.0) * np.abs(u))
    if class_name == "ring":
        r2 = u * u + v * v
        return (r2 <= 1.0) & (r2 >= 0.3)
    if class_name == "cross":
        box = np.maximum(np.abs(u), np.abs(v)) <= 1.0
        return box & ((np.abs(u) <= 0.34) | (np.abs(v) <= 0.34))
    if class_name == "stripes":
        box = np.maximum(np.abs(u), np.abs(v)) <= 1.0
        return box & (np.floor((u + 4.0) * 2.2).astype(int) % 2 == 0)
    if class_name == "checker":
        box = np.maximum(np.abs(u), np.abs(v)) <= 1.0
        cells = np.floor((u + 4.0) * 1.6).astype(int) + np.floor((v + 4.0) * 1.6).astype(int)
        return box & (cells % 2 == 0)
    if class_name == "star":
        theta = np.arctan2(v, u)
        r = np.sqrt(u * u + v * v)
        return r <= 0.35 + 0.65 * (0.5 + 0.5 * np.cos(5.0 * theta)) ** 2
    if class_name == "grid":
        box = np.maximum(np.abs(u), np.abs(v)) <= 1.0
        cu = (u + 4.0) * 2.0
        cv = (v + 4.0) * 2.0
        du = cu - np.floor(cu) - 0.5
        dv = cv - np.floor(cv) - 0.5
        return box & (du * du + dv * dv <= 0.11)
    if class_name == "frame":
        outer = np.maximum(np.abs(u), np.abs(v))
        return (outer <= 0.95) & (outer >= 0.55)
    raise ValueError(f"unknown shape class {class_name!r}")


def render_shape(class_idx, rng, size=32, channels=3, supersample=2):
    """One (channels, size, size) image of the given class in [0, 1].

    Draws position, scale, rotation, foreground/background colors (rejected
    until they contrast), and additive Gaussian noise from ``rng``.
    """
    name = CLASS_NAMES[class_idx]
    cx, cy = rng.uniform(-0.18, 0.18, size=2)
    scale = rng.uniform(0.55, 0.8)
    angle = rng.uniform(-0.45, 0.45)
    bg = rng.uniform(0.0, 1.0, size=channels)
    while True:
        fg = rng.uniform(0.0, 1.0, size=channels)
        if np.mean(np.abs(fg - bg)) >= 0.4:
            break
    noise_amp = rng.uniform(0.005, 0.03)

    # supersampled coordinate grid in [-1, 1], then rotate/scale about center
    n = size * supersample
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    ca, sa = np.cos(angle), np.sin(angle)
    u = (ca * (xx - cx) + sa * (yy - cy)) / scale
    v = (-sa * (xx - cx) + ca * (yy - cy)) / scale
    mask = _shape_mask(name, u, v).astype(np.float64)
    # box-average the supersampled mask back to size x size (soft edges)
    mask = mask.reshape(size, supersample, size, supersample).mean(axis=(1, 3))

    img = bg[:, None, None] * (1.0 - mask) + fg[:, None, None] * mask
    img = img + rng.normal(0.0, noise_amp, size=img.shape)
    return np.clip(img, 0.0, 1.0)


# ----------------------------------------------------------------------
# dataset containers and generation
# ----------------------------------------------------------------------

@dataclass
class LabeledImage:
    image: np.ndarray      # (C, H, W) float64 in [0, 1]
    label: int
    seed: tuple            # the spawn key that generated it
    image_id: str = ""


@dataclass
class Split:
    """One dataset split as dense arrays plus per-image bookkeeping."""

    images: np.ndarray     # (N, C, H, W)
    labels: np.ndarray     # (N,)
    seeds: list            # spawn key per image
    ids: list              # stable string id per image
    name: str = ""

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return LabeledImage(self.images[i], int(self.labels[i]),
                            self.seeds[i], self.ids[i])


def generate_dataset(num_classes, per_class_train, per_class_val, seed,
                     size=32, channels=3):
    """Balanced train/val splits of procedural shape images.

    Each image is drawn from ``default_rng([seed, split_code, class, index])``,
    so any single image can be regenerated in isolation and the dataset is
    identical no matter how generation is parallelized.
    """
    if not 1 <= num_classes <= len(CLASS_NAMES):
        raise ValueError(f"num_classes must be in [1, {len(CLASS_NAMES)}], got {num_classes}")
    splits = {}
    for split_name, per_class in (("train", per_class_train), ("val", per_class_val)):
        code = _SPLIT_CODES[split_name]
        images = np.empty((num_classes * per_class, channels, size, size))
        labels = np.empty(num_classes * per_class, dtype=np.int64)
        seeds, ids = [], []
        pos = 0
        for cls in range(num_classes):
            for idx in range(per_class):
                key = (seed, code, cls, idx)
                rng = np.random.default_rng(list(key))
                images[pos] = render_shape(cls, rng, size=size, channels=channels)
                labels[pos] = cls
                seeds.append(key)
                ids.append(f"{split_name}-{CLASS_NAMES[cls]}-{idx:04d}")
                pos += 1
        splits[split_name] = Split(images, labels, seeds, ids, name=split_name)
    return splits["train"], splits["val"]


def mean_image(split):
    """Elementwise mean image of a split.

    Per-pixel contributions are sorted before summation, so the result is
    bitwise identical under any permutation of the dataset (a plain axis-0
    mean would leak the storage order through float rounding).
    """
    if len(split) == 0:
        raise ValueError("cannot take the mean of an empty split")
    return np.sort(split.images, axis=0).sum(axis=0) / len(split)


def select_re_stimuli(network, val_split, k, threshold=0.99, strategy="first",
                      band_upper=None):
    """Pick K validation images the network gets right with high confidence.

    Classes are balanced as evenly as K allows (when K is not divisible by the
    class count, lower class indices take the extra slots). Raises with a
    per-class shortfall table when the quota cannot be met.

    Strategies control which qualifying images fill each class quota:

    - ``"first"`` (default): take images in split order, stopping as soon as
      every quota is full.
    - ``"least_confident"``: scan the whole split and keep the images closest
      to the threshold, i.e. the hardest still-qualifying exemplars.
    - ``"band"``: like ``least_confident`` but also require confidence at or
      below ``band_upper``, which rejects fully saturated exemplars whose
      output distributions carry no class-confusion signal.  Classes without
      enough in-band images fall back to their least-confident qualifiers.
    """
    c = network.config.num_classes
    base, extra = divmod(k, c)
    quota = [base + (1 if cls < extra else 0) for cls in range(c)]
    if strategy not in ("first", "least_confident", "band"):
        raise ValueError(f"unknown selection strategy {strategy!r}; expected "
                         "'first', 'least_confident', or 'band'")
    if strategy == "band":
        if band_upper is None or not threshold < band_upper <= 1.0:
            raise ValueError(f"strategy 'band' needs band_upper in "
                             f"({threshold}, 1], got {band_upper}")
    chosen = {cls: [] for cls in range(c)}
    confidences = {}
    if strategy == "first":
        for i in range(len(val_split)):
            label = int(val_split.labels[i])
            if len(chosen[label]) >= quota[label]:
                continue
            probs = network.predict(val_split.images[i])
            if int(np.argmax(probs)) == label and probs[label] >= threshold:
                chosen[label].append(i)
                confidences[i] = float(probs[label])
    else:
        qualify = {cls: [] for cls in range(c)}   # [(conf, index), ...]
        for i in range(len(val_split)):
            label = int(val_split.labels[i])
            probs = network.predict(val_split.images[i])
            if int(np.argmax(probs)) == label and probs[label] >= threshold:
                qualify[label].append((float(probs[label]), i))
        for cls in range(c):
            ranked = sorted(qualify[cls])          # ascending confidence
            if strategy == "band":
                in_band = [pair for pair in ranked if pair[0] <= band_upper]
                if len(in_band) >= quota[cls]:
                    ranked = in_band
            for conf_val, i in ranked[:quota[cls]]:
                chosen[cls].append(i)
                confidences[i] = conf_val
    short = {cls: quota[cls] - len(chosen[cls]) for cls in range(c)
             if len(chosen[cls]) < quota[cls]}
    if short:
        detail = ", ".join(f"class {cls} ({CLASS_NAMES[cls]}): short {n}"
                           for cls, n in short.items())
        raise ValueError(
            f"only {sum(len(v) for v in chosen.values())} of {k} validation images "
            f"reach confidence {threshold}; shortfall by class: {detail}")
    picked = sorted(i for lst in chosen.values() for i in lst)
    out = []
    for i in picked:
        li = val_split[i]
        li.image = li.image.copy()
        out.append(li)
    return out, {val_split.ids[i]: confidences[i] for i in picked}


# ----------------------------------------------------------------------
# image file I/O
# ----------------------------------------------------------------------

def _sidecar_path(path):
    path = os.fspath(path)
    base = path[:-4] if path.endswith(".ppm") else path
    return base + ".tensor"


def write_tensor(path, array, comment=None):
    """Lossless tensor file: magic, u32 ndim, u32 dims, little-endian f64,
    then an optional ``#``-prefixed UTF-8 comment block after the payload."""
    array = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
        if comment is not None:
            fh.write(b"# " + comment.encode("utf-8"))


def read_tensor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != IMAGE_MAGIC:
        raise ValueError(f"{path}: bad magic at byte 0: expected {IMAGE_MAGIC!r}, "
                         f"found {data[:8]!r}")
    if len(data) < 12:
        raise ValueError(f"{path}: truncated at byte {len(data)}: missing ndim")
    (ndim,) = struct.unpack("<I", data[8:12])
    if ndim > 8:
        raise ValueError(f"{path}: implausible ndim {ndim}")
    need = 12 + 4 * ndim
    if len(data) < need:
        raise ValueError(f"{path}: truncated at byte {len(data)}: missing dims")
    shape = struct.unpack(f"<{ndim}I", data[12:need])
    count = int(np.prod(shape)) if ndim else 1
    payload_end = need + 8 * count
    if len(data) < payload_end:
        raise ValueError(f"{path}: payload is {len(data) - need} bytes, "
                         f"expected {8 * count} for shape {shape}")
    if len(data) > payload_end and not data[payload_end:payload_end + 1] == b"#":
        raise ValueError(f"{path}: {len(data) - payload_end} unexpected "
                         f"trailing bytes (not a comment block)")
    return np.frombuffer(data[need:payload_end], dtype="<f8").reshape(shape).copy()


def write_image(path, image, comment=None):
    """Write a (3, H, W) image in [0,1] as binary PPM plus lossless sidecar.

    ``path`` should end in ``.ppm``; the sidecar lands next to it. An optional
    single-line comment (e.g. a config hash) is embedded in the PPM header.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"PPM output needs a (3, H, W) image, got {image.shape}")
    path = os.fspath(path)
    if not path.endswith(".ppm"):
        raise ValueError(f"image path should end in .ppm, got {path!r}")
    _, h, w = image.shape
    quantized = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n"
    if comment is not None:
        if "\n" in comment:
            raise ValueError("PPM comment must be a single line")
        header += f"# {comment}\n"
    header += f"{w} {h}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(quantized.transpose(1, 2, 0).tobytes())   # rows of RGB triples
    write_tensor(_sidecar_path(path), image, comment=comment)


def read_ppm(path):
    """Read a binary (P6, maxval 255) PPM into (3, H, W) float64 in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {data[:2]!r})")
    # header tokens: width, height, maxval; '#' comments run to end of line
    pos, tokens = 2, []
    while len(tokens) < 3:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PPM header")
        ch = data[pos:pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            pos = data.index(b"\n", pos) + 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            tokens.append(int(data[start:pos]))
        else:
            raise ValueError(f"{path}: malformed PPM header at byte {pos}")
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    payload = data[pos:pos + need]
    if len(payload) != need:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {need}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_image(path):
    """Read an image, preferring the lossless sidecar over the PPM."""
    sidecar = _sidecar_path(path)
    if os.path.exists(sidecar):
        return read_tensor(sidecar)
    return read_ppm(path)


# ----------------------------------------------------------------------
# split persistence
# ----------------------------------------------------------------------

def save_split(directory, split, comment=None):
    """Write every image (PPM + sidecar) and a manifest.csv into a directory."""
    os.makedirs(directory, exist_ok=True)
    rows = []
    for i in range(len(split)):
        name = f"{split.ids[i]}.ppm"
        write_image(os.path.join(directory, name), split.images[i], comment=comment)
        rows.append({"id": split.ids[i], "path": name,
                     "label": int(split.labels[i]), "split": split.name,
                     "seed": "-".join(str(s) for s in split.seeds[i])})
    with open(os.path.join(directory, "manifest.csv"), "w", newline="") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=["id", "path", "label", "split", "seed"])
        writer.writeheader()
        writer.writerows(rows)


def load_split(directory):
    """Inverse of save_split; image order follows the manifest."""
    manifest = os.path.join(directory, "manifest.csv")
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    if not rows:
        raise ValueError(f"{manifest}: empty manifest")
    images, labels, seeds, ids = [], [], [], []
    for row in rows:
        images.append(read_image(os.path.join(directory, row["path"])))
        labels.append(int(row["label"]))
        seeds.append(tuple(int(s) for s in row["seed"].split("-")))
        ids.append(row["id"])
    return Split(np.stack(images), np.asarray(labels, dtype=np.int64),
                 seeds, ids, name=rows[0]["split"])


# ----------------------------------------------------------------------
# stimulus sets (RE / AN / AI triplets)
# ----------------------------------------------------------------------

@dataclass
class Stimulus:
    """One stimulus id: the RE image and, once synthesized, its AN/AI partners."""

    stim_id: str
    true_class: int
    re_image: np.ndarray
    an_image: np.ndarray = None
    ai_image: np.ndarray = None
    ai_target: int = None
    an_meta: dict = field(default_factory=dict)
    ai_meta: dict = field(default_factory=dict)


@dataclass
class StimulusSet:
    stimuli: list
    threshold: float = 0.99

    def __post_init__(self):
        for s in self.stimuli:
            for kind, meta in (("AN", s.an_meta), ("AI", s.ai_meta)):
                conf = meta.get("confidence")
                if conf is not None and conf < self.threshold:
                    raise ValueError(
                        f"stimulus {s.stim_id}: recorded {kind} confidence {conf} "
                        f"is below the set threshold {self.threshold}")

    def __len__(self):
        return len(self.stimuli)

    def kinds_present(self):
        kinds = ["RE"]
        if all(s.an_image is not None for s in self.stimuli):
            kinds.append("AN")
        if all(s.ai_image is not None for s in self.stimuli):
            kinds.append("AI")
        return kinds

    def images(self, kind):
        """Stacked (K, C, H, W) images of one kind in stimulus order."""
        attr = {"RE": "re_image", "AN": "an_image", "AI": "ai_image"}[kind]
        missing = [s.stim_id for s in self.stimuli if getattr(s, attr) is None]
        if missing:
            raise ValueError(f"{kind} images missing for stimuli: {missing[:5]}"
                             + ("..." if len(missing) > 5 else ""))
        return np.stack([getattr(s, attr) for s in self.stimuli])

    def save(self, directory, comment=None):
        os.makedirs(directory, exist_ok=True)
        meta = {"threshold": self.threshold, "stimuli": []}
        for s in self.stimuli:
            entry = {"stim_id": s.stim_id, "true_class": s.true_class,
                     "ai_target": s.ai_target, "an_meta": s.an_meta,
                     "ai_meta": s.ai_meta, "images": {}}
            for kind, img in (("re", s.re_image), ("an", s.an_image), ("ai", s.ai_image)):
                if img is not None:
                    sub = os.path.join(directory, kind)
                    os.makedirs(sub, exist_ok=True)
                    name = f"{kind}/{s.stim_id}.ppm"
                    write_image(os.path.join(directory, name), img, comment=comment)
                    entry["images"][kind] = name
            meta["stimuli"].append(entry)
        with open(os.path.join(directory, "stimuli.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "stimuli.json")) as fh:
            meta = json.load(fh)
        stimuli = []
        for entry in meta["stimuli"]:
            images = {kind: read_image(os.path.join(directory, rel))
                      for kind, rel in entry["images"].items()}
            stimuli.append(Stimulus(
                stim_id=entry["stim_id"], true_class=entry["true_class"],
                re_image=images.get("re"), an_image=images.get("an"),
                ai_image=images.get("ai"), ai_target=entry["ai_target"],
                an_meta=entry["an_meta"], ai_meta=entry["ai_meta"]))
        return cls(stimuli, threshold=meta["threshold"])
