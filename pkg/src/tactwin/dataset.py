"""Deterministic synthetic dataset generation with on-disk annotations.

Images are 16-bit big-endian binary PGM (P5, maxval 65535), one per sample at
``{split}/{index:06d}.pgm``. Annotations are JSON Lines with one object per
sample; a single manifest JSON records the generation spec and splits. Every
byte is a pure function of the manifest spec and the master seed: sample i
draws from ``default_rng([master_seed, 0, i])`` and the split permutation from
``default_rng([master_seed, 1])``, so thread count and run order cannot change
the output.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contact import ContactScenario, MaterialParams, SphereProbe
from .errors import ConfigError
from .frames import SensorConfig
from .render import IlluminationModel, TactileImage, simulate
from .suites import SUITES, sample_scenario

PGM_MAXVAL = 65535
ANNOTATION_KEYS = ("index", "split", "class", "cx_mm", "cy_mm", "w_mm", "h_mm",
                   "theta_deg", "force_n", "probe", "seed")


def write_pgm(path: Path, image: TactileImage) -> None:
    data = np.rint(np.clip(image.pixels, 0.0, 1.0) * PGM_MAXVAL).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(data.tobytes())


def pgm_bytes(image: TactileImage) -> bytes:
    data = np.rint(np.clip(image.pixels, 0.0, 1.0) * PGM_MAXVAL).astype(">u2")
    h, w = data.shape
    return f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii") + data.tobytes()


def read_pgm(path: Path, scale_mm_per_px: float, is_reference: bool = False) -> TactileImage:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise IOError(f"{path}: not a binary PGM file")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        w, h = int(dims[0]), int(dims[1])
        if maxval != PGM_MAXVAL:
            raise IOError(f"{path}: expected maxval {PGM_MAXVAL}, got {maxval}")
        raw = np.frombuffer(fh.read(w * h * 2), dtype=">u2").reshape(h, w)
    return TactileImage(raw.astype(float) / PGM_MAXVAL, scale_mm_per_px,
                        is_reference=is_reference)


def json_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class DatasetSpec:
    """Generation recipe: sampling distribution, size, and parameters.

    sphere_diameters, when set, overrides the suite with a custom library of
    sphere probes (all one class).
    """

    count: int
    master_seed: int
    suite: str = "roundtrip"
    force_range: tuple = (0.8, 10.0)
    noise_sigma: float = 0.0
    sphere_diameters: tuple | None = None
    sensor: SensorConfig = field(default_factory=SensorConfig)
    material: MaterialParams = field(default_factory=MaterialParams)
    illum: IlluminationModel = field(default_factory=IlluminationModel)

    def __post_init__(self):
        if self.count <= 0:
            raise ConfigError(f"count must be positive, got {self.count}")
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}; options: {sorted(SUITES)}")
        lo, hi = self.force_range
        if not (0 <= lo < hi):
            raise ConfigError(
                f"force_range must satisfy 0 <= lo < hi, got {lo}:{hi}")
        if self.sphere_diameters is not None:
            if not self.sphere_diameters or any(d <= 0 for d in self.sphere_diameters):
                raise ConfigError("sphere_diameters must be positive and nonempty")

    def probes(self):
        if self.sphere_diameters is not None:
            return [SphereProbe(d) for d in self.sphere_diameters]
        return SUITES[self.suite]()

    def params(self) -> dict:
        return {
            "count": self.count,
            "master_seed": self.master_seed,
            "suite": self.suite,
            "force_range": list(self.force_range),
            "noise_sigma": self.noise_sigma,
            "sphere_diameters": (list(self.sphere_diameters)
                                 if self.sphere_diameters is not None else None),
            "sensor": self.sensor.params(),
            "material": self.material.params(),
            "illumination": self.illum.params(),
        }


def assign_splits(count: int, master_seed: int) -> list[str]:
    """Deterministic 90/10 train/test split with 10% of train held as val."""
    rng = np.random.default_rng([master_seed, 1])
    perm = rng.permutation(count)
    n_test = count // 10
    n_val = (count - n_test) // 10
    split = ["train"] * count
    for i in perm[:n_test]:
        split[i] = "test"
    for i in perm[n_test:n_test + n_val]:
        split[i] = "val"
    return split


def sample_for_index(spec: DatasetSpec, index: int) -> tuple[ContactScenario, int]:
    """Scenario and simulation seed for one sample index."""
    rng = np.random.default_rng([spec.master_seed, 0, index])
    scenario = sample_scenario(
        rng, spec.probes(), spec.sensor, spec.material.e_star,
        force_range=spec.force_range, noise_sigma=spec.noise_sigma)
    sim_seed = int(rng.integers(0, 2 ** 31))
    return scenario, sim_seed


def _render_sample(spec: DatasetSpec, index: int, split: str):
    scenario, sim_seed = sample_for_index(spec, index)
    image, gt = simulate(scenario, spec.material, spec.illum, spec.sensor, seed=sim_seed)
    ann = {
        "index": index,
        "split": split,
        "class": gt.class_name,
        "cx_mm": gt.box.cx,
        "cy_mm": gt.box.cy,
        "w_mm": gt.box.w,
        "h_mm": gt.box.h,
        "theta_deg": gt.theta_deg,
        "force_n": gt.force_n,
        "probe": scenario.probe.params(),
        "seed": sim_seed,
    }
    return pgm_bytes(image), ann


def generate_dataset(spec: DatasetSpec, out_dir, workers: int = 1) -> dict:
    """Write images, annotations.jsonl, and manifest.json; returns the manifest."""
    out = Path(out_dir)
    splits = assign_splits(spec.count, spec.master_seed)
    for name in ("train", "val", "test"):
        (out / name).mkdir(parents=True, exist_ok=True)

    indices = range(spec.count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda i: _render_sample(spec, i, splits[i]), indices))
    else:
        results = [_render_sample(spec, i, splits[i]) for i in indices]

    annotations = []
    for i, (blob, ann) in zip(indices, results):
        try:
            with open(out / splits[i] / f"{i:06d}.pgm", "wb") as fh:
                fh.write(blob)
        except OSError as exc:
            raise IOError(f"failed writing sample {i} to {out}: {exc}") from exc
        annotations.append(ann)

    with open(out / "annotations.jsonl", "w") as fh:
        for ann in annotations:
            fh.write(json_line(ann) + "\n")

    manifest = {
        "schema_version": 1,
        "spec": spec.params(),
        "splits": {
            name: sorted(i for i in indices if splits[i] == name)
            for name in ("train", "val", "test")
        },
        "counts": {name: splits.count(name) for name in ("train", "val", "test")},
        "classes": sorted({ann["class"] for ann in annotations}),
        "annotations": "annotations.jsonl",
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def read_annotations(dataset_dir) -> list[dict]:
    path = Path(dataset_dir) / "annotations.jsonl"
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_manifest(dataset_dir) -> dict:
    with open(Path(dataset_dir) / "manifest.json") as fh:
        return json.load(fh)


def load_sample_image(dataset_dir, ann: dict, scale_mm_per_px: float) -> TactileImage:
    path = Path(dataset_dir) / ann["split"] / f"{ann['index']:06d}.pgm"
    return read_pgm(path, scale_mm_per_px)
