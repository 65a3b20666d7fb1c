"""Batch command-line front end.

Subcommands: generate, calibrate, decode, eval, train-toy, resolution.
Configuration comes from an optional JSON file plus flag overrides (flags
win); the effective configuration is echoed into every output directory so
runs are reproducible. All primary outputs are byte-deterministic given the
seed; wall-clock timestamps go only to the run.log sidecar.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 stale
calibration, 5 internal contract violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .contact import MaterialParams
from .dataset import (DatasetSpec, generate_dataset, json_line,
                      load_sample_image, read_annotations, read_manifest)
from .decoder import (CalibrationTable, DecodeConfig, Detection, TactileDecoder,
                      TemplateLibrary, build_calibration, build_templates,
                      params_hash)
from .encoding import build_region_grid
from .errors import (AssignmentError, CalibrationError, ConfigError,
                     ContractViolation, ScenarioError, StaleCalibrationError)
from .frames import SensorConfig
from .geometry import OrientedBox
from .metrics import evaluate_detections, write_report
from .render import IlluminationModel, resolution_sweep, ring_lights
from .suites import ANISOTROPIC_CLASSES, SUITES
from .toyhead import ToyHead, cell_features, fit_toy_head, predict_sample_force
from .render import make_reference

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_STALE = 4
EXIT_CONTRACT = 5

_CONFIG_KEYS = {"sensor", "material", "illumination", "decode"}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _build_params(cfg: dict, args) -> tuple:
    sensor_kw = dict(cfg.get("sensor", {}))
    if getattr(args, "size", None) is not None:
        sensor_kw["input_size"] = args.size
    if getattr(args, "scale", None) is not None:
        sensor_kw["scale_mm_per_px"] = args.scale
    material_kw = dict(cfg.get("material", {}))
    illum_kw = dict(cfg.get("illumination", {}))
    if "light_dirs" in illum_kw:
        illum_kw["light_dirs"] = np.array(illum_kw["light_dirs"])
    elif "n_lights" in illum_kw:
        illum_kw["light_dirs"] = ring_lights(illum_kw.pop("n_lights"))
    decode_kw = dict(cfg.get("decode", {}))
    if getattr(args, "noise", None) is not None:
        decode_kw["noise_sigma"] = args.noise
    try:
        sensor = SensorConfig(**sensor_kw)
        material = MaterialParams(**material_kw)
        illum = IlluminationModel(**illum_kw)
        decode_cfg = DecodeConfig(**decode_kw)
    except TypeError as exc:
        raise ConfigError(f"bad parameter name in config: {exc}") from exc
    return sensor, material, illum, decode_cfg


def _parse_force_range(spec: str) -> tuple:
    try:
        lo, hi = (float(v) for v in spec.split(":"))
    except ValueError as exc:
        raise ConfigError(
            f"force-range must look like LO:HI, got {spec!r}") from exc
    if not (0 <= lo < hi):
        raise ConfigError(
            f"force-range must satisfy 0 <= lo < hi, got {spec!r}")
    return lo, hi


def _echo_config(out_dir: Path, payload: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _log(out_dir: Path, message: str):
    with open(out_dir / "run.log", "a") as fh:
        fh.write(f"[{time.strftime('%Y-%m-%dT%H:%M:%S')}] {message}\n")


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    sensor, material, illum, _ = _build_params(cfg, args)
    diameters = None
    if args.probe == "sphere":
        try:
            diameters = tuple(float(v) for v in args.diameters.split(","))
        except ValueError as exc:
            raise ConfigError(
                f"diameters must be a comma-separated list, got {args.diameters!r}"
            ) from exc
    spec = DatasetSpec(
        count=args.count,
        master_seed=args.seed,
        suite=args.suite,
        force_range=_parse_force_range(args.force_range),
        noise_sigma=args.noise if args.noise is not None else 0.0,
        sphere_diameters=diameters,
        sensor=sensor, material=material, illum=illum,
    )
    out = Path(args.out)
    _echo_config(out, {"command": "generate", "spec": spec.params()})
    manifest = generate_dataset(spec, out, workers=args.workers)
    _log(out, f"generate count={args.count} seed={args.seed} workers={args.workers}")
    print(f"wrote {manifest['counts']} to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    sensor, material, illum, decode_cfg = _build_params(cfg, args)
    probes = SUITES[args.suite]()
    by_class: dict = {}
    for probe in probes:
        by_class.setdefault(probe.class_name, []).append(probe)
    out = Path(args.out)
    _echo_config(out, {
        "command": "calibrate", "suite": args.suite,
        "sensor": sensor.params(), "material": material.params(),
        "illumination": illum.params(), "decode": decode_cfg.params(sensor),
        "params_hash": params_hash(material, illum, sensor, decode_cfg),
    })
    tables = {cls: build_calibration(cls, plist, material, illum, sensor,
                                     decode_cfg)
              for cls, plist in sorted(by_class.items())}
    template_probes = [p[len(p) // 2] for _, p in sorted(by_class.items())]
    templates = build_templates(template_probes, material, illum, sensor,
                                decode_cfg)
    with open(out / "calibration.json", "w") as fh:
        json.dump({cls: t.to_json() for cls, t in tables.items()}, fh,
                  sort_keys=True)
        fh.write("\n")
    with open(out / "templates.json", "w") as fh:
        json.dump(templates.to_json(), fh, sort_keys=True)
        fh.write("\n")
    _log(out, f"calibrate suite={args.suite}")
    print(f"calibrated {sorted(tables)} -> {out}")
    return EXIT_OK


def _load_model(model_dir: Path):
    with open(model_dir / "calibration.json") as fh:
        tables = {cls: CalibrationTable.from_json(data)
                  for cls, data in json.load(fh).items()}
    with open(model_dir / "templates.json") as fh:
        templates = TemplateLibrary.from_json(json.load(fh))
    return tables, templates


def cmd_decode(args) -> int:
    cfg = _load_config(args.config)
    dataset = Path(args.dataset)
    manifest = read_manifest(dataset)
    spec = manifest["spec"]
    sensor = SensorConfig(**spec["sensor"])
    material = MaterialParams(**spec["material"])
    illum_kw = dict(spec["illumination"])
    illum_kw["light_dirs"] = np.array(illum_kw["light_dirs"])
    illum = IlluminationModel(**illum_kw)
    decode_kw = dict(cfg.get("decode", {}))
    decode_kw.setdefault("noise_sigma", spec["noise_sigma"])
    if args.noise is not None:
        decode_kw["noise_sigma"] = args.noise
    decode_cfg = DecodeConfig(**decode_kw)
    tables, templates = _load_model(Path(args.model))
    decoder = TactileDecoder(material, illum, sensor, decode_cfg, tables,
                             templates)
    annotations = [a for a in read_annotations(dataset)
                   if args.split in ("all", a["split"])]
    out = Path(args.out)
    _echo_config(out, {
        "command": "decode", "dataset": str(dataset), "model": str(args.model),
        "split": args.split, "decode": decode_cfg.params(sensor),
        "params_hash": params_hash(material, illum, sensor, decode_cfg),
    })
    lines = []
    for ann in annotations:
        image = load_sample_image(dataset, ann, sensor.scale_mm_per_px)
        for det in decoder.decode(image):
            row = {"index": ann["index"], "split": ann["split"]}
            row.update(det.to_json_dict())
            lines.append(row)
    with open(out / "detections.jsonl", "w") as fh:
        for row in lines:
            fh.write(json_line(row) + "\n")
    _log(out, f"decode n={len(annotations)} split={args.split}")
    print(f"decoded {len(annotations)} images -> {len(lines)} detections")
    return EXIT_OK


def _detection_from_row(row: dict) -> Detection:
    return Detection(
        box=OrientedBox(row["cx_mm"], row["cy_mm"], row["w_mm"], row["h_mm"],
                        row["theta_deg"]),
        class_name=row["class"],
        theta_deg=row["theta_deg"],
        force_n=row["force_n"],
        score=row["score"],
    )


class _GtRow:
    __slots__ = ("box", "class_name", "theta_deg", "force_n")

    def __init__(self, row: dict):
        self.box = OrientedBox(row["cx_mm"], row["cy_mm"], row["w_mm"],
                               row["h_mm"], row["theta_deg"])
        self.class_name = row["class"]
        self.theta_deg = row["theta_deg"]
        self.force_n = row["force_n"]


def cmd_eval(args) -> int:
    dataset = Path(args.dataset)
    annotations = [a for a in read_annotations(dataset)
                   if args.split in ("all", a["split"])]
    try:
        with open(args.detections) as fh:
            det_rows = [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IOError(f"cannot read detections: {exc}") from exc
    dets_by_index: dict = {}
    for row in det_rows:
        dets_by_index.setdefault(row["index"], []).append(_detection_from_row(row))
    per_sample = []
    classes = set()
    for ann in annotations:
        gt = _GtRow(ann)
        classes.add(gt.class_name)
        per_sample.append((dets_by_index.get(ann["index"], []), [gt]))
    angle_classes = None if args.angle_all else ANISOTROPIC_CLASSES
    report = evaluate_detections(per_sample, sorted(classes),
                                 iou_threshold=args.iou,
                                 angle_classes=angle_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    json_path, txt_path = write_report(report, out / "report")
    _echo_config(out, {"command": "eval", "dataset": str(dataset),
                       "detections": str(args.detections), "iou": args.iou,
                       "split": args.split})
    _log(out, f"eval n={len(per_sample)}")
    with open(txt_path) as fh:
        print(fh.read())
    return EXIT_OK


def cmd_train_toy(args) -> int:
    dataset = Path(args.dataset)
    manifest = read_manifest(dataset)
    spec = manifest["spec"]
    sensor = SensorConfig(**spec["sensor"])
    material = MaterialParams(**spec["material"])
    illum_kw = dict(spec["illumination"])
    illum_kw["light_dirs"] = np.array(illum_kw["light_dirs"])
    illum = IlluminationModel(**illum_kw)
    grid = build_region_grid(sensor.input_size)
    reference = make_reference(sensor, illum)
    annotations = read_annotations(dataset)
    classes = manifest["classes"]

    def collect(split):
        feats, gts, forces = [], [], []
        for ann in annotations:
            if ann["split"] != split:
                continue
            image = load_sample_image(dataset, ann, sensor.scale_mm_per_px)
            feats.append(cell_features(image, reference, grid))
            gts.append([_GtRow(ann)])
            forces.append(ann["force_n"])
        return feats, gts, forces

    train_f, train_g, _ = collect("train")
    val_f, _, val_forces = collect("val")
    init = ToyHead.load(args.resume) if args.resume else None
    result = fit_toy_head(train_f, train_g, grid, sensor.scale_mm_per_px,
                          classes, learning_rate=args.lr, epochs=args.epochs,
                          init_head=init)
    out = Path(args.out)
    _echo_config(out, {"command": "train-toy", "dataset": str(dataset),
                       "lr": args.lr, "epochs": args.epochs,
                       "resume": args.resume})
    result.head.save(out / "head.json")
    with open(out / "curve.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(result.losses):
            fh.write(f"{i},{loss!r}\n")
    if val_f:
        errs = [abs(predict_sample_force(result.head, f, grid,
                                         sensor.scale_mm_per_px) - gt)
                for f, gt in zip(val_f, val_forces)]
        print(f"val force MAE: {float(np.mean(errs)):.4f} N over {len(errs)} samples")
    _log(out, f"train-toy epochs={len(result.losses)} diverged={result.diverged}")
    if result.diverged:
        print("training diverged (five consecutive loss increases)",
              file=sys.stderr)
        return EXIT_CONTRACT
    print(f"trained {len(result.losses)} epochs, final loss {result.losses[-1]:.4f}")
    return EXIT_OK


def cmd_resolution(args) -> int:
    cfg = _load_config(args.config)
    sensor, material, illum, _ = _build_params(cfg, args)
    freqs = [float(v) for v in args.frequencies.split(",")]
    out = Path(args.out)
    _echo_config(out, {"command": "resolution", "frequencies": freqs,
                       "sensor": sensor.params()})
    limits = {}
    for orientation in ("horizontal", "vertical"):
        sweep = resolution_sweep(freqs, orientation, material, illum, sensor)
        with open(out / f"sweep_{orientation}.csv", "w") as fh:
            fh.write("frequency_lp_mm,modulation,resolvable\n")
            for row in sweep.rows:
                fh.write(f"{row.frequency_lp_mm!r},{row.modulation!r},"
                         f"{int(row.resolvable)}\n")
        limits[orientation] = sweep.limit_lp_mm
        print(f"{orientation}: limit {sweep.limit_lp_mm} lp/mm")
    _log(out, f"resolution freqs={len(freqs)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tactwin",
        description="Tactile-sensor digital twin: simulate, decode, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flags override)")
        p.add_argument("--size", type=int, help="sensor raster in px")
        p.add_argument("--scale", type=float, help="mm per px")
        p.add_argument("--noise", type=float, help="pixel noise sigma")

    p = sub.add_parser("generate", help="render a synthetic labeled dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite", default="roundtrip", choices=sorted(SUITES))
    p.add_argument("--probe", choices=("sphere",),
                   help="override the suite with one probe family")
    p.add_argument("--diameters", default="10,15,20,25,30",
                   help="sphere diameters in mm when --probe sphere is given")
    p.add_argument("--force-range", default="0.8:10")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("calibrate", help="build calibration tables and templates")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--suite", default="roundtrip", choices=sorted(SUITES))
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("decode", help="extract detections from a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, help="calibrate output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--angle-all", action="store_true",
                   help="include isotropic classes in the angle MAE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="fit the linear toy head")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--resume", help="head.json to continue from")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("resolution", help="simulated stripe-target sweep")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frequencies",
                   default="0.5,1,2,3,4,5,6,7,8,9,10,11,12")
    p.set_defaults(func=cmd_resolution)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StaleCalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except (ConfigError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractViolation, AssignmentError, CalibrationError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (IOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
