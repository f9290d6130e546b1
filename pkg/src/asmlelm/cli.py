"""Command-line front end.

Subcommands: ``synth``, ``train``, ``evaluate``, ``sweep`` and ``crossval``.
Runs are driven by a JSON config (see :class:`RunConfig`); a handful of
flags override it. Every output goes under the configured output directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data_model as dm
from . import metrics, pipeline, synth
from .solver import SolverConfig
from .wcf import WcfConfig

log = logging.getLogger("asmlelm")

# class 0 (unlabeled) is black; classes cycle through the remaining 16
PALETTE = np.array([
    (0, 0, 0),
    (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0),
    (0, 255, 255), (255, 0, 255), (176, 48, 96), (46, 139, 87),
    (160, 32, 240), (255, 127, 80), (127, 255, 212), (218, 112, 214),
    (160, 82, 45), (127, 255, 0), (216, 191, 216), (238, 0, 0),
], dtype=np.uint8)


class ConfigError(ValueError):
    pass


def _take(cls, raw, where):
    """Build dataclass ``cls`` from ``raw``, rejecting unknown keys."""
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class DataSection:
    cube: str | None = None
    labels: str | None = None


@dataclass
class SplitSection:
    fraction: float | None = None
    count: int | None = None

    def __post_init__(self):
        if (self.fraction is None) == (self.count is None):
            raise ValueError("give exactly one of fraction or count")


@dataclass
class ClassifierSection:
    variant: str = "asml_belm"
    wcf: bool = False
    L: int | None = None
    C: float = 2.0 ** 10
    sigma_w: float = 1.0
    sigma_s: float = 1.0
    a: float | None = None
    gamma: float | None = None
    max_iters: int = 200
    tol_beta: float = 1e-6
    tol_grad: float = 1e-5
    lambda_floor_eps: float = 1e-8
    mode: str = "admm"
    window: int = 13
    z: float = 0.2
    mu: float = 0.1

    def default_a(self) -> float:
        if self.a is not None:
            return self.a
        return pipeline.DEFAULT_A_WCF if self.wcf else pipeline.DEFAULT_A[self.variant]

    def to_spec(self, seed: int) -> pipeline.ClassifierSpec:
        solver_cfg = SolverConfig(lam=2.0 ** self.default_a(), gamma=self.gamma,
                                  max_iters=self.max_iters, tol_beta=self.tol_beta,
                                  tol_grad=self.tol_grad,
                                  lambda_floor_eps=self.lambda_floor_eps, mode=self.mode)
        return pipeline.ClassifierSpec(
            variant=self.variant, wcf=self.wcf, L=self.L, C=self.C,
            sigma_w=self.sigma_w, sigma_s=self.sigma_s, solver=solver_cfg,
            wcf_cfg=WcfConfig(window=self.window, z=self.z, mu=self.mu), seed=seed)


@dataclass
class CvSection:
    C_exponents: list = field(default_factory=lambda: list(pipeline.C_EXPONENTS))
    sigma_exponents: list | None = None
    folds: int = 3


@dataclass
class SynthSection:
    rows: int = 16
    cols: int = 16
    n_classes: int = 4
    bands: int = 10
    block: int = 4
    separation: float = 1.0
    noise: float = 0.1
    seed: int = 0


@dataclass
class RunConfig:
    """Validated run configuration.

    ``data`` points at a cube and label file pair; alternatively ``synthetic``
    describes a generated scene. Relative paths resolve against the config
    file's directory.
    """

    data: DataSection = field(default_factory=DataSection)
    synthetic: SynthSection | None = None
    split: SplitSection = field(default_factory=lambda: SplitSection(fraction=0.1))
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    cv: CvSection = field(default_factory=CvSection)
    seed: int = 0
    out: str = "runs/default"
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"data", "synthetic", "split", "classifier", "cv", "seed", "out"}
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        cfg = cls(
            data=_take(DataSection, raw.get("data"), "data"),
            synthetic=(_take(SynthSection, raw["synthetic"], "synthetic")
                       if raw.get("synthetic") is not None else None),
            split=(_take(SplitSection, raw["split"], "split")
                   if "split" in raw else SplitSection(fraction=0.1)),
            classifier=_take(ClassifierSection, raw.get("classifier"), "classifier"),
            cv=_take(CvSection, raw.get("cv"), "cv"),
            seed=raw.get("seed", 0),
            out=raw.get("out", "runs/default"),
            base_dir=Path(base_dir),
        )
        if not isinstance(cfg.seed, int):
            raise ConfigError("seed must be an integer")
        if cfg.synthetic is None and not (cfg.data.cube and cfg.data.labels):
            raise ConfigError("config needs data.cube and data.labels, or a synthetic section")
        # fail early on classifier settings
        try:
            cfg.classifier.to_spec(cfg.seed)
        except ValueError as exc:
            raise ConfigError(f"classifier: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {p} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, p.parent)

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    c = cfg.classifier
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = str(Path(args.out).resolve())
    if getattr(args, "variant", None) is not None:
        variant = args.variant.lower().replace("-", "_")
        c.wcf = variant.endswith("_wcf") or variant.endswith("_wcfs")
        c.variant = variant.split("_wcf")[0]
    for flag, attr in (("a", "a"), ("L", "L"), ("window", "window"), ("mu", "mu")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(c, attr, value)
    try:
        c.to_spec(cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"classifier: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# shared steps


def load_scene(cfg: RunConfig):
    if cfg.synthetic is not None:
        s = cfg.synthetic
        return synth.make_scene(s.rows, s.cols, s.n_classes, s.bands, s.block,
                                s.separation, s.noise, s.seed)
    return dm.load_cube(cfg.resolve(cfg.data.cube)), dm.load_labels(cfg.resolve(cfg.data.labels))


def prepare(cfg: RunConfig):
    """Load, scale and split; returns ``(scaled_cube, grid, train, test, scale)``."""
    cube, grid = load_scene(cfg)
    scale = (float(cube.values.min()), float(cube.values.max()))
    cube = dm.apply_scale(cube, *scale)
    split_seed = pipeline.derive_seed(cfg.seed, "split")
    train, test = dm.split_per_class(grid, cube, fraction=cfg.split.fraction,
                                     count=cfg.split.count, seed=split_seed)
    return cube, grid, train, test, scale


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def class_map_ppm(label_map: np.ndarray) -> bytes:
    rows, cols = label_map.shape
    idx = np.where(label_map > 0, (label_map - 1) % 16 + 1, 0)
    return f"P6\n{cols} {rows}\n255\n".encode() + PALETTE[idx].tobytes()


def _evaluate(model, cube, grid, test):
    pred, _ = pipeline.predict(model, test, cube)
    cm = metrics.confusion(test.labels, pred, model.n_classes)
    label_map = np.zeros(grid.shape, dtype=np.int64)
    labeled = dm.flatten_labeled(cube, grid)
    all_pred, _ = pipeline.predict(model, labeled, cube)
    label_map[labeled.coords[:, 0], labeled.coords[:, 1]] = all_pred
    return cm, label_map


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cube, grid = synth.make_scene(args.rows, args.cols, args.classes, args.bands,
                                  args.block, args.separation, args.noise, args.seed)
    out = Path(args.out)
    # cube and labels need distinct stems since each gets a <stem>.json header
    dm.write_cube(cube, out / "scene.cube")
    dm.write_labels(grid, out / "truth.labels")
    print(f"wrote {out / 'scene.cube'} and {out / 'truth.labels'}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    cube, grid, train, test, scale = prepare(cfg)
    spec = cfg.classifier.to_spec(cfg.seed)
    model = pipeline.train(spec, train, cube, n_classes=grid.n_classes, scale=scale)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "trace.csv", model.trace.to_csv())
    manifest = {
        "command": "train",
        "classifier": spec.name,
        "config": cfg.to_dict(),
        "lambda": spec.solver.lam,
        "gamma": spec.solver.gamma,
        "L": spec.L,
        "n_train": train.n,
        "n_test": test.n,
        "iterations": len(model.trace),
        "converged": model.trace.converged,
        "seed": cfg.seed,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    pipeline.save_model(model, out / "model.bin")
    print(f"{spec.name}: trained on {train.n} samples, model written to {out / 'model.bin'}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model_path = Path(args.model) if args.model else cfg.out_dir / "model.bin"
    model = pipeline.load_model(model_path)
    cube, grid = load_scene(cfg)
    cube = dm.apply_scale(cube, *model.scale)
    _, test = dm.split_per_class(grid, cube, fraction=cfg.split.fraction,
                                 count=cfg.split.count,
                                 seed=pipeline.derive_seed(cfg.seed, "split"))
    cm, label_map = _evaluate(model, cube, grid, test)
    out = cfg.out_dir
    _write_text(out / "metrics.csv", metrics.report_csv(cm))
    _write_text(out / "confusion.csv", metrics.confusion_csv(cm))
    (out / "map.ppm").write_bytes(class_map_ppm(label_map))
    print(f"{model.spec.name}: OA {100 * metrics.oa(cm):.2f}  AA {100 * metrics.aa(cm):.2f}"
          f"  k {100 * metrics.kappa(cm):.2f}")
    return 0


def parse_values(text: str) -> list:
    """``"1,3,5"`` or an inclusive integer range ``"-20:0"`` (optionally ``":step"``)."""
    text = text.strip()
    if ":" in text and "," not in text:
        parts = [int(p) for p in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else (1 if stop >= start else -1)
        return list(range(start, stop + (1 if step > 0 else -1), step))
    values = [float(v) for v in text.split(",") if v.strip()]
    return [int(v) if v.is_integer() else v for v in values]


def cmd_sweep(cfg: RunConfig, args) -> int:
    axis = args.axis
    values = sorted(parse_values(args.values))
    if not values:
        raise ConfigError("no sweep values given")
    cube, grid, train, test, scale = prepare(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([axis, "OA"])
    for value in values:
        section = dataclasses.replace(cfg.classifier, **{axis: value})
        spec = section.to_spec(cfg.seed)
        model = pipeline.train(spec, train, cube, n_classes=grid.n_classes, scale=scale)
        pred, _ = pipeline.predict(model, test, cube)
        acc = metrics.oa(metrics.confusion(test.labels, pred, grid.n_classes))
        w.writerow([value, f"{100 * acc:.2f}"])
        log.info("%s=%s OA=%.2f", axis, value, 100 * acc)
    _write_text(cfg.out_dir / f"sweep_{axis}.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


def cmd_crossval(cfg: RunConfig, args) -> int:
    cube, grid, train, _, _ = prepare(cfg)
    spec = cfg.classifier.to_spec(cfg.seed)
    C_grid = [2.0 ** p for p in cfg.cv.C_exponents]
    if cfg.cv.sigma_exponents is not None:
        sigma_grid = [2.0 ** q for q in cfg.cv.sigma_exponents]
    elif spec.is_kernel:
        sigma_grid = [2.0 ** q for q in pipeline.SIGMA_EXPONENTS]
    else:
        sigma_grid = [spec.sigma_w]
    res = pipeline.cross_validate(spec, train, cube, C_grid, sigma_grid, cfg.cv.folds, cfg.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["C", "sigma", "mean_OA"] + [f"fold_{f + 1}" for f in range(cfg.cv.folds)])
    mean = res.mean_scores()
    for i, C in enumerate(res.C_grid):
        for j, sigma in enumerate(res.sigma_grid):
            w.writerow([repr(C), repr(sigma), f"{100 * mean[i, j]:.4f}"]
                       + [f"{100 * s:.4f}" for s in res.scores[i, j]])
    _write_text(cfg.out_dir / "cv.csv", buf.getvalue())
    print(f"best C={res.best_C:g} sigma={res.best_sigma:g}")
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "crossval": cmd_crossval}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asmlelm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic scene")
    s.add_argument("--out", required=True)
    s.add_argument("--rows", type=int, default=16)
    s.add_argument("--cols", type=int, default=16)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--bands", type=int, default=10)
    s.add_argument("--block", type=int, default=4)
    s.add_argument("--separation", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--variant")
        p.add_argument("--a", type=float)
        p.add_argument("--L", type=int)
        p.add_argument("--window", type=int)
        p.add_argument("--mu", type=float)
        if name == "evaluate":
            p.add_argument("--model", help="model file (default: <out>/model.bin)")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=["a", "L", "window"])
            p.add_argument("--values", required=True,
                           help="comma list or inclusive range start:stop[:step]; "
                                "write --values=-20:0 for negative starts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = apply_overrides(RunConfig.load(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
