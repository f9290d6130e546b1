"""The six ASMLELM classifiers: training, prediction, cross-validation, storage."""

from __future__ import annotations

import hashlib
import itertools
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import elm, solver
from .data_model import SampleSet, atomic_write_bytes, one_hot
from .kernels import gaussian_gram
from .wcf import WcfConfig, combine_hidden, spatial_mean, wcf_kernel

VARIANTS = ("asml_belm", "asml_nlelm", "asml_kelm")

# exponent a of lambda = 2^a used when the caller gives none
DEFAULT_A = {"asml_belm": -10, "asml_nlelm": -10, "asml_kelm": -17}
DEFAULT_A_WCF = -20
DEFAULT_L = {"asml_belm": 450, "asml_nlelm": 1000}

C_EXPONENTS = tuple(range(1, 16))
SIGMA_EXPONENTS = tuple(range(-6, 2))


def derive_seed(root: int, name: str) -> int:
    """Sub-seed for a named component, stable across runs and platforms."""
    digest = hashlib.sha256(f"{int(root)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ClassifierSpec:
    variant: str = "asml_belm"
    wcf: bool = False
    L: int | None = None
    C: float = 2.0 ** 10
    sigma_w: float = 1.0
    sigma_s: float = 1.0
    solver: solver.SolverConfig | None = None
    wcf_cfg: WcfConfig = field(default_factory=WcfConfig)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.L is None and self.variant != "asml_kelm":
            object.__setattr__(self, "L", DEFAULT_L[self.variant])
        if self.solver is None:
            a = DEFAULT_A_WCF if self.wcf else DEFAULT_A[self.variant]
            object.__setattr__(self, "solver", solver.SolverConfig.from_exponent(a))
        rule = "linear" if self.variant == "asml_belm" else "sqrt"
        if self.wcf_cfg.combine_rule != rule:
            object.__setattr__(self, "wcf_cfg", replace(self.wcf_cfg, combine_rule=rule))
        if not (self.C > 0 and self.sigma_w > 0 and self.sigma_s > 0):
            raise ValueError("C and the kernel widths must be positive")

    @property
    def name(self) -> str:
        base = self.variant.replace("_", "").upper()
        return base + ("-WCFs" if self.wcf else "")

    @property
    def is_kernel(self) -> bool:
        return self.variant == "asml_kelm"


@dataclass
class TrainedModel:
    spec: ClassifierSpec
    n_classes: int
    coefficients: np.ndarray
    hidden: elm.HiddenLayer | None = None
    train_w: np.ndarray | None = None
    train_s: np.ndarray | None = None
    scale: tuple = (0.0, 1.0)
    trace: solver.SolverTrace | None = None


def _spatial(spec, samples, cube):
    if cube is None:
        raise ValueError(f"{spec.name} needs the image cube for spatial features")
    return spatial_mean(cube, samples.coords, spec.wcf_cfg)


def _hidden_design(spec, layer, Xw, Xs):
    Hw = elm.hidden_map(layer, Xw)
    if not spec.wcf:
        return Hw
    return combine_hidden(Hw, elm.hidden_map(layer, Xs), spec.wcf_cfg)


def _kernel_design(spec, Xw, Xs, Xw2=None, Xs2=None):
    if spec.wcf:
        return wcf_kernel(Xw, Xs, spec.wcf_cfg.mu, spec.sigma_w, spec.sigma_s, Xw2, Xs2)
    return gaussian_gram(Xw, Xw if Xw2 is None else Xw2, spec.sigma_w)


def train(spec: ClassifierSpec, samples: SampleSet, cube=None, n_classes=None,
          scale=(0.0, 1.0)) -> TrainedModel:
    """Fit one of the six classifiers.

    The closed-form ELM solution (pseudoinverse, ridge or kernel) seeds the
    sparse multinomial-logistic refinement.
    """
    if samples.n == 0:
        raise ValueError("empty training set")
    M = int(n_classes or samples.labels.max())
    missing = sorted(set(range(1, M + 1)) - set(samples.labels.tolist()))
    if missing:
        raise ValueError(f"training set lacks classes {missing}")
    Y = one_hot(samples.labels, M)
    Xw = samples.features
    Xs = _spatial(spec, samples, cube) if spec.wcf else None

    layer = None
    if spec.is_kernel:
        Phi = _kernel_design(spec, Xw, Xs)
        coef0 = elm.solve_kelm(Phi, Y, spec.C)
    else:
        layer = elm.init_hidden(derive_seed(spec.seed, "hidden"), spec.L, samples.d)
        Phi = _hidden_design(spec, layer, Xw, Xs)
        if spec.variant == "asml_belm":
            coef0 = elm.solve_belm(Phi, Y)
        else:
            coef0 = elm.solve_nlelm(Phi, Y, spec.C)

    coef, trace = solver.fit(coef0, Phi, Y, spec.solver)
    return TrainedModel(
        spec=spec,
        n_classes=M,
        coefficients=coef,
        hidden=layer,
        train_w=np.ascontiguousarray(Xw) if spec.is_kernel else None,
        train_s=np.ascontiguousarray(Xs) if spec.is_kernel and spec.wcf else None,
        scale=tuple(float(s) for s in scale),
        trace=trace,
    )


def design_matrix(model: TrainedModel, query: SampleSet, cube=None) -> np.ndarray:
    spec = model.spec
    expected = model.train_w.shape[0] if spec.is_kernel else model.hidden.d
    if query.d != expected:
        raise ValueError(f"query has {query.d} features, model expects {expected}")
    Xs = _spatial(spec, query, cube) if spec.wcf else None
    if spec.is_kernel:
        return _kernel_design(spec, model.train_w, model.train_s, query.features, Xs)
    return _hidden_design(spec, model.hidden, query.features, Xs)


def predict(model: TrainedModel, query: SampleSet, cube=None, chunk: int = 8192):
    """Return ``(labels, probs)``; ties in the argmax go to the smallest class."""
    probs = np.empty((model.n_classes, query.n))
    for start in range(0, query.n, chunk):
        part = query.subset(np.arange(start, min(start + chunk, query.n)))
        probs[:, start:start + part.n] = solver.softmax_probs(
            model.coefficients, design_matrix(model, part, cube))
    labels = np.argmax(probs, axis=0) + 1 if query.n else np.zeros(0, dtype=np.int64)
    return labels, probs


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CvResult:
    best_C: float
    best_sigma: float
    C_grid: tuple
    sigma_grid: tuple
    scores: np.ndarray  # (len(C_grid), len(sigma_grid), folds)

    def mean_scores(self) -> np.ndarray:
        return self.scores.mean(axis=2)


def fold_assignment(labels, folds: int, seed: int) -> np.ndarray:
    """Stratified fold index per sample; a pure function of ``(seed, labels)``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(derive_seed(seed, "cv-folds"))
    out = np.empty(labels.size, dtype=np.int64)
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        if members.size < folds:
            raise ValueError(f"class {k} has {members.size} samples, fewer than {folds} folds")
        members = members[rng.permutation(members.size)]
        out[members] = np.arange(members.size) % folds
    return out


def cross_validate(spec: ClassifierSpec, samples: SampleSet, cube=None, C_grid=None,
                   sigma_grid=None, folds: int = 3, seed: int | None = None) -> CvResult:
    """Grid search over ``C`` and ``sigma`` by stratified k-fold overall accuracy.

    ``sigma`` sets both kernel widths. The best point has the highest mean
    fold accuracy; ties go to the smaller ``C``, then the smaller ``sigma``.
    """
    C_grid = tuple(sorted(C_grid if C_grid is not None else [2.0 ** p for p in C_EXPONENTS]))
    sigma_grid = tuple(sorted(sigma_grid if sigma_grid is not None
                              else [2.0 ** q for q in SIGMA_EXPONENTS]))
    if not C_grid or not sigma_grid:
        raise ValueError("empty grid")
    seed = spec.seed if seed is None else seed
    assign = fold_assignment(samples.labels, folds, seed)
    M = int(samples.labels.max())

    scores = np.zeros((len(C_grid), len(sigma_grid), folds))
    for (i, C), (j, sigma) in itertools.product(enumerate(C_grid), enumerate(sigma_grid)):
        point = replace(spec, C=C, sigma_w=sigma, sigma_s=sigma)
        for f in range(folds):
            fit_set = samples.subset(np.flatnonzero(assign != f))
            held = samples.subset(np.flatnonzero(assign == f))
            model = train(point, fit_set, cube, n_classes=M)
            pred, _ = predict(model, held, cube)
            scores[i, j, f] = np.mean(pred == held.labels)

    mean = scores.mean(axis=2)
    best = (0, 0)
    for i, j in itertools.product(range(len(C_grid)), range(len(sigma_grid))):
        if mean[i, j] > mean[best]:
            best = (i, j)
    return CvResult(C_grid[best[0]], sigma_grid[best[1]], C_grid, sigma_grid, scores)


# ---------------------------------------------------------------------------
# model files

MAGIC = b"ASMLELM\x00"
FORMAT_VERSION = 1


def _spec_to_dict(spec: ClassifierSpec) -> dict:
    d = asdict(spec)
    d["solver"] = asdict(spec.solver)
    d["wcf_cfg"] = asdict(spec.wcf_cfg)
    return d


def _spec_from_dict(d: dict) -> ClassifierSpec:
    d = dict(d)
    d["solver"] = solver.SolverConfig(**d["solver"])
    d["wcf_cfg"] = WcfConfig(**d["wcf_cfg"])
    return ClassifierSpec(**d)


def model_to_bytes(model: TrainedModel) -> bytes:
    arrays = {"scale": np.asarray(model.scale, dtype=np.float64),
              "coefficients": model.coefficients}
    if model.hidden is not None:
        arrays["W"] = model.hidden.W
        arrays["b"] = model.hidden.b
    if model.train_w is not None:
        arrays["train_w"] = model.train_w
    if model.train_s is not None:
        arrays["train_s"] = model.train_s
    header = {
        "spec": _spec_to_dict(model.spec),
        "n_classes": model.n_classes,
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values()]
    return b"".join(parts)


def model_from_bytes(raw: bytes) -> TrainedModel:
    if raw[:8] != MAGIC:
        raise ValueError("not a model file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    header = json.loads(raw[16:16 + hlen])
    offset = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                              offset=offset).reshape(entry["shape"]).copy()
        offset += 8 * count
    if offset != len(raw):
        raise ValueError("model file has trailing or missing bytes")
    hidden = elm.HiddenLayer(arrays["W"], arrays["b"]) if "W" in arrays else None
    return TrainedModel(
        spec=_spec_from_dict(header["spec"]),
        n_classes=header["n_classes"],
        coefficients=arrays["coefficients"],
        hidden=hidden,
        train_w=arrays.get("train_w"),
        train_s=arrays.get("train_s"),
        scale=tuple(arrays["scale"].tolist()),
    )


def save_model(model: TrainedModel, path) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path) -> TrainedModel:
    return model_from_bytes(Path(path).read_bytes())
