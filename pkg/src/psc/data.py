"""Dataset ingestion, standardization, train/test splits and synthetic data."""
import csv
import hashlib
import logging
import warnings
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .geometry import complete_frame, random_frame
from .model import LabeledDataset, MixingMeasure, ModelState, NoiseScales, Standardization

log = logging.getLogger(__name__)

WBC_FEATURES = (
    "clump thickness",
    "uniformity of cell size",
    "uniformity of cell shape",
    "marginal adhesion",
    "single epithelial cell size",
    "bare nuclei",
    "bland chromatin",
    "normal nucleoli",
    "mitosis",
)


@dataclass(frozen=True)
class CsvSchema:
    """How to read a delimited file.

    ``label_column`` is a header name or a 0-based column index.  Labels are
    mapped to 1..c by ``class_order`` when given, otherwise by sorted order of
    the distinct raw values.  Rows containing ``missing`` are dropped.
    """

    label_column: object = -1
    header: bool = True
    delimiter: str = ","
    drop_columns: tuple = ()
    class_order: tuple = None
    missing: str = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("drop_columns", "class_order"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _col_index(spec, header, ncol):
    if isinstance(spec, str):
        if header is None or spec not in header:
            raise ValueError(f"column {spec!r} not found in header")
        return header.index(spec)
    idx = int(spec)
    return idx % ncol


def load_csv(path, schema=None):
    """Parse a delimited file of numeric features plus one label column."""
    schema = schema or CsvSchema()
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=schema.delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]] if schema.header else None
    body = rows[1:] if schema.header else rows
    ncol = len(rows[0])
    label_idx = _col_index(schema.label_column, header, ncol)
    drop = {_col_index(c, header, ncol) for c in schema.drop_columns} | {label_idx}
    feat_idx = [j for j in range(ncol) if j not in drop]
    names = tuple(header[j] for j in feat_idx) if header else tuple(f"x{j + 1}" for j in range(len(feat_idx)))

    X, raw_labels, dropped = [], [], 0
    first_line = 2 if schema.header else 1
    for lineno, row in enumerate(body, first_line):
        if len(row) != ncol:
            raise ValueError(f"{path}:{lineno}: expected {ncol} columns, found {len(row)}")
        cells = [c.strip() for c in row]
        if schema.missing is not None and schema.missing in cells:
            dropped += 1
            continue
        vals = []
        for j in feat_idx:
            try:
                vals.append(float(cells[j]))
            except ValueError:
                col = header[j] if header else j
                raise ValueError(f"{path}:{lineno}: column {col!r}: cannot parse {cells[j]!r}") from None
        X.append(vals)
        raw_labels.append(cells[label_idx])

    order = schema.class_order
    if order is None:
        distinct = set(raw_labels)
        try:
            order = tuple(sorted(distinct, key=float))
        except ValueError:
            order = tuple(sorted(distinct))
    order = tuple(str(o) for o in order)
    mapping = {lab: i + 1 for i, lab in enumerate(order)}
    unknown = sorted(set(raw_labels) - set(mapping))
    if unknown:
        raise ValueError(f"{path}: unknown label(s) {unknown}; expected one of {list(order)}")
    y = np.array([mapping[lab] for lab in raw_labels], dtype=int)
    X = np.array(X, dtype=float).reshape(len(y), len(feat_idx))
    counts = np.bincount(y, minlength=len(order) + 1)[1:]
    log.info("%s: %d rows kept, %d dropped, class counts %s", path, len(y), dropped, counts.tolist())
    meta = {"source": str(path), "rows_dropped": dropped, "class_labels": list(order),
            "sha256": file_hash(path)}
    return LabeledDataset(X, y, len(order), names, meta=meta)


def wbc_path():
    return resources.files("psc") / "data" / "breast-cancer-wisconsin.data"


def load_wbc(path=None):
    """Original Wisconsin breast cancer file (UCI layout).

    The id column is dropped, rows with '?' are removed (16 of 699 in the
    public file), and class 2 (benign) / 4 (malignant) become labels 1 / 2.
    Defaults to the copy bundled with the package.
    """
    path = wbc_path() if path is None else path
    schema = CsvSchema(label_column=10, header=False, drop_columns=(0,), class_order=("2", "4"),
                       missing="?")
    data = load_csv(path, schema)
    if data.m != 9:
        raise ValueError(f"{path}: expected 9 attributes, found {data.m}")
    return replace(data, feature_names=WBC_FEATURES)


def file_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


STANDARDIZE_MODES = ("feature", "isotropic", "center", "none")


def standardize(data, transform=None, mode="feature"):
    """Center and scale the features; returns (dataset, transform).

    ``mode="feature"`` scales every feature to unit variance.  ``"isotropic"``
    divides all features by one common scale (the root mean feature
    variance), which keeps angles and the isotropic-residual structure of
    the data intact; use it when features share units.  ``"center"`` only
    centers and ``"none"`` records an identity transform.  Pass ``transform`` to reapply a transform fitted elsewhere.
    Constant features keep scale 1 and trigger a warning.
    """
    if transform is None:
        if mode not in STANDARDIZE_MODES:
            raise ValueError(f"unknown standardization mode {mode!r}")
        center = data.X.mean(axis=0) if mode != "none" else np.zeros(data.m)
        sd = data.X.std(axis=0, ddof=1) if data.n > 1 else np.ones(data.m)
        flat = ~(sd > 0)
        if mode == "feature":
            if flat.any():
                names = [data.feature_names[i] for i in np.flatnonzero(flat)]
                warnings.warn(f"zero-variance feature(s) left unscaled: {names}", stacklevel=2)
            scale = np.where(flat, 1.0, sd)
        elif mode == "isotropic":
            common = np.sqrt(np.mean(sd**2))
            scale = np.full(data.m, common if common > 0 else 1.0)
        else:
            scale = np.ones(data.m)
        transform = Standardization(center, scale)
    return replace(data, X=transform.apply(data.X), standardization=transform), transform


def unstandardize(data):
    if data.standardization is None:
        return data
    return replace(data, X=data.standardization.invert(data.X), standardization=None)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = None
    test_count: int = None
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if (self.test_fraction is None) == (self.test_count is None):
            raise ValueError("give exactly one of test_fraction and test_count")
        if self.test_fraction is not None and not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")

    def n_test(self, n):
        nt = self.test_count if self.test_count is not None else int(round(self.test_fraction * n))
        if not 1 <= nt < n:
            raise ValueError(f"test size {nt} impossible for {n} observations")
        return nt


def split(data, spec):
    """Deterministic disjoint train/test split; returns (train, test)."""
    rng = np.random.default_rng(spec.seed)
    n = data.n
    nt = spec.n_test(n)
    if not spec.stratified:
        perm = rng.permutation(n)
        test = np.sort(perm[:nt])
    else:
        classes, counts = np.unique(data.y, return_counts=True)
        quota = counts * nt / n
        alloc = np.floor(quota).astype(int)
        # largest remainders fill the leftover test slots
        for i in np.argsort(-(quota - alloc), kind="stable")[: nt - alloc.sum()]:
            alloc[i] += 1
        if np.any(alloc >= counts):
            raise ValueError("stratified split impossible: a class would have no training rows")
        parts = []
        for cls, a in zip(classes, alloc):
            members = np.flatnonzero(data.y == cls)
            parts.append(rng.permutation(members)[:a])
        test = np.sort(np.concatenate(parts))
    mask = np.zeros(n, dtype=bool)
    mask[test] = True
    return data.subset(np.flatnonzero(~mask)), data.subset(test)


def sample_observations(state, n, rng):
    """Draw (X, y, z) from the joint model; labels are 1-based."""
    k, m, c = state.k, state.m, state.c
    z = rng.choice(state.P.truncation, size=n, p=state.P.weights)
    coords = state.P.mu[z] + state.scales.sigma * rng.standard_normal((n, k))
    X = coords @ state.U.T + state.theta
    if k < m:
        X += (state.scales.sigma0 * rng.standard_normal((n, m - k))) @ complete_frame(state.U).T
    cum = np.cumsum(state.P.nu[z], axis=1)
    y = 1 + np.minimum((cum < rng.uniform(size=(n, 1)) * cum[:, -1:]).sum(axis=1), c - 1)
    return X, y, z


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings; ``mu``/``nu``/``weights``/``U`` default to random draws."""

    m: int
    k: int
    c: int
    n: int
    mu: np.ndarray = None
    nu: np.ndarray = None
    weights: np.ndarray = None
    U: np.ndarray = None
    theta_norm: float = 1.0
    sigma: tuple = (1.0,)
    sigma0: float = 0.5
    n_atoms: int = 4
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def generate_synthetic(spec):
    """Draw a fixed parameter and a dataset from it; returns (dataset, true_state).

    Random atom locations are spread on a grid so that their affine hull is
    all of R^k, which makes the subspace identifiable.
    """
    if not 1 <= spec.k <= spec.m:
        raise ValueError("need 1 <= k <= m")
    rng = np.random.default_rng(spec.seed)
    k, m, c = spec.k, spec.m, spec.c
    U = random_frame(m, k, rng) if spec.U is None else np.asarray(spec.U, dtype=float)
    if spec.mu is None:
        T = max(spec.n_atoms, k + 1)
        mu = 4.0 * np.asarray(spec.sigma, dtype=float).max() * rng.standard_normal((T, k))
    else:
        mu = np.atleast_2d(np.asarray(spec.mu, dtype=float))
        T = len(mu)
    if spec.nu is None:
        nu = np.full((T, c), 0.1 / max(c - 1, 1))
        nu[np.arange(T), np.arange(T) % c] = 0.9 if c > 1 else 1.0
        nu /= nu.sum(axis=1, keepdims=True)
    else:
        nu = np.asarray(spec.nu, dtype=float)
    weights = np.full(T, 1.0 / T) if spec.weights is None else np.asarray(spec.weights, dtype=float)
    if T <= k or np.linalg.matrix_rank(mu[1:] - mu[0]) < k:
        warnings.warn("atom locations do not span R^k; the subspace is not identifiable", stacklevel=2)
    if k < m:
        theta = complete_frame(U) @ rng.standard_normal(m - k)
        theta *= spec.theta_norm / np.linalg.norm(theta)
        theta -= U @ (U.T @ theta)
    else:
        theta = np.zeros(m)
    sigma = np.broadcast_to(np.asarray(spec.sigma, dtype=float), (k,)).copy()
    state = ModelState(U, theta, NoiseScales(float(spec.sigma0), sigma), MixingMeasure(weights, mu, nu))
    state.check()
    X, y, z = sample_observations(state, spec.n, rng)
    data = LabeledDataset(X, y, c, meta={"atoms": z, "seed": spec.seed})
    return data, state
