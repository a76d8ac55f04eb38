"""Datasets: per-variable spatial observations with optional covariates.

CSV layout: header ``variable,x,y[,z],value,cov1..covp``, one observation per
row.  Variables may be observed at different locations (misalignment is a
property of the data, not an error); alignment is only demanded by consumers
that need it, through aligned_arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatchError, MisalignedDataError, ParseError
from .stitching import COINCIDENT_TOL, KnotSet

__all__ = [
    "VarData",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "choose_knots",
    "aligned_arrays",
]


@dataclass(frozen=True)
class VarData:
    """Observations of one variable: locations, values, covariate rows."""

    locs: np.ndarray
    values: np.ndarray
    covars: np.ndarray = None

    def __post_init__(self):
        locs = np.atleast_2d(np.asarray(self.locs, dtype=float))
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if locs.shape[0] != values.shape[0]:
            raise DimensionMismatchError(
                "locations and values differ in length (%d vs %d)"
                % (locs.shape[0], values.shape[0])
            )
        if not np.all(np.isfinite(locs)):
            raise ValueError("locations must be finite")
        object.__setattr__(self, "locs", locs)
        object.__setattr__(self, "values", values)
        if self.covars is not None:
            covars = np.atleast_2d(np.asarray(self.covars, dtype=float))
            if covars.shape[0] != values.shape[0]:
                raise DimensionMismatchError(
                    "covariate rows do not match observation count"
                )
            object.__setattr__(self, "covars", covars)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return 0 if self.covars is None else self.covars.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Observations for variables 1..q; every variable must be present."""

    frames: dict
    q: int
    dim: int

    def __post_init__(self):
        for i in self.frames:
            if not (1 <= i <= self.q):
                raise ValueError("variable id %d outside 1..%d" % (i, self.q))
        missing = [i for i in range(1, self.q + 1) if i not in self.frames]
        if missing:
            raise ValueError("no observations for variables %s" % missing)
        for i, f in self.frames.items():
            if f.locs.shape[1] != self.dim:
                raise DimensionMismatchError(
                    "variable %d has %d coordinates, expected %d"
                    % (i, f.locs.shape[1], self.dim)
                )

    def n_obs(self, i):
        return self.frames[i].n

    @property
    def total_obs(self):
        return sum(f.n for f in self.frames.values())


def load_dataset(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ParseError("%s: empty file" % path)
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] != ["variable", "x"]:
        raise ParseError("%s line 1: header must start with variable,x" % path)
    if "value" not in header:
        raise ParseError("%s line 1: header lacks a value column" % path)
    vcol = header.index("value")
    dim = vcol - 1
    if dim not in (2, 3) or header[1 : 1 + dim] != ["x", "y", "z"][:dim]:
        raise ParseError(
            "%s line 1: coordinate columns must be x,y or x,y,z" % path
        )
    p = len(header) - vcol - 1

    rows = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ParseError(
                "%s line %d: expected %d fields, got %d"
                % (path, lineno, len(header), len(parts))
            )
        try:
            i = int(parts[0])
            coords = [float(v) for v in parts[1 : 1 + dim]]
            value = float(parts[vcol])
            covs = [float(v) for v in parts[vcol + 1 :]]
        except ValueError as exc:
            raise ParseError("%s line %d: %s" % (path, lineno, exc)) from None
        rows.setdefault(i, []).append((coords, value, covs))

    frames = {}
    for i, rs in rows.items():
        locs = np.array([r[0] for r in rs])
        values = np.array([r[1] for r in rs])
        covars = np.array([r[2] for r in rs]) if p else None
        frames[i] = VarData(locs=locs, values=values, covars=covars)
    return Dataset(frames=frames, q=max(rows), dim=dim)


def save_dataset(dataset, path):
    dim = dataset.dim
    p = max(f.p for f in dataset.frames.values())
    for i, f in dataset.frames.items():
        if f.p != p:
            raise DimensionMismatchError(
                "variable %d has %d covariates; CSV needs a constant count"
                % (i, f.p)
            )
    header = ["variable"] + ["x", "y", "z"][:dim] + ["value"]
    header += ["cov%d" % (k + 1) for k in range(p)]
    lines = [",".join(header)]
    for i in sorted(dataset.frames):
        f = dataset.frames[i]
        for r in range(f.n):
            fields = [str(i)]
            fields += ["%.17g" % c for c in f.locs[r]]
            fields.append("%.17g" % f.values[r])
            if p:
                fields += ["%.17g" % c for c in f.covars[r]]
            lines.append(",".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def choose_knots(dataset, cap=None, grid_size=None):
    """Default knot set: union of data locations, deduplicated; above the
    cap, a regular grid over the bounding box instead."""
    pts = np.vstack([f.locs for _, f in sorted(dataset.frames.items())])
    uniq = [pts[0]]
    for r in range(1, pts.shape[0]):
        d = cdist(pts[r : r + 1], np.asarray(uniq)).min()
        if d >= COINCIDENT_TOL:
            uniq.append(pts[r])
    uniq = np.asarray(uniq)
    if cap is None or uniq.shape[0] <= cap:
        return KnotSet(uniq)
    if dataset.dim != 2:
        raise NotImplementedError("grid fallback implemented for d=2 only")
    g = grid_size if grid_size is not None else max(2, int(np.sqrt(cap)))
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    xs = np.linspace(lo[0], hi[0], g)
    ys = np.linspace(lo[1], hi[1], g)
    X, Y = np.meshgrid(xs, ys)
    return KnotSet(np.column_stack([X.ravel(), Y.ravel()]))


def aligned_arrays(dataset, knots):
    """Require every variable observed exactly at the knots; returns
    (Y, X) with Y of shape (q, n) in knot order and X a dict of covariate
    matrices (or None for covariate-free variables)."""
    n = knots.count
    Y = np.empty((dataset.q, n))
    X = {}
    for i in range(1, dataset.q + 1):
        f = dataset.frames[i]
        if f.n != n:
            raise MisalignedDataError(
                "variable %d has %d observations but there are %d knots"
                % (i, f.n, n)
            )
        d = cdist(knots.locations, f.locs)
        match = np.argmin(d, axis=1)
        if d[np.arange(n), match].max() > COINCIDENT_TOL or len(set(match)) != n:
            raise MisalignedDataError(
                "variable %d is not observed at every knot" % i
            )
        Y[i - 1] = f.values[match]
        X[i] = f.covars[match] if f.covars is not None else None
    return Y, X
