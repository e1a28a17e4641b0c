"""Synthetic covariance paths, return simulation, the realised proxy and CSV I/O."""
from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, NotPositiveDefinite, ParseError, ShapeError
from .inference import ObservationSet
from .wishart import CovariancePath

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "na", "nan", "null", "none", "-"}


@dataclass
class SyntheticSpec:
    """Parameters of a synthetic ground-truth covariance path.

    ``kind`` is ``"periodic2d"`` or ``"equity"``.  For ``periodic2d`` the
    matrix at time ``t`` is ``R(a(t)) diag(s1(t), s2(t)) R(a(t))^T`` with
    ``s1 = 1 + amplitude sin(2 pi t / T1)``, ``s2 = 1 + amplitude cos(2 pi t / T2)``
    and rotation angle ``a = max_angle sin(2 pi t / T3)``, for ``t = t0, ..., t0 + n - 1``.
    For ``equity`` the path is a rolling-window covariance of supplied returns.
    """

    kind: str = "periodic2d"
    n_points: int = 291
    seed: int = 0
    periods: tuple = (40.0, 25.0, 60.0)
    amplitude: float = 0.5
    max_angle: float = math.pi / 4
    t0: float = 1.0
    window: int = 60

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("periodic2d", "equity"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if not 0 <= self.amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1) to keep the path PD")
        self.periods = tuple(float(p) for p in self.periods)

    @property
    def inputs(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_points, dtype=float)


def periodic_sigma(t, periods=(40.0, 25.0, 60.0), amplitude: float = 0.5,
                   max_angle: float = math.pi / 4) -> np.ndarray:
    """The periodic 2x2 covariance at (possibly fractional) times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p1, p2, p3 = periods
    s1 = 1.0 + amplitude * np.sin(2 * np.pi * t / p1)
    s2 = 1.0 + amplitude * np.cos(2 * np.pi * t / p2)
    a = max_angle * np.sin(2 * np.pi * t / p3)
    c, s = np.cos(a), np.sin(a)
    out = np.empty((len(t), 2, 2))
    out[:, 0, 0] = c * c * s1 + s * s * s2
    out[:, 1, 1] = s * s * s1 + c * c * s2
    out[:, 0, 1] = out[:, 1, 0] = (s1 - s2) * s * c
    return out


def generate_periodic_path(spec: SyntheticSpec) -> CovariancePath:
    if spec.kind != "periodic2d":
        raise ValueError("generate_periodic_path needs a periodic2d spec")
    t = spec.inputs
    return CovariancePath(t, periodic_sigma(t, spec.periods, spec.amplitude, spec.max_angle))


def _regularise(m: np.ndarray, floor: float) -> np.ndarray:
    lo = float(np.linalg.eigvalsh(m)[0])
    if lo <= floor:
        m = m + (2.0 * floor - lo) * np.eye(len(m))
    return m


def generate_equity_like_path(empirical_returns: ObservationSet, window: int,
                              floor: float = 1e-8) -> CovariancePath:
    """Rolling-window second moments of ``empirical_returns``.

    The matrix at step ``n`` uses the ``window`` returns ending at ``n``;
    steps before the first full window reuse the first full window.  Matrices
    with an eigenvalue at or below ``floor`` are shifted up to ``2 * floor``.
    """
    x = empirical_returns.x
    n, dim = x.shape
    if window < dim + 1:
        raise ValueError(f"window must be at least D + 1 = {dim + 1}")
    if n < window:
        raise InsufficientData(f"{n} returns is fewer than the window of {window}")
    outer = np.einsum("ni,nj->nij", x, x)
    csum = np.concatenate([np.zeros((1, dim, dim)), np.cumsum(outer, axis=0)])
    ends = np.maximum(np.arange(n), window - 1) + 1
    mats = (csum[ends] - csum[ends - window]) / window
    mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    mats = np.stack([_regularise(m, floor) for m in mats])
    return CovariancePath(empirical_returns.inputs.copy(), mats)


def simulate_returns(path: CovariancePath, seed=None) -> ObservationSet:
    """One draw ``x(t_n) ~ N(0, Sigma(t_n))`` per input."""
    rng = np.random.default_rng(seed)
    try:
        chol = np.linalg.cholesky(path.matrices)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("path is not strictly positive definite") from exc
    z = rng.standard_normal((len(path), path.dim))
    return ObservationSet(path.inputs.copy(), np.einsum("nij,nj->ni", chol, z))


def realized_proxy(obs: ObservationSet) -> CovariancePath:
    """``S(t_n) = x(t_n) x(t_n)^T``."""
    return CovariancePath(obs.inputs.copy(), np.einsum("ni,nj->nij", obs.x, obs.x),
                          validate=False)


def generate_path(spec: SyntheticSpec, empirical_returns: Optional[ObservationSet] = None
                  ) -> CovariancePath:
    if spec.kind == "periodic2d":
        return generate_periodic_path(spec)
    if empirical_returns is None:
        raise ValueError("equity-like paths need empirical returns")
    path = generate_equity_like_path(empirical_returns, spec.window)
    k = min(spec.n_points, len(path))
    return path.subset(slice(0, k))


@dataclass
class CsvConfig:
    """How to read a returns/prices CSV.

    ``time_column`` names a numeric or ISO-date column used as inputs (dates
    become days since the first row); without it rows are numbered 0, 1, ...
    ``columns`` selects the value columns (default: every other column).
    """

    time_column: Optional[str] = None
    columns: Optional[Sequence[str]] = None
    prices: bool = False
    demean: bool = False
    delimiter: str = ","


def _parse_time(token: str, line: int):
    """``(value, is_date)`` for a numeric or ISO-format time cell."""
    try:
        return float(token), False
    except ValueError:
        pass
    try:
        stamp = _dt.datetime.fromisoformat(token.strip())
    except ValueError as exc:
        raise ParseError(f"cannot parse time value {token!r}", line) from exc
    return stamp.replace(tzinfo=_dt.timezone.utc).timestamp() / 86400.0, True


def load_returns_csv(path, config: Optional[CsvConfig] = None) -> ObservationSet:
    """Read an :class:`ObservationSet` from a CSV file with a header row.

    Rows with a missing value are dropped (and logged); their inputs simply
    vanish from the grid.  With ``prices`` set, consecutive kept rows are
    turned into log returns ``log(P_next / P)``, each attached to the earlier
    row's input.

    Raises
    ------
    ParseError
        Non-numeric cell; carries the 1-based file line.
    ShapeError
        A row with a different number of cells than the header.
    """
    config = config or CsvConfig()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=config.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if config.time_column is not None and config.time_column not in header:
            raise ParseError(f"time column {config.time_column!r} not in header", 1)
        value_cols = list(config.columns) if config.columns else [
            h for h in header if h != config.time_column]
        missing = [c for c in value_cols if c not in header]
        if missing:
            raise ParseError(f"columns {missing} not in header", 1)
        if not value_cols:
            raise ParseError("no value columns", 1)
        idx = [header.index(c) for c in value_cols]
        t_idx = header.index(config.time_column) if config.time_column else None
        inputs, rows = [], []
        row_no = -1
        dated = False
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            row_no += 1
            if len(row) != len(header):
                raise ShapeError(f"line {line_no}: expected {len(header)} cells, got {len(row)}")
            cells = [row[i].strip() for i in idx]
            t_cell = row[t_idx].strip() if t_idx is not None else None
            if any(c.lower() in MISSING_TOKENS for c in cells) or (
                    t_cell is not None and t_cell.lower() in MISSING_TOKENS):
                logger.warning("line %d: missing value, row dropped", line_no)
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", line_no) from exc
            if t_cell is None:
                inputs.append(float(row_no))
            else:
                value, is_date = _parse_time(t_cell, line_no)
                dated = dated or is_date
                inputs.append(value)
            rows.append(values)
    x = np.array(rows, dtype=float).reshape(-1, len(value_cols))
    t = np.array(inputs, dtype=float)
    if dated and len(t):
        t = t - t[0]
    if config.prices:
        if np.any(x <= 0):
            raise ParseError("prices must be positive for log returns")
        x = np.log(x[1:] / x[:-1])
        t = t[:-1]
    if config.demean and len(x):
        x = x - x.mean(axis=0)
    return ObservationSet(t, x)


def write_returns_csv(obs: ObservationSet, path, time_label: str = "t",
                      labels: Optional[Sequence[str]] = None) -> None:
    labels = list(labels) if labels else [f"x{j + 1}" for j in range(obs.dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([time_label] + labels)
        for t, row in zip(obs.inputs, obs.x):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
