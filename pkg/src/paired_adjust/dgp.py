"""Synthetic paired-experiment generator.

Latent pair covariates are four independent standard normal draws for
the first unit; the second unit's values sit close by (conditional
variance 1/4), which is what makes the pairing informative. The
analyst never sees the latents, only four deliberately awkward
transformations of them, so any regression on the observed covariates
is misspecified by construction.

Two response settings are provided. Under ``parallel`` the treated and
control surfaces coincide, so every unit-level effect is exactly zero.
Under ``nonparallel`` the surfaces differ and the unit-level effect
13.7 w1 + 10.7 w3 - 13.7 w4 has mean zero over the latent law but
substantial variance. Noise is drawn once per unit and added to both
potential outcomes, so treated-minus-control contrasts are noise-free.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from .errors import DimensionMismatch, MalformedRow, PairViolation
from .experiment_model import _parse_float, _parse_int, _readonly
from .rng import ROLE_SAMPLE, substream

SETTINGS = ("parallel", "nonparallel")


@dataclass(frozen=True)
class PotentialOutcomeSample:
    """A science table: both potential outcomes for every unit.

    ``w`` (latents) and ``x`` (observed covariates) may be absent when
    a table was assembled by hand or loaded from a file that lacked
    them; everything that only involves outcomes still works.
    """

    r_t: np.ndarray  # (n, 2) outcomes under treatment
    r_c: np.ndarray  # (n, 2) outcomes under control
    w: Optional[np.ndarray] = None  # (n, 2, 4) latent covariates
    x: Optional[np.ndarray] = None  # (n, 2, 4) observed covariates
    setting: str = "custom"
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        r_t = np.asarray(self.r_t, dtype=float)
        r_c = np.asarray(self.r_c, dtype=float)
        if r_t.ndim != 2 or r_t.shape[1] != 2 or r_c.shape != r_t.shape:
            raise DimensionMismatch(
                f"potential outcomes must both be (n, 2), got {r_t.shape} and {r_c.shape}"
            )
        if not (np.isfinite(r_t).all() and np.isfinite(r_c).all()):
            raise MalformedRow("potential outcomes must be finite")
        object.__setattr__(self, "r_t", _readonly(r_t))
        object.__setattr__(self, "r_c", _readonly(r_c))
        n = r_t.shape[0]
        for name in ("w", "x"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n, 2, 4):
                raise DimensionMismatch(
                    f"{name} must be ({n}, 2, 4), got {arr.shape}"
                )
            if not np.isfinite(arr).all():
                raise MalformedRow(f"{name} must be finite")
            object.__setattr__(self, name, _readonly(arr))

    @property
    def n(self) -> int:
        return self.r_t.shape[0]

    @property
    def levels(self) -> np.ndarray:
        """Per-unit average of the two potential outcomes, (n, 2)."""
        return (self.r_t + self.r_c) / 2.0

    @property
    def effects(self) -> np.ndarray:
        """Pair-level average treatment effect Delta_i, (n,)."""
        tau = self.r_t - self.r_c
        return (tau[:, 0] + tau[:, 1]) / 2.0

    @property
    def sate(self) -> float:
        """Average effect over the n pairs actually in the sample."""
        return float(self.effects.mean())


def draw_pair_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Latent covariates for n pairs, shape (n, 2, 4).

    First-unit values are standard normal; second-unit values equal the
    first plus N(0, 1/4) noise, independently across the four
    coordinates. Draw order (all first units, then all second units) is
    fixed so a given stream always produces the same table.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    w1 = rng.standard_normal((n, 4))
    w2 = w1 + 0.5 * rng.standard_normal((n, 4))
    return np.stack([w1, w2], axis=1)


def observe_covariates(w: np.ndarray) -> np.ndarray:
    """Map latent 4-vectors to the observed, distorted covariates.

    Works on any array whose last axis has length 4.
    """
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 4:
        raise DimensionMismatch(f"latents must have 4 columns, got {w.shape}")
    w1, w2, w3, w4 = (w[..., j] for j in range(4))
    x1 = np.exp(w1 / 2.0)
    x2 = w2 / (1.0 + np.exp(w1)) + 10.0
    x3 = ((w1 * w3) / 25.0 + 0.6) ** 3
    x4 = (w2 + w4 + 20.0) ** 2
    return np.stack([x1, x2, x3, x4], axis=-1)


def response_surfaces(w: np.ndarray, setting: str) -> tuple[np.ndarray, np.ndarray]:
    """Treated and control mean surfaces evaluated at the latents."""
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}, got {setting!r}")
    w = np.asarray(w, dtype=float)
    w1, w2, w3, w4 = (w[..., j] for j in range(4))
    mu_t = 27.4 * w1 + 13.7 * (w2 + w3 + w4)
    if setting == "parallel":
        mu_c = mu_t
    else:
        mu_c = 13.7 * (w1 + w2) + 3.0 * w3 + 27.4 * w4
    return mu_t, mu_c


def generate_sample(
    n: int,
    setting: str,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> PotentialOutcomeSample:
    """Draw a complete science table.

    Either pass a seed (a dedicated substream is derived from it) or an
    explicit generator; with neither, entropy comes from the OS. Draw
    order is fixed: latents first, then one noise value per unit,
    shared between the treated and control outcomes.
    """
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}, got {setting!r}")
    if rng is None:
        if seed is None:
            rng = np.random.default_rng()
        else:
            rng = substream(seed, ROLE_SAMPLE)
    w = draw_pair_covariates(n, rng)
    eps = rng.standard_normal((n, 2))
    mu_t, mu_c = response_surfaces(w, setting)
    return PotentialOutcomeSample(
        r_t=mu_t + eps,
        r_c=mu_c + eps,
        w=w,
        x=observe_covariates(w),
        setting=setting,
        seed=seed,
    )


_W_COLS = tuple(f"w{j}" for j in range(1, 5))
_X_COLS = tuple(f"x{j}" for j in range(1, 5))


def write_science_table(
    sample: PotentialOutcomeSample,
    dest: Union[str, Path, TextIO],
    sidecar: Union[str, Path, TextIO, None] = None,
) -> None:
    """Write a science table as CSV, optionally with a JSON sidecar.

    Columns: pair, unit, w1..w4 (if present), x1..x4 (if present),
    r_t, r_c. The sidecar records {n, setting, seed, sate}.
    """
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_science_table(sample, fh, sidecar)
        return
    writer = csv.writer(dest, lineterminator="\n")
    header = ["pair", "unit"]
    if sample.w is not None:
        header += list(_W_COLS)
    if sample.x is not None:
        header += list(_X_COLS)
    header += ["r_t", "r_c"]
    writer.writerow(header)
    for i in range(sample.n):
        for j in range(2):
            row: list = [i + 1, j + 1]
            if sample.w is not None:
                row += [repr(float(v)) for v in sample.w[i, j]]
            if sample.x is not None:
                row += [repr(float(v)) for v in sample.x[i, j]]
            row += [repr(float(sample.r_t[i, j])), repr(float(sample.r_c[i, j]))]
            writer.writerow(row)
    if sidecar is None:
        return
    meta = {
        "n": sample.n,
        "setting": sample.setting,
        "seed": sample.seed,
        "sate": sample.sate,
    }
    if isinstance(sidecar, (str, Path)):
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, sort_keys=True)
            fh.write("\n")
    else:
        json.dump(meta, sidecar, sort_keys=True)
        sidecar.write("\n")


def load_science_table(
    source: Union[str, Path, TextIO, Iterable[str]],
    sidecar: Union[str, Path, TextIO, None] = None,
) -> PotentialOutcomeSample:
    """Read a science table written by :func:`write_science_table`.

    pair, unit, r_t, r_c are required; the w and x column groups are
    optional but must be complete and in order when present. When a
    sidecar is supplied, its stored average effect is checked against
    the table.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_science_table(fh, sidecar)

    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedRow("empty file") from None
    expect = ["pair", "unit"]
    pos = 2
    has_w = header[pos : pos + 4] == list(_W_COLS)
    if has_w:
        expect += list(_W_COLS)
        pos += 4
    has_x = header[pos : pos + 4] == list(_X_COLS)
    if has_x:
        expect += list(_X_COLS)
        pos += 4
    expect += ["r_t", "r_c"]
    if header != expect:
        raise MalformedRow(
            f"science table header must be pair,unit[,w1..w4][,x1..x4],r_t,r_c; got {header}"
        )

    width = len(expect)
    rows: dict[int, dict[int, list[float]]] = {}
    order: list[int] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        where = f"line {lineno}"
        if len(row) != width:
            raise MalformedRow(f"{where}: expected {width} fields, got {len(row)}")
        pair = _parse_int(row[0], where)
        unit = _parse_int(row[1], where)
        if unit not in (1, 2):
            raise MalformedRow(f"{where}: unit must be 1 or 2, got {unit}")
        vals = [_parse_float(tok, where) for tok in row[2:]]
        units = rows.setdefault(pair, {})
        if pair not in order:
            order.append(pair)
        if unit in units:
            raise PairViolation(f"pair {pair}: unit {unit} appears twice")
        units[unit] = vals

    if not order:
        raise MalformedRow("no data rows")
    n = len(order)
    w = np.empty((n, 2, 4)) if has_w else None
    x = np.empty((n, 2, 4)) if has_x else None
    r_t = np.empty((n, 2))
    r_c = np.empty((n, 2))
    for i, pair in enumerate(order):
        units = rows[pair]
        if set(units) != {1, 2}:
            raise PairViolation(f"pair {pair}: needs exactly units 1 and 2")
        for j in (1, 2):
            vals = units[j]
            k = 0
            if has_w:
                w[i, j - 1] = vals[k : k + 4]  # type: ignore[index]
                k += 4
            if has_x:
                x[i, j - 1] = vals[k : k + 4]  # type: ignore[index]
                k += 4
            r_t[i, j - 1] = vals[k]
            r_c[i, j - 1] = vals[k + 1]

    setting = "custom"
    seed = None
    expected_sate = None
    if sidecar is not None:
        if isinstance(sidecar, (str, Path)):
            with open(sidecar, "r", encoding="utf-8") as fh:
                meta = json.load(fh)
        else:
            meta = json.load(sidecar)
        setting = meta.get("setting", "custom")
        seed = meta.get("seed")
        expected_sate = meta.get("sate")
        if meta.get("n") is not None and int(meta["n"]) != n:
            raise MalformedRow(f"sidecar says n={meta['n']} but table has {n} pairs")
    sample = PotentialOutcomeSample(
        r_t=r_t, r_c=r_c, w=w, x=x, setting=setting, seed=seed
    )
    if expected_sate is not None and abs(sample.sate - expected_sate) > 1e-9 * max(
        1.0, abs(expected_sate)
    ):
        raise MalformedRow(
            f"sidecar average effect {expected_sate} does not match table ({sample.sate})"
        )
    return sample
