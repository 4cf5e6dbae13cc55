"""File formats and run configuration.

Counts CSV: UTF-8, header row of taxon ids after a leading sample-id column,
one sample per row, nonnegative integer cells.

Labels CSV: ``sample_id,label``.

Draws CSV: ``chain,iteration,K,K_plus,log_density,weights,labels`` where
``weights`` and ``labels`` are ``;``-delimited over the filled components and
the samples respectively. Labels are 1-based.

xi sidecar (``xi.bin``), little-endian throughout::

    bytes 0-7    magic b"DSDMXI01"
    bytes 8-31   uint64 M, K_m, J
    bytes 32-    M * K_m * J float64, row-major (record, component, taxon);
                 components beyond a record's K_plus are NaN
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import check_seed
from .model import CountMatrix, Hyperparams
from .sampler import PosteriorDraws, SamplerConfig

__all__ = [
    "ValidationError",
    "read_counts",
    "write_counts",
    "read_labels",
    "write_labels",
    "write_draws",
    "read_draws",
    "write_xi",
    "read_xi",
    "RunConfig",
    "parse_set",
    "write_json",
    "read_json",
    "XI_MAGIC",
]

XI_MAGIC = b"DSDMXI01"
DRAWS_HEADER = ["chain", "iteration", "K", "K_plus", "log_density", "weights", "labels"]


class ValidationError(ValueError):
    """Malformed input or configuration."""


def fmt_float(x) -> str:
    """Shortest round-trip text for a float; identical on every run."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


def _open_text(path, mode):
    return open(path, mode, encoding="utf-8", newline="")


def _ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


# ---- counts and labels ---------------------------------------------------

def read_counts(path) -> CountMatrix:
    with _open_text(path, "r") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    width = len(header)
    if width < 3:
        raise ValidationError(f"{path}: header needs a sample-id column and at least two taxa")
    taxa = [t.strip() for t in header[1:]]
    if len(set(taxa)) != len(taxa):
        raise ValidationError(f"{path}: duplicate taxon ids in header")
    samples, values = [], []
    for r, row in enumerate(rows[1:], start=1):
        line = r + 1
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise ValidationError(
                f"{path}: ragged row {r} (line {line}): expected {width} fields, found {len(row)}"
            )
        sid = row[0].strip()
        out = []
        for c, cell in enumerate(row[1:], start=1):
            text = cell.strip()
            try:
                v = int(text)
            except ValueError:
                raise ValidationError(
                    f"{path}: non-integer count {text!r} at row {r}, column {c} "
                    f"(line {line}, sample {sid!r}, taxon {taxa[c - 1]!r})"
                ) from None
            if v < 0:
                raise ValidationError(
                    f"{path}: negative count {v} at row {r}, column {c} "
                    f"(line {line}, sample {sid!r}, taxon {taxa[c - 1]!r})"
                )
            out.append(v)
        samples.append(sid)
        values.append(out)
    if not values:
        raise ValidationError(f"{path}: no sample rows")
    if len(set(samples)) != len(samples):
        raise ValidationError(f"{path}: duplicate sample ids")
    return CountMatrix(np.array(values, dtype=np.int64), tuple(samples), tuple(taxa))


def write_counts(path, data: CountMatrix) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *data.taxon_ids])
        for sid, row in zip(data.sample_ids, data.counts):
            w.writerow([sid, *(int(v) for v in row)])


def read_labels(path) -> dict[str, str]:
    with _open_text(path, "r") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0][:2]] != ["sample_id", "label"]:
        raise ValidationError(f"{path}: expected header 'sample_id,label'")
    out = {}
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != 2:
            raise ValidationError(f"{path}: ragged row {r} (line {r + 1}): expected 2 fields")
        sid, label = row[0].strip(), row[1].strip()
        if sid in out:
            raise ValidationError(f"{path}: duplicate sample id {sid!r}")
        out[sid] = label
    return out


def write_labels(path, sample_ids, labels) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for sid, lab in zip(sample_ids, labels):
            w.writerow([sid, int(lab)])


# ---- draws ---------------------------------------------------------------

def write_draws(path, chains: list[PosteriorDraws]) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DRAWS_HEADER)
        for ch, d in enumerate(chains, start=1):
            for m in range(len(d)):
                kp = int(d.K_plus[m])
                w.writerow([
                    ch,
                    int(d.iteration[m]),
                    int(d.K[m]),
                    kp,
                    fmt_float(d.log_density[m]),
                    ";".join(fmt_float(x) for x in d.weights[m, :kp]),
                    ";".join(str(int(x)) for x in d.c[m] + 1),
                ])


def read_draws(path, K_m: int | None = None) -> list[PosteriorDraws]:
    """Per-chain draws from a draws CSV; ``xi`` is left unset."""
    with _open_text(path, "r") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != DRAWS_HEADER:
        raise ValidationError(f"{path}: expected header {','.join(DRAWS_HEADER)}")
    by_chain: dict[int, list] = {}
    N = None
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(DRAWS_HEADER):
            raise ValidationError(f"{path}: ragged row {r} (line {r + 1})")
        try:
            ch, it, K, kp = (int(x) for x in row[:4])
            lp = float(row[4])
            w = [float(x) for x in row[5].split(";")] if row[5] else []
            labels = [int(x) for x in row[6].split(";")]
        except ValueError as exc:
            raise ValidationError(f"{path}: malformed row {r} (line {r + 1}): {exc}") from None
        if N is None:
            N = len(labels)
        if len(labels) != N:
            raise ValidationError(f"{path}: row {r} has {len(labels)} labels, expected {N}")
        by_chain.setdefault(ch, []).append((it, K, kp, lp, w, labels))
    out = []
    for ch in sorted(by_chain):
        recs = by_chain[ch]
        width = K_m or max(max(r[1] for r in recs), 1)
        weights = np.full((len(recs), width), np.nan)
        for m, rec in enumerate(recs):
            weights[m, : len(rec[4])] = rec[4]
        out.append(PosteriorDraws(
            iteration=np.array([r[0] for r in recs], dtype=np.int64),
            c=np.array([r[5] for r in recs], dtype=np.int64) - 1,
            K=np.array([r[1] for r in recs], dtype=np.int64),
            K_plus=np.array([r[2] for r in recs], dtype=np.int64),
            weights=weights,
            log_density=np.array([r[3] for r in recs]),
        ))
    return out


def write_xi(path, xi: np.ndarray) -> None:
    xi = np.ascontiguousarray(xi, dtype="<f8")
    if xi.ndim != 3:
        raise ValueError("xi must be (records, components, taxa)")
    with open(path, "wb") as fh:
        fh.write(XI_MAGIC)
        fh.write(np.array(xi.shape, dtype="<u8").tobytes())
        fh.write(xi.tobytes(order="C"))


def read_xi(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != XI_MAGIC:
        raise ValidationError(f"{path}: not a xi sidecar (bad magic)")
    if len(raw) < 32:
        raise ValidationError(f"{path}: truncated header")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype="<u8", count=3, offset=8))
    expected = 32 + 8 * int(np.prod(dims))
    if len(raw) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes for dims {dims}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=32).reshape(dims).copy()


# ---- configuration -------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration. Every key may come from a JSON file or ``--set``."""

    # paths
    counts: str | None = None
    labels: str | None = None
    draws: str | None = None
    tree: str | None = None
    out: str = "out"
    # model
    K_m: int = 10
    theta: float = 0.1
    pi_lambda: float = 0.5
    alpha_gamma: float = 1.0
    beta_gamma: float = 1.0
    s: float = 200.0
    sigma2: float = 10.0
    sigma2_mh: float = 1.0
    k_prior: str = "ztb"
    k_prior_params: tuple = ()
    zero_inflation: str = "zidm"
    # sampler
    n_iter: int = 15000
    burn_in: int = 5000
    thin: int = 1
    record_xi: bool = False
    seed: int = 0
    chains: int = 1
    # summaries
    salso_runs: int = 16
    summary_burn_in: int = 0
    # simulation
    scenario: str = "1"
    dtm_K: int = 2
    dtm_N_per_cluster: tuple = (50, 50)
    dtm_depth: int = 5000
    dtm_at_risk_prob: float = 1.0
    dtm_spread: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            object.__setattr__(self, f.name, _coerce(f, value))
        self.validate()

    def validate(self) -> None:
        check_seed(self.seed)
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")
        if self.salso_runs < 1:
            raise ValidationError("salso_runs must be >= 1")
        if self.summary_burn_in < 0:
            raise ValidationError("summary_burn_in must be >= 0")
        if self.scenario not in {"1", "2", "3", "4", "5", "dtm"}:
            raise ValidationError(f"scenario must be 1..5 or dtm, got {self.scenario!r}")
        try:
            self.sampler_config()
            self.hyperparams(np.zeros(2))
        except ValidationError:
            raise
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            n_iter=self.n_iter, burn_in=self.burn_in, thin=self.thin,
            seed=self.seed, record_xi=self.record_xi,
        )

    def hyperparams(self, mu) -> Hyperparams:
        from .estimator import build_k_prior

        return Hyperparams(
            mu=mu, K_m=self.K_m, theta=self.theta, pi_lambda=self.pi_lambda,
            alpha_gamma=self.alpha_gamma, beta_gamma=self.beta_gamma, s=self.s,
            sigma2=self.sigma2, sigma2_mh=self.sigma2_mh,
            k_prior=build_k_prior(self.k_prior, self.K_m, self.pi_lambda, self.k_prior_params),
            zero_inflation=self.zero_inflation,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        d = read_json(path)
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: configuration must be a JSON object")
        nested = [k for k, v in d.items() if isinstance(v, dict)]
        if nested:
            raise ValidationError(f"{path}: configuration must be flat; nested keys {nested}")
        return cls.from_dict(d)

    def replace(self, **changes) -> "RunConfig":
        return self.from_dict({**self.to_dict(), **changes})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(f, value):
    kind = f.type
    name = f.name
    if value is None:
        if "None" in kind:
            return None
        raise ValidationError(f"{name} may not be null")
    try:
        if kind.startswith("str"):
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = str(value)
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "bool":
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
                return value.lower() in ("true", "1")
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind == "int":
            if isinstance(value, bool):
                raise TypeError
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if isinstance(value, str):
                value = int(value)
            if not isinstance(value, (int, np.integer)):
                raise TypeError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "tuple":
            if isinstance(value, str):
                value = json.loads(value)
            return tuple(value)
    except (TypeError, ValueError):
        pass
    raise ValidationError(f"{name} expects {kind}, got {value!r}")


def parse_set(items) -> dict:
    """``KEY=VALUE`` strings to a dict; values are parsed as JSON when possible."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _TYPES:
            raise ValidationError(f"unknown configuration key {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key] = value
    return out


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def manifest(command: str, config: RunConfig, **extra) -> dict:
    return {
        "tool": "dsdm3",
        "version": __version__,
        "command": command,
        "seed": config.seed,
        "config": config.to_dict(),
        **extra,
    }
