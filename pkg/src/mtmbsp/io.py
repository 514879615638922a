"""Run configuration, file ingestion and result persistence."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import platform
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .errors import ChecksumError, InputError, ValidationError
from .gibbs import ChainConfig, Hyperparameters, PosteriorSamples
from .model import Dataset, ResponseKind, ResponseSchema, check_dataset, expand_multinomial
from .selection import SCREEN_RULES, CredibleSummary
from .simulate import METHODS, ScenarioSpec

DRAWS_FORMAT = "mtmbsp-draws"
DRAWS_VERSION = 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Every tunable of a run in one flat record.

    Keys map one-to-one onto CLI flags (underscores become dashes).
    """

    # prior
    tau: float = 0.001
    u: float = 0.5
    a: float = 0.5
    d1: Optional[float] = None
    d2: float = 10.0
    pg_threshold: int = 30
    c1: float = 10.0
    c2: float = 1.0
    r_init: float = 10.0
    # chain
    iterations: int = 3000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    keep_sigma: bool = False
    # estimator
    method: str = "two-step"
    gamma: float = 0.02
    screen_rule: str = "literal"
    lower: float = 0.025
    upper: float = 0.975
    intercept: bool = False
    standardize: bool = False
    # simulation
    scenario: int = 1
    n: int = 150
    p: int = 500
    s0: int = 10
    ar_corr: float = 0.5
    sigma2: float = 1.0
    rho: float = 0.5
    r_true: float = 50.0
    coef_range_cont: tuple = ((-5.0, -0.5), (0.5, 5.0))
    coef_range_count: tuple = ((-0.6, -0.3), (0.3, 0.6))
    data_seed: int = 0
    replicates: int = 10
    # paths
    x_file: Optional[str] = None
    y_file: Optional[str] = None
    schema_file: Optional[str] = None
    output_dir: str = "results"

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, _coerce(f, getattr(self, f.name)))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"{path}: cannot read config ({exc.strerror})") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("coef_range_cont", "coef_range_count"):
            d[key] = [list(iv) for iv in d[key]]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def override(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(data)

    # module objects --------------------------------------------------------

    def hyperparameters(self) -> Hyperparameters:
        h = Hyperparameters(self.tau, self.u, self.a, self.d1, self.d2, self.pg_threshold)
        h.validate()
        return h

    def chain_config(self) -> ChainConfig:
        return ChainConfig(self.iterations, self.burn_in, self.thin, self.seed, self.keep_sigma)

    def scenario_spec(self) -> ScenarioSpec:
        return ScenarioSpec(self.scenario, self.n, self.p, self.s0, self.ar_corr, self.sigma2,
                            self.rho, self.r_true, self.coef_range_cont, self.coef_range_count,
                            self.data_seed)

    def validate(self, command: str = "fit") -> "RunConfig":
        """Check every field against its module's rules before any work starts."""
        self.hyperparameters()
        self.chain_config()
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if command == "fit" and self.method == "both":
            raise ValidationError("method 'both' is only available for simulate")
        if self.screen_rule not in SCREEN_RULES:
            raise ValidationError(f"unknown screen_rule {self.screen_rule!r}; expected one of {SCREEN_RULES}")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        if not 0 < self.lower < 0.5 < self.upper < 1:
            raise ValidationError("interval levels must satisfy 0 < lower < 0.5 < upper < 1")
        for name in ("c1", "c2", "r_init"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if command == "simulate":
            self.scenario_spec()
            if self.replicates < 1:
                raise ValidationError("replicates must be at least 1")
        if command == "fit":
            missing = [k for k in ("x_file", "y_file", "schema_file") if getattr(self, k) is None]
            if missing:
                raise ValidationError(f"fit needs {', '.join(missing)}")
        return self


def _coerce(f: dataclasses.Field, value):
    name, typ = f.name, f.type
    if value is None:
        if "Optional" in str(typ):
            return None
        raise ValidationError(f"{name} may not be null")
    try:
        if typ == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            if not isinstance(value, (bool, int)):
                raise ValueError(value)
            return bool(value)
        if typ == "int":
            # no float round-trip: seeds use the full 64-bit range
            if isinstance(value, bool):
                raise ValueError(value)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(value)
                return int(value)
            return int(value)
        if typ in ("float", "Optional[float]"):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if typ in ("str", "Optional[str]"):
            return str(value)
        if typ == "tuple":
            if isinstance(value, str):
                value = json.loads(value)
            return tuple((float(lo), float(hi)) for lo, hi in value)
    except (TypeError, ValueError, json.JSONDecodeError):
        raise ValidationError(f"{name}: cannot interpret {value!r} as {typ}") from None
    return value


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def read_table(path) -> tuple[list[str], np.ndarray]:
    """Headered comma-separated numeric table. Errors carry file and line."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}:1: empty file, expected a header row") from None
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValidationError(
                        f"{path}:{line}: column {name!r}: cannot parse {cell.strip()!r} as a number") from None
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _schema_entry_kinds(entry: dict, column: np.ndarray, where: str):
    kind = entry.get("kind")
    extra = set(entry) - {"name", "kind", "trials", "r_init", "c1", "c2", "classes"}
    if extra:
        raise ValidationError(f"{where}: unknown keys {sorted(extra)}")
    if kind == "multinomial":
        counts, kinds = expand_multinomial(column, entry.get("classes"))
        return counts.T, kinds
    try:
        if kind == "binomial":
            k = ResponseKind.binomial(entry.get("trials", 1))
        elif kind == "negbinomial":
            k = ResponseKind.negbinomial(entry.get("r_init", 10.0), entry.get("c1", 10.0), entry.get("c2", 1.0))
        else:
            k = ResponseKind(kind)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None
    return column[None, :], [k]


def read_schema(path) -> list[dict]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: cannot read schema ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    cols = data.get("columns") if isinstance(data, dict) else data
    if not isinstance(cols, list) or not all(isinstance(c, (dict, str)) for c in cols):
        raise ValidationError(f"{path}: schema must be a list of column entries")
    return [c if isinstance(c, dict) else {"kind": c} for c in cols]


def load_dataset(x_file, y_file, schema_file, *, intercept=False, standardize=False):
    """Build a validated Dataset from the three input files.

    Returns ``(dataset, x_names, y_names)``. Multinomial label columns expand
    into L-1 binomial pseudo-columns named ``<name>[l]``.
    """
    x_names, X = read_table(x_file)
    y_names, Y = read_table(y_file)
    entries = read_schema(schema_file)
    if len(entries) != Y.shape[1]:
        raise ValidationError(
            f"schema declares {len(entries)} columns but Y has {Y.shape[1]} ({schema_file} vs {y_file})")
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(f"{x_file} has {X.shape[0]} rows but {y_file} has {Y.shape[0]}")
    blocks, kinds, names = [], [], []
    for idx, (entry, name) in enumerate(zip(entries, y_names)):
        where = f"{schema_file}: column {idx + 1}"
        if "name" in entry and entry["name"] != name:
            raise ValidationError(f"{where}: schema names {entry['name']!r} but {y_file} header has {name!r}")
        cols, ks = _schema_entry_kinds(entry, Y[:, idx], where)
        blocks.append(cols)
        kinds.extend(ks)
        names.extend([name] if len(ks) == 1 and entry.get("kind") != "multinomial"
                     else [f"{name}[{l + 1}]" for l in range(len(ks))])
    Yx = np.vstack(blocks).T
    if standardize:
        sd = X.std(axis=0)
        if np.any(sd == 0):
            raise ValidationError("cannot standardize a constant predictor column")
        X = (X - X.mean(axis=0)) / sd
    if intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        x_names = ["(intercept)"] + x_names
    d = check_dataset(Dataset(X, Yx, ResponseSchema(tuple(kinds))))
    return d, x_names, names


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# manifest and outputs
# ---------------------------------------------------------------------------

def versions() -> dict:
    from . import __version__

    return {"mtmbsp": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def manifest_hash(manifest: dict) -> str:
    """Hash of the reproducible part of a manifest (everything except timings)."""
    body = {k: v for k, v in manifest.items() if k not in ("timings", "manifest_sha256")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def summary_rows(summary: CredibleSummary, column_ids=None):
    p, q = summary.shape
    ids = np.arange(p) if column_ids is None else np.asarray(column_ids)
    for j in range(p):
        for k in range(q):
            yield j, int(ids[j]), k, summary.lower[j, k], summary.median[j, k], summary.upper[j, k]


def write_summary(path, summary: CredibleSummary, manifest_sha: str, column_ids=None, x_names=None):
    """Write the quantile table to a path or an open text stream."""
    if hasattr(path, "write"):
        return _write_summary(path, summary, manifest_sha, column_ids, x_names)
    with open(path, "w", newline="") as fh:
        _write_summary(fh, summary, manifest_sha, column_ids, x_names)


def _write_summary(fh, summary, manifest_sha, column_ids, x_names):
    lo, _, hi = summary.levels
    fh.write(f"# manifest_sha256={manifest_sha}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["j", "column_id", "name", "k", f"q{lo:g}", "q0.5", f"q{hi:g}"])
    for j, cid, k, a, m, b in summary_rows(summary, column_ids):
        name = x_names[j] if x_names is not None else ""
        w.writerow([j, cid, name, k, f"{a:.17g}", f"{m:.17g}", f"{b:.17g}"])


def read_summary(path):
    """Parse a summary table back into ``(manifest_sha, lower, median, upper)`` arrays."""
    with open(path, newline="") as fh:
        sha = fh.readline().strip().split("=", 1)[1]
        recs = list(csv.reader(fh))[1:]
    j = np.array([int(r[0]) for r in recs])
    k = np.array([int(r[3]) for r in recs])
    vals = np.array([[float(v) for v in r[4:7]] for r in recs])
    out = np.zeros((3, j.max() + 1, k.max() + 1))
    out[:, j, k] = vals.T
    return sha, out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# draws container
# ---------------------------------------------------------------------------

def write_draws(path, samples: PosteriorSamples, manifest_sha: str = "", names=None):
    """One JSON header line, then the draws as float64 in (p, q, S) order."""
    payload = np.ascontiguousarray(np.transpose(samples.B, (1, 2, 0)), dtype="<f8").tobytes()
    S, p, q = samples.B.shape
    header = {
        "format": DRAWS_FORMAT, "version": DRAWS_VERSION, "dtype": "<f8", "layout": "p,q,S",
        "dims": {"draws": S, "p": p, "q": q},
        "thin": samples.meta.get("thin"), "burn_in": samples.meta.get("burn_in"),
        "seed": samples.meta.get("seed"),
        "column_ids": [int(c) for c in (samples.column_ids if samples.column_ids is not None else range(p))],
        "names": list(names) if names is not None else None,
        "manifest_sha256": manifest_sha,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def read_draws(path) -> tuple[PosteriorSamples, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read draws ({exc.strerror})") from exc
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl].decode()) if nl > 0 else None
    except (UnicodeDecodeError, json.JSONDecodeError):
        header = None
    if not isinstance(header, dict) or header.get("format") != DRAWS_FORMAT:
        raise ChecksumError(f"{path}: not a draws file or header corrupted")
    payload = raw[nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise ChecksumError(
            f"{path}: payload has {len(payload)} bytes, header promises {header['payload_bytes']} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    dims = header["dims"]
    cube = np.frombuffer(payload, dtype="<f8").reshape(dims["p"], dims["q"], dims["draws"])
    B = np.ascontiguousarray(np.transpose(cube, (2, 0, 1)))
    meta = {k: header.get(k) for k in ("thin", "burn_in", "seed")}
    return PosteriorSamples(B, column_ids=np.array(header["column_ids"]), meta=meta), header
