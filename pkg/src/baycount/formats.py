"""On-disk formats: count matrices, chains, result tables and config files.

Every file written here declares a schema version (a ``# baycount <kind> vN``
first line for text, a ``schema_version`` member for archives) and readers
reject versions they do not know. Floats are written with 17 significant
digits so a write/read cycle is exact. All writes go to a temporary file in
the target directory and are renamed into place.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .gibbs import ChainConfig, ChainOutput, RunningMoments, _MOMENT_FIELDS
from .model import CountMatrix, Hyperparameters, ModelState

SCHEMA_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class FormatError(ValueError):
    """Malformed or unsupported input file."""


def fmt_float(x) -> str:
    return format(float(x), ".17g")


# ----------------------------------------------------------------------------
# atomic writes and headers
# ----------------------------------------------------------------------------

def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` via temp file + rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header(kind: str) -> str:
    return f"# baycount {kind} v{SCHEMA_VERSION}\n"


def _check_header(line: str, kind: str, path) -> None:
    parts = line[1:].split()
    if len(parts) != 3 or parts[0] != "baycount" or parts[1] != kind or not parts[2].startswith("v"):
        raise FormatError(f"{path}: expected a '# baycount {kind} vN' header, got {line.strip()!r}")
    try:
        version = int(parts[2][1:])
    except ValueError:
        raise FormatError(f"{path}: bad schema version {parts[2]!r}") from None
    if version != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported {kind} schema version {version}")


# ----------------------------------------------------------------------------
# count matrices
# ----------------------------------------------------------------------------

def read_counts(path, format: str = "tsv") -> CountMatrix:
    """Load a count matrix.

    ``tsv``: optional schema line, then a header row of sample ids (the
    first field is ignored) and one row per gene, gene id first.
    ``matrix-market``: integer coordinate file with ``<path>.genes`` and
    ``<path>.samples`` sidecars holding one id per line.
    """
    if format == "tsv":
        return _read_tsv(Path(path))
    if format in ("matrix-market", "mtx"):
        return _read_mtx(Path(path))
    raise ValueError(f"unknown count format {format!r}")


def write_counts(path, Y: CountMatrix, format: str = "tsv") -> None:
    if format == "tsv":
        _write_tsv(Path(path), Y)
    elif format in ("matrix-market", "mtx"):
        _write_mtx(Path(path), Y)
    else:
        raise ValueError(f"unknown count format {format!r}")


def _read_tsv(path: Path) -> CountMatrix:
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    lines = path.read_text(encoding="utf-8").splitlines()
    start = 0
    if lines and lines[0].startswith("#"):
        _check_header(lines[0], "counts", path)
        start = 1
    lines = [ln for ln in lines[start:] if ln.strip()]
    if len(lines) < 2:
        raise FormatError(f"{path}: need a header row and at least one gene row")
    samples = lines[0].split("\t")[1:]
    S = len(samples)
    genes, rows = [], []
    for lineno, line in enumerate(lines[1:], start=start + 2):
        fields = line.split("\t")
        if len(fields) != S + 1:
            raise FormatError(f"{path}: row {lineno} has {len(fields) - 1} counts, expected {S}")
        genes.append(fields[0])
        row = []
        for col, tok in enumerate(fields[1:]):
            try:
                v = int(tok)
            except ValueError:
                raise FormatError(f"{path}: row {lineno} ({fields[0]}), column {samples[col]}: "
                                  f"not an integer: {tok!r}") from None
            if v < 0:
                raise FormatError(f"{path}: row {lineno} ({fields[0]}), column {samples[col]}: "
                                  f"negative count {v}")
            row.append(v)
        rows.append(row)
    try:
        return CountMatrix(np.array(rows, dtype=np.int64), genes, samples)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _write_tsv(path: Path, Y: CountMatrix) -> None:
    buf = io.StringIO()
    buf.write(header("counts"))
    buf.write("gene_id\t" + "\t".join(Y.sample_ids) + "\n")
    for gid, row in zip(Y.gene_ids, Y.values):
        buf.write(gid + "\t" + "\t".join(str(int(v)) for v in row) + "\n")
    atomic_write(path, buf.getvalue())


def _sidecars(path: Path):
    return path.with_name(path.name + ".genes"), path.with_name(path.name + ".samples")


def _read_ids(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"{path}: missing id sidecar")
    lines = path.read_text(encoding="utf-8").splitlines()
    if lines and lines[0].startswith("#"):
        _check_header(lines[0], "ids", path)
        lines = lines[1:]
    return [ln for ln in lines if ln.strip()]


def _read_mtx(path: Path) -> CountMatrix:
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        second = fh.readline()
    # files from other tools carry no schema comment; ours must match
    if second.startswith("% baycount"):
        _check_header("#" + second[1:], "counts", path)
    info = scipy.io.mminfo(str(path))
    if info[4] != "integer":
        raise FormatError(f"{path}: matrix market field must be integer, got {info[4]}")
    m = scipy.io.mmread(str(path))
    dense = np.asarray(m.toarray() if scipy.sparse.issparse(m) else m, dtype=np.int64)
    if np.any(dense < 0):
        i, j = np.argwhere(dense < 0)[0]
        raise FormatError(f"{path}: negative count at row {i + 1}, column {j + 1}")
    gpath, spath = _sidecars(path)
    genes, samples = _read_ids(gpath), _read_ids(spath)
    if len(genes) != dense.shape[0] or len(samples) != dense.shape[1]:
        raise FormatError(f"{path}: sidecars list {len(genes)} genes and {len(samples)} samples, "
                          f"matrix is {dense.shape[0]} x {dense.shape[1]}")
    try:
        return CountMatrix(dense, genes, samples)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _write_mtx(path: Path, Y: CountMatrix) -> None:
    buf = io.BytesIO()
    # scipy would store a symmetric matrix as one triangle; keep every entry
    scipy.io.mmwrite(buf, scipy.sparse.coo_matrix(Y.values), field="integer",
                     symmetry="general", comment=" " + header("counts")[2:].rstrip())
    atomic_write(path, buf.getvalue())
    gpath, spath = _sidecars(path)
    atomic_write(gpath, header("ids") + "".join(g + "\n" for g in Y.gene_ids))
    atomic_write(spath, header("ids") + "".join(s + "\n" for s in Y.sample_ids))


# ----------------------------------------------------------------------------
# delimited result tables
# ----------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def write_table(path, kind: str, columns, rows) -> None:
    """CSV table with a schema line; floats at 17 significant digits."""
    lines = [header(kind), ",".join(columns) + "\n"]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row) + "\n")
    atomic_write(path, "".join(lines))


def read_table(path, kind: str):
    """Return ``(columns, rows)`` with every cell as a string."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    _check_header(lines[0], kind, path)
    cols = lines[1].split(",")
    return cols, [ln.split(",") for ln in lines[2:] if ln]


def write_json(path, kind: str, payload: dict) -> None:
    doc = {"schema": f"baycount {kind}", "schema_version": SCHEMA_VERSION}
    doc.update(payload)
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")


def read_json(path, kind: str) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != f"baycount {kind}":
        raise FormatError(f"{path}: not a baycount {kind} file")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported {kind} schema version {doc.get('schema_version')}")
    return doc


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# ----------------------------------------------------------------------------
# chains
# ----------------------------------------------------------------------------

def _npz_bytes(arrays: dict) -> bytes:
    # numpy's savez stamps the current time into the zip; fix it for
    # reproducible bytes
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH), member.getvalue())
    return buf.getvalue()


def save_chain(path, chain: ChainOutput, gene_ids=None, sample_ids=None) -> None:
    """Store a chain (draws or streaming moments plus the log-likelihood
    trace) as an npz archive. Per-sweep timings are not stored, so equal
    chains give equal bytes."""
    cfg = chain.config
    arrays = {
        "schema_version": np.int64(SCHEMA_VERSION),
        "K": np.int64(chain.K),
        "config": np.array([cfg.burn_in, cfg.total_iterations, cfg.thin, cfg.seed], dtype=np.uint64),
        "config_init": np.array(cfg.init),
        "hyperparameters": chain.hyperparameters.as_array(),
        "loglik_trace": chain.loglik_trace,
        "kept_iterations": chain.kept_iterations,
        "moments_n": np.int64(chain.moments.n),
    }
    for name in _MOMENT_FIELDS:
        if chain.moments.n:
            arrays[f"mean_{name}"] = np.asarray(chain.moments.mean[name])
            arrays[f"m2_{name}"] = np.asarray(chain.moments.m2[name])
    if chain.draws is not None:
        for name in _MOMENT_FIELDS:
            arrays[f"draws_{name}"] = np.stack([np.asarray(getattr(d, name)) for d in chain.draws])
    if gene_ids is not None:
        arrays["gene_ids"] = np.array(list(gene_ids), dtype=str)
    if sample_ids is not None:
        arrays["sample_ids"] = np.array(list(sample_ids), dtype=str)
    atomic_write(path, _npz_bytes(arrays))


def load_chain(path):
    """Inverse of :func:`save_chain`; returns ``(chain, gene_ids, sample_ids)``."""
    with np.load(path, allow_pickle=False) as z:
        if "schema_version" not in z.files:
            raise FormatError(f"{path}: not a baycount chain archive")
        version = int(z["schema_version"])
        if version != SCHEMA_VERSION:
            raise FormatError(f"{path}: unsupported chain schema version {version}")
        data = {k: z[k] for k in z.files}
    burn, total, thin, seed = (int(v) for v in data["config"])
    cfg = ChainConfig(burn_in=burn, total_iterations=total, thin=thin, seed=seed,
                      store_draws="draws_Phi" in data, init=str(data["config_init"]))
    hp = Hyperparameters(*(float(v) for v in data["hyperparameters"]))
    mom = RunningMoments()
    mom.n = int(data["moments_n"])
    if mom.n:
        for name in _MOMENT_FIELDS:
            mom.mean[name] = _unwrap(data[f"mean_{name}"])
            mom.m2[name] = _unwrap(data[f"m2_{name}"])
    draws = None
    if cfg.store_draws:
        n = data["draws_Phi"].shape[0]
        draws = []
        for t in range(n):
            kw = {name: _unwrap(data[f"draws_{name}"][t]) for name in _MOMENT_FIELDS}
            draws.append(ModelState(Phi=kw["Phi"], Theta=kw["Theta"], alpha=kw["alpha"],
                                    lam=kw["lam"], zeta=kw["zeta"], p=kw["p"], r=kw["r"],
                                    c=kw["c"], gamma0=kw["gamma0"], c0=kw["c0"], validate=False))
    chain = ChainOutput(K=int(data["K"]), config=cfg, hyperparameters=hp,
                        loglik_trace=data["loglik_trace"], kept_iterations=data["kept_iterations"],
                        moments=mom, draws=draws)
    genes = [str(g) for g in data["gene_ids"]] if "gene_ids" in data else None
    samples = [str(s) for s in data["sample_ids"]] if "sample_ids" in data else None
    return chain, genes, samples


def _unwrap(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


# ----------------------------------------------------------------------------
# config files
# ----------------------------------------------------------------------------

def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Dashes in keys are
    read as underscores. Values stay strings; the caller converts them."""
    out = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}: line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out
