"""Tensor, factor, configuration and CSV files.

Text tensor file::

    DTNS1
    <order>
    <dim_1> ... <dim_order>
    colmajor
    <one value per line, column-major>

The binary variant starts with ``DTNSB1`` and carries the same three header
lines followed by little-endian 8-byte reals. Stacked datasets put the
observation index last, so each observation is a contiguous block.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, TensorFileError
from .tensor import CpTensor

__all__ = [
    "write_tensor",
    "read_tensor",
    "write_cp",
    "read_cp",
    "write_dataset",
    "read_dataset",
    "write_csv",
    "format_float",
    "CONFIG_SCHEMA",
    "load_config",
    "parse_config",
]

TEXT_MAGIC = "DTNS1"
BINARY_MAGIC = "DTNSB1"
LAYOUT = "colmajor"


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, independent of locale."""
    return repr(float(x))


def _header(arr: np.ndarray) -> list[str]:
    return [str(arr.ndim), " ".join(str(d) for d in arr.shape), LAYOUT]


def _text_block(arr: np.ndarray) -> list[str]:
    arr = np.asarray(arr, dtype=float)
    return [TEXT_MAGIC, *_header(arr), *(format_float(v) for v in arr.ravel(order="F"))]


def write_tensor(path, arr, binary: bool = False) -> None:
    arr = np.asarray(arr, dtype=float)
    path = Path(path)
    if binary:
        head = "\n".join([BINARY_MAGIC, *_header(arr)]) + "\n"
        path.write_bytes(head.encode("ascii") + arr.ravel(order="F").astype("<f8").tobytes())
    else:
        path.write_text("\n".join(_text_block(arr)) + "\n", encoding="ascii")


def _parse_header(lines: Sequence[str], start: int, path):
    """Parse order, dims and layout lines beginning at index ``start``."""
    def line_no(i):
        return i + 1

    if start + 3 > len(lines):
        raise TensorFileError("truncated header", path, line_no(min(start, len(lines))))
    try:
        order = int(lines[start])
    except ValueError:
        raise TensorFileError(f"order must be an integer, got {lines[start]!r}", path, line_no(start)) from None
    if order < 0:
        raise TensorFileError("order must be nonnegative", path, line_no(start))
    try:
        dims = tuple(int(t) for t in lines[start + 1].split())
    except ValueError:
        raise TensorFileError(f"bad dims {lines[start + 1]!r}", path, line_no(start + 1)) from None
    if len(dims) != order or any(d < 0 for d in dims):
        raise TensorFileError(f"dims {dims} do not match order {order}", path, line_no(start + 1))
    if lines[start + 2].strip() != LAYOUT:
        raise TensorFileError(f"unsupported layout {lines[start + 2]!r}", path, line_no(start + 2))
    return dims


def _parse_text_block(lines: Sequence[str], start: int, path, stop: int | None = None):
    """Parse one text block whose magic sits at ``lines[start]``; returns ``(array, next)``."""
    if lines[start].strip() != TEXT_MAGIC:
        raise TensorFileError(f"expected {TEXT_MAGIC}, got {lines[start]!r}", path, start + 1)
    dims = _parse_header(lines, start + 1, path)
    n = int(np.prod(dims)) if dims else 1
    values = []
    i = start + 4
    end = len(lines) if stop is None else stop
    while len(values) < n and i < end:
        for tok in lines[i].split():
            try:
                values.append(float(tok))
            except ValueError:
                raise TensorFileError(f"bad value {tok!r}", path, i + 1) from None
        i += 1
    if len(values) != n:
        raise TensorFileError(f"expected {n} values, found {len(values)}", path, i)
    return np.array(values).reshape(dims, order="F"), i


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise TensorFileError(f"cannot read file: {exc.strerror}", path) from None
    if raw.startswith(BINARY_MAGIC.encode() + b"\n"):
        return _read_binary(raw, path)
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise TensorFileError("not an ASCII tensor file", path, 1) from None
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise TensorFileError("empty file", path, 1)
    arr, nxt = _parse_text_block(lines, 0, path)
    for j in range(nxt, len(lines)):
        if lines[j].strip():
            raise TensorFileError("unexpected trailing content", path, j + 1)
    return arr


def _read_binary(raw: bytes, path) -> np.ndarray:
    parts = raw.split(b"\n", 4)
    if len(parts) < 5:
        raise TensorFileError("truncated header", path, len(parts))
    try:
        lines = [p.decode("ascii") for p in parts[:4]]
    except UnicodeDecodeError:
        raise TensorFileError("header is not ASCII", path, 2) from None
    dims = _parse_header(lines, 1, path)
    payload = parts[4]
    n = int(np.prod(dims)) if dims else 1
    if len(payload) != 8 * n:
        raise TensorFileError(f"payload has {len(payload)} bytes, expected {8 * n}", path, 5)
    return np.frombuffer(payload, dtype="<f8").astype(float).reshape(dims, order="F")


# -- CP factor files -------------------------------------------------------

def write_cp(path, c: CpTensor) -> None:
    """One text block per factor behind ``[weights]``, ``[covariate q]``, ``[response p]`` headers."""
    out = ["[weights]", *_text_block(c.weights)]
    for q, v in enumerate(c.covariate_factors, 1):
        out += [f"[covariate {q}]", *_text_block(v)]
    for p, u in enumerate(c.response_factors, 1):
        out += [f"[response {p}]", *_text_block(u)]
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


def read_cp(path) -> CpTensor:
    path = Path(path)
    try:
        lines = path.read_text(encoding="ascii").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise TensorFileError(f"cannot read factor file: {exc}", path) from None
    heads = [i for i, ln in enumerate(lines) if ln.startswith("[")]
    blocks: dict[tuple[str, int], np.ndarray] = {}
    for j, h in enumerate(heads):
        name = lines[h].strip()[1:-1].split()
        stop = heads[j + 1] if j + 1 < len(heads) else len(lines)
        if h + 1 >= stop:
            raise TensorFileError("empty section", path, h + 1)
        arr, _ = _parse_text_block(lines, h + 1, path, stop)
        if name == ["weights"]:
            key = ("weights", 0)
        elif len(name) == 2 and name[0] in ("covariate", "response") and name[1].isdigit():
            key = (name[0], int(name[1]))
        else:
            raise TensorFileError(f"unknown section {lines[h]!r}", path, h + 1)
        if key in blocks:
            raise TensorFileError(f"duplicate section {lines[h]!r}", path, h + 1)
        blocks[key] = arr
    if ("weights", 0) not in blocks:
        raise TensorFileError("missing [weights] section", path, 1)

    def collect(kind):
        idx = sorted(k[1] for k in blocks if k[0] == kind)
        if idx != list(range(1, len(idx) + 1)):
            raise TensorFileError(f"{kind} sections must be numbered 1..n", path)
        return tuple(blocks[(kind, i)] for i in idx)

    return CpTensor(blocks[("weights", 0)], collect("covariate"), collect("response"))


# -- datasets ----------------------------------------------------------------

def write_dataset(path, stacked, binary: bool = False) -> None:
    """Write ``(I, dims..)`` observations with the observation index moved last."""
    write_tensor(path, np.moveaxis(np.asarray(stacked, dtype=float), 0, -1), binary=binary)


def read_dataset(path) -> np.ndarray:
    """Inverse of :func:`write_dataset`: returns ``(I, dims..)``."""
    arr = read_tensor(path)
    if arr.ndim < 1:
        raise TensorFileError("a dataset needs an observation mode", path)
    return np.moveaxis(arr, -1, 0)


# -- CSV -----------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Header row plus rows, ``\\n`` line endings and round-trip float formatting."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="ascii")


# -- run configuration --------------------------------------------------------

def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> list[int]:
    return [int(t) for t in s.split(",") if t.strip()]


def _float_list(s: str) -> list[float]:
    return [float(t) for t in s.split(",") if t.strip()]


def _lag_blocks(s: str) -> tuple[tuple[int, ...], ...]:
    """``1;2,3,4,5`` -> ``((1,), (2, 3, 4, 5))``."""
    return tuple(tuple(_int_list(b)) for b in s.split(";") if b.strip())


def _optional_int(s: str):
    return None if s.lower() == "none" else int(s)


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


CONFIG_SCHEMA: dict[str, _Key] = {
    # estimation
    "rank": _Key(int, 2, "CP rank"),
    "ranks": _Key(_int_list, None, "comma-separated ranks; overrides rank"),
    "outer_tol": _Key(float, 1e-6, "relative loglik change that stops the sweeps"),
    "inner_tol": _Key(float, 1e-4, "relative loglik change that stops a factor sub-solve"),
    "inner_max_iter": _Key(int, 50, "iteration cap of a factor sub-solve"),
    "outer_max_sweeps": _Key(int, 500, "sweep cap"),
    "restarts": _Key(int, 10, "random restarts"),
    "param_count_convention": _Key(str, "raw", "raw or constrained"),
    # autoregressive covariates
    "trend_degree": _Key(_optional_int, None, "polynomial trend degree or none"),
    "lag_blocks": _Key(_lag_blocks, ((1,),), "lag blocks, e.g. 1;2,3,4,5"),
    "include_intercept": _Key(_bool, True, "prepend an all-ones slab"),
    # projector
    "image_n1": _Key(int, 32, "image rows"),
    "image_n2": _Key(int, 32, "image columns"),
    "n_angles": _Key(int, 32, "projection angles on [0, pi)"),
    "radial_bins": _Key(_optional_int, None, "radial bins (default 4 * max image extent)"),
    "binning": _Key(str, "nearest", "nearest or linear"),
    # scenarios
    "m1": _Key(int, 10, "change-point tensor extent 1"),
    "m2": _Key(int, 10, "change-point tensor extent 2"),
    "m3": _Key(int, 15, "change-point tensor extent 3"),
    "T": _Key(int, 14, "series length"),
    "tau": _Key(int, 6, "true change point (0 = none)"),
    "a": _Key(float, 8.0, "elevated rate after the change"),
    "topic_index": _Key(int, 1, "elevated topic slab (1-based)"),
    "tau_candidates": _Key(_int_list, None, "candidate change points (default 1..T-1)"),
    "response_dims": _Key(_int_list, [2, 2], "frame modes of the image tensor"),
    "covariate_dims": _Key(_int_list, [3, 2], "covariate dims for simulated regression data"),
    "n_obs": _Key(int, 20, "observations for simulated regression data"),
    "intensity": _Key(float, 1.0, "image intensity scale"),
    "fractions": _Key(_float_list, [1.0], "sinogram data fractions"),
    "iters": _Key(int, 200, "ML-EM iterations and PToTR sweep cap"),
    "method": _Key(str, "both", "mlem, ptotr or both"),
    "phantom": _Key(str, "shepp_logan_like", "phantom kind"),
}


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out: dict[str, Any] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        try:
            out[key] = CONFIG_SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return out


def load_config(path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
