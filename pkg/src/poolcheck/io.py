"""CSV ingestion, the site-summary exchange file, and SVG charts.

Summary files are UTF-8 JSON written in canonical form: keys sorted, no
whitespace, floats in Python's shortest round-trip representation.  The
``checksum`` field is the SHA-256 hex digest of the canonical encoding of
every other field, so any edit to the payload is detected on read.
Matrices are stored as flat row-major lists.
"""

import csv
import hashlib
import json
import math
from html import escape

import numpy as np

from .exceptions import (
    ChecksumMismatch,
    InvalidSummary,
    ParseError,
    SchemaError,
    SchemaVersionUnsupported,
)
from .regress import SiteDataset, SiteSummary

SCHEMA_VERSION = "1.0"
SUPPORTED_VERSIONS = {"1.0"}
ROLES = {"predictor", "confound", "response", "ignore"}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False)


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays, sets and enums for json."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(to_jsonable(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def _checksum(payload):
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def summary_payload(summary):
    return {
        "schema_version": SCHEMA_VERSION,
        "site_id": summary.site_id,
        "n": int(summary.n),
        "p": int(summary.p),
        "feature_names": list(summary.feature_names),
        "beta_hat": [float(v) for v in summary.beta_hat],
        "sigma_hat": float(summary.sigma_hat),
        "sigma_matrix": [float(v) for v in summary.Sigma_hat.ravel(order="C")],
        "used_conditional": bool(summary.used_conditional),
    }


def dumps_summary(summary):
    payload = summary_payload(summary)
    payload["checksum"] = _checksum(payload)
    return canonical_json(payload)


def loads_summary(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"summary is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidSummary("summary must be a JSON object")
    version = doc.get("schema_version")
    if version not in SUPPORTED_VERSIONS:
        raise SchemaVersionUnsupported(f"schema_version {version!r} not in {sorted(SUPPORTED_VERSIONS)}")
    required = {"site_id", "n", "p", "feature_names", "beta_hat", "sigma_hat", "sigma_matrix",
                "used_conditional", "checksum"}
    missing = required - doc.keys()
    if missing:
        raise InvalidSummary(f"summary lacks fields {sorted(missing)}")
    checksum = doc.pop("checksum")
    if _checksum(doc) != checksum:
        raise ChecksumMismatch("summary checksum does not match its contents")
    p = doc["p"]
    if not isinstance(p, int) or p < 1:
        raise InvalidSummary(f"p must be a positive integer, got {p!r}")
    if len(doc["beta_hat"]) != p or len(doc["feature_names"]) != p or len(doc["sigma_matrix"]) != p * p:
        raise InvalidSummary("array lengths disagree with p")
    if not isinstance(doc["n"], int) or doc["n"] < 1:
        raise InvalidSummary("n must be a positive integer")
    S = np.array(doc["sigma_matrix"], dtype=float).reshape(p, p)
    beta = np.array(doc["beta_hat"], dtype=float)
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(beta)) and math.isfinite(doc["sigma_hat"])):
        raise InvalidSummary("non-finite values in summary")
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    if np.abs(S - S.T).max() > 1e-12 * scale:
        raise InvalidSummary("sigma_matrix is not symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-10 * np.linalg.norm(S, 2):
        raise InvalidSummary("sigma_matrix is not positive semidefinite")
    if doc["sigma_hat"] <= 0:
        raise InvalidSummary("sigma_hat must be positive")
    return SiteSummary(site_id=doc["site_id"], n=doc["n"], beta_hat=beta, sigma_hat=doc["sigma_hat"],
                       Sigma_hat=S, used_conditional=bool(doc["used_conditional"]),
                       feature_names=list(doc["feature_names"]))


def write_summary(summary, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_summary(summary))
        fh.write("\n")


def read_summary(path):
    with open(path, encoding="utf-8") as fh:
        return loads_summary(fh.read())


def default_roles(header, response="y", confounds=(), predictors=None, ignore=()):
    """Role map: named response and confounds; predictors are the rest unless given."""
    roles = {}
    for c in header:
        if c == response:
            roles[c] = "response"
        elif c in confounds:
            roles[c] = "confound"
        elif c in ignore:
            roles[c] = "ignore"
        elif predictors is None or c in predictors:
            roles[c] = "predictor"
        else:
            roles[c] = "ignore"
    for c in [response, *confounds, *(predictors or [])]:
        roles.setdefault(c, "predictor" if c in (predictors or []) else
                         "confound" if c in confounds else "response")
    return roles


def load_csv(path, roles, site_id=None):
    """Read one site's CSV into a :class:`SiteDataset`.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with a header row.
    roles : dict
        Column name -> one of predictor, confound, response, ignore.
        Columns absent from the mapping are ignored; mapped columns absent
        from the file raise SchemaError.
    site_id : str, optional
        Defaults to the file stem.
    """
    from pathlib import Path

    bad_roles = {r for r in roles.values() if r not in ROLES}
    if bad_roles:
        raise SchemaError(f"unknown roles {sorted(bad_roles)}")
    responses = [c for c, r in roles.items() if r == "response"]
    if len(responses) != 1:
        raise SchemaError(f"exactly one response column required, got {responses}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file (line 1)") from None
        header = [h.strip() for h in header]
        missing = [c for c, r in roles.items() if r != "ignore" and c not in header]
        if missing:
            raise SchemaError(f"{path}: declared columns missing from header: {missing}")
        pred = [c for c in header if roles.get(c) == "predictor"]
        conf = [c for c in header if roles.get(c) == "confound"]
        cols = {c: header.index(c) for c in pred + conf + responses}
        rows = []
        bad = []
        for row in reader:
            line = reader.line_num
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
            try:
                vals = {c: float(row[i]) for c, i in cols.items()}
            except ValueError as exc:
                raise ParseError(f"{path}: line {line}: {exc}") from exc
            if not all(math.isfinite(v) for v in vals.values()):
                bad.append(line)
            rows.append(vals)
    if bad:
        raise ParseError(f"{path}: non-finite values on lines {bad[:20]}")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    X = np.array([[r[c] for c in pred] for r in rows], dtype=float).reshape(len(rows), len(pred))
    Z = np.array([[r[c] for c in conf] for r in rows], dtype=float) if conf else None
    y = np.array([r[responses[0]] for r in rows], dtype=float)
    return SiteDataset(X=X, y=y, Z=Z, site_id=site_id or Path(path).stem, feature_names=pred,
                       confound_names=conf or None)


def write_csv(data, path, response="y"):
    """Write a dataset with 17 significant digits so ``load_csv`` restores it exactly."""
    header = list(data.feature_names) + list(data.confound_names or []) + [response]
    cols = [data.X] + ([data.Z] if data.Z is not None else []) + [data.y[:, None]]
    M = np.hstack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([format(v, ".17g") for v in row])


def write_table(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- SVG ---------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
_W, _H, _M = 640, 420, 60


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _frame(title, xlabel, ylabel, xt, yt, fx, fy, xfmt):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - 20}" y2="{_H - _M}" stroke="black"/>',
           f'<line x1="{_M}" y1="30" x2="{_M}" y2="{_H - _M}" stroke="black"/>',
           f'<text x="{_W / 2:.1f}" y="{_H - 15}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="15" y="{_H / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 15 {_H / 2:.1f})">{escape(ylabel)}</text>']
    for t in xt:
        out.append(f'<text x="{fx(t):.1f}" y="{_H - _M + 16}" text-anchor="middle">{xfmt(t)}</text>')
    for t in yt:
        out.append(f'<text x="{_M - 6}" y="{fy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    return out


def line_chart(series, title="", xlabel="", ylabel="", logx=False, logy=False):
    """SVG line chart. ``series`` maps a label to ``(x, y)`` sequences."""
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = {k: [(tx(a), ty(b)) for a, b in zip(*xy) if b is not None and math.isfinite(b)
               and (not logy or b > 0)] for k, xy in series.items()}
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1, y0, y1 = min(allx), max(allx), min(ally), max(ally)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def fx(v):
        return _M + (v - x0) / (x1 - x0) * (_W - _M - 30)

    def fy(v):
        return _H - _M - (v - y0) / (y1 - y0) * (_H - _M - 40)

    xfmt = (lambda t: f"{10 ** t:.3g}") if logx else (lambda t: f"{t:.3g}")
    out = _frame(title, xlabel, ylabel, _ticks(x0, x1), _ticks(y0, y1), fx, fy, xfmt)
    if logy:
        out = [o for o in out]
    for i, (label, v) in enumerate(pts.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if v:
            path = " ".join(f"{fx(a):.2f},{fy(b):.2f}" for a, b in v)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        out.append(f'<text x="{_W - 150}" y="{45 + 16 * i}" fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(categories, groups, title="", xlabel="", ylabel=""):
    """Grouped SVG bar chart. ``groups`` maps a label to one value per category."""
    vals = [v for g in groups.values() for v in g if v is not None and math.isfinite(v)]
    y1 = max(vals) if vals else 1.0
    y1 = y1 if y1 > 0 else 1.0
    nc, ng = len(categories), max(len(groups), 1)
    slot = (_W - _M - 30) / max(nc, 1)
    bw = slot * 0.8 / ng

    def fy(v):
        return _H - _M - v / y1 * (_H - _M - 40)

    out = _frame(title, xlabel, ylabel, [], _ticks(0.0, y1), lambda t: 0.0, fy, str)
    for c, cat in enumerate(categories):
        out.append(f'<text x="{_M + slot * (c + 0.5):.1f}" y="{_H - _M + 16}" '
                   f'text-anchor="middle">{escape(str(cat))}</text>')
    for g, (label, values) in enumerate(groups.items()):
        color = _PALETTE[g % len(_PALETTE)]
        for c, v in enumerate(values):
            if v is None or not math.isfinite(v):
                continue
            x = _M + slot * c + slot * 0.1 + g * bw
            out.append(f'<rect x="{x:.2f}" y="{fy(v):.2f}" width="{bw:.2f}" '
                       f'height="{_H - _M - fy(v):.2f}" fill="{color}"/>')
        out.append(f'<text x="{_W - 150}" y="{45 + 16 * g}" fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
