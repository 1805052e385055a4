"""Command-line front end.

Four batch commands, each writing its artifacts under --out:

* ``simulate``  -- replicated synthetic experiments from a JSON config;
* ``screen``    -- rank the features of a CSV by distributed partial
                   correlation and select by top-d or threshold;
* ``knockoff``  -- two-stage knockoff-filtered selection at an FDR level;
* ``evaluate``  -- fit least squares on a training split restricted to a
                   selected feature set and report test RMSE.

CSV ingestion mirrors the usual large-table workflow: drop rows with
non-finite entries, optionally standardize feature columns by training-split
statistics (1/n variance convention), optionally expand all pairwise
interaction products (m columns -> m(m+1)/2), and either take a named
conditioning column or AUTO-pick the feature most correlated with the
response.  The conditioning column is removed from the screened set.

Exit codes: 0 success, 1 domain error (one structured ``error:`` line on
stderr, partial outputs removed), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ColumnNotFound, InsufficientSamples, ShardScreenError
from .knockoff import run_algorithm1
from .shard_engine import (
    ScreeningResult,
    ThresholdRule,
    TopDRule,
    default_top_d,
    screen_dataset,
    shard_dataset,
)
from .simulate import SimConfig, knockoff_pipeline, run_replications, screening_pipeline

RIDGE_EVAL = 1e-8


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass
class IngestedDataset:
    y: np.ndarray
    z: np.ndarray
    X: np.ndarray
    feature_names: list
    response_name: str
    conditional_name: str
    n_dropped: int
    n_clipped: int = 0

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.y, self.z, self.X])


def _interaction_names(names):
    out = list(names)
    m = len(names)
    for i in range(m):
        for j in range(i + 1, m):
            out.append(f"{names[i]}*{names[j]}")
    return out


def expand_interactions(X: np.ndarray, names):
    """All m main columns plus the m(m-1)/2 pairwise products, ordered
    (i, j) with i < j."""
    m = X.shape[1]
    cols = [X]
    for i in range(m):
        cols.append(X[:, i + 1:] * X[:, i:i + 1])
    return np.hstack(cols), _interaction_names(names)


def ingest_csv(path, response_column: str, conditional_column: str = "AUTO",
               standardize: bool = False, interactions: bool = False,
               clip_sd: float = None, split_index: int = None) -> IngestedDataset:
    """Load a headed numeric CSV into (y, z, X) form.

    Rows with any non-finite entry are dropped and counted.  Standardization
    statistics (and the optional |value| > clip_sd * sd row filter) are
    computed on the training split when ``split_index`` is given, else on all
    clean rows.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.shape[0] == 0:
        raise InsufficientSamples("CSV has no data rows")
    frame = frame.apply(pd.to_numeric, errors="coerce")
    if response_column not in frame.columns:
        raise ColumnNotFound(f"response column {response_column!r} not in CSV")

    values = frame.to_numpy(dtype=np.float64)
    keep = np.all(np.isfinite(values), axis=1)
    n_dropped = int((~keep).sum())
    values = values[keep]
    if values.shape[0] < 3:
        raise InsufficientSamples(
            f"only {values.shape[0]} clean rows after dropping {n_dropped}")

    columns = list(frame.columns)
    r_idx = columns.index(response_column)
    y = values[:, r_idx]
    X = np.delete(values, r_idx, axis=1)
    names = [c for c in columns if c != response_column]

    def train_slice(n):
        return slice(0, split_index) if split_index is not None else slice(0, n)

    n_clipped = 0
    if clip_sd is not None:
        tr = X[train_slice(len(X))]
        mu = tr.mean(axis=0)
        sd = tr.std(axis=0)
        sd[sd == 0] = 1.0
        ok = np.all(np.abs(X - mu) <= clip_sd * sd, axis=1)
        n_clipped = int((~ok).sum())
        X, y = X[ok], y[ok]
        if len(y) < 3:
            raise InsufficientSamples("fewer than 3 rows left after outlier removal")

    if standardize:
        tr = X[train_slice(len(X))]
        mu = tr.mean(axis=0)
        sd = tr.std(axis=0)  # population (1/n) convention
        sd[sd == 0] = 1.0
        X = (X - mu) / sd

    if interactions:
        X, names = expand_interactions(X, names)

    if conditional_column == "AUTO":
        rows = train_slice(len(X))
        yc = y[rows] - y[rows].mean()
        Xc = X[rows] - X[rows].mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = (Xc.T @ yc) / (np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
                                  * np.sqrt(float(yc @ yc)))
        corr = np.nan_to_num(corr, nan=0.0)
        c_idx = int(np.argmax(np.abs(corr)))
    else:
        if conditional_column not in names:
            raise ColumnNotFound(f"conditional column {conditional_column!r} not in CSV")
        c_idx = names.index(conditional_column)

    z = X[:, c_idx].copy()
    conditional_name = names[c_idx]
    X = np.delete(X, c_idx, axis=1)
    names = names[:c_idx] + names[c_idx + 1:]
    return IngestedDataset(y=y, z=z, X=X, feature_names=names,
                           response_name=response_column,
                           conditional_name=conditional_name,
                           n_dropped=n_dropped, n_clipped=n_clipped)


# ---------------------------------------------------------------------------
# Artifact writers / readers
# ---------------------------------------------------------------------------

class OutputTracker:
    """Records written artifact paths so a failed run can remove them."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.paths = []

    def path(self, name) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def discard_all(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def write_screening_csv(path, result: ScreeningResult, feature_names):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,index,feature,utility,selected\n")
        selected = set(int(j) for j in result.selected)
        for rank, j in enumerate(result.ranking, start=1):
            j = int(j)
            fh.write(f"{rank},{j},{feature_names[j]},{float(result.utilities[j])!r},"
                     f"{1 if j in selected else 0}\n")


def read_screening_csv(path) -> ScreeningResult:
    """Rebuild utilities/ranking/selected from a screen artifact (exactly:
    utilities are written with full round-trip precision)."""
    ranking, indices, utils, sel = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["rank", "index", "feature", "utility", "selected"]:
            raise ValueError("not a screening utilities CSV")
        for line in fh:
            _, idx, _, util, flag = line.rstrip("\n").split(",")
            indices.append(int(idx))
            utils.append(float(util))
            sel.append(int(flag))
    p = max(indices) + 1
    utilities = np.empty(p)
    utilities[indices] = utils
    selected = np.sort(np.array(indices, dtype=np.intp)[np.array(sel, dtype=bool)])
    return ScreeningResult(utilities=utilities,
                           ranking=np.array(indices, dtype=np.intp),
                           selected=selected, rule=None,
                           unreliable=np.zeros(p, dtype=bool))


def write_selected(path, selected, feature_names):
    with open(path, "w", encoding="utf-8") as fh:
        for j in selected:
            fh.write(f"{feature_names[int(j)]}\n")


def read_selected(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def parse_rule(text: str, n_rows: int):
    kind, _, value = str(text).partition(":")
    kind = kind.lower()
    if kind == "topd":
        d = default_top_d(n_rows) if value in ("", "auto") else int(value)
        return TopDRule(d)
    if kind == "gamma":
        return ThresholdRule(float(value))
    raise ValueError(f"rule must look like 'topd:<d>' or 'gamma:<g>', got {text!r}")


def _parse_conditional_index(value, p: int) -> int:
    """1-based feature number (or 'X<i>' name) -> 0-based column index."""
    if isinstance(value, str):
        value = value.strip()
        if value.upper().startswith("X"):
            value = value[1:]
        value = int(value)
    idx = int(value) - 1
    if not 0 <= idx < p:
        raise ValueError(f"conditional feature X{value} out of range for p={p}")
    return idx


def cmd_simulate(args, tracker: OutputTracker) -> None:
    with open(args.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    convention = cfg.get("ms_convention", "exclude_conditional")
    config = SimConfig(
        N=int(cfg["N"]), p=int(cfg["p"]), c=float(cfg["c"]),
        model=str(cfg.get("model", "a")),
        conditional_index=_parse_conditional_index(cfg.get("conditional", 1),
                                                   int(cfg["p"])),
        K=int(cfg.get("K", 1)), reps=int(cfg.get("reps", 1)), seed=seed,
        shuffle=bool(cfg.get("shuffle", False)),
        exclude_conditional_from_truth=(convention == "exclude_conditional"),
    )
    method = str(cfg.get("method", "acps")).lower()
    if "knockoff" in cfg:
        kn = cfg["knockoff"]
        pipeline = knockoff_pipeline(
            method, alpha=float(kn["alpha"]), d=int(kn["d"]),
            n1=kn.get("n1"), n2=kn.get("n2"),
            s_method=str(kn.get("s_method", "equi")))
    else:
        pipeline = screening_pipeline(method, parse_rule(cfg.get("rule", "topd:auto"),
                                                         config.N))
    if args.verbose:
        print(f"simulate: {config.reps} replications, method={method}", file=sys.stderr)
    report = run_replications(config, pipeline)
    report.write_csv(tracker.path("replications.csv"))
    report.write_summary_csv(tracker.path("summary.csv"))
    _write_json(tracker.path("meta.json"), {
        "command": "simulate", "config": cfg, "seed": seed,
        "truth_convention": report.truth_convention, "version": __version__,
    })


def _ingest_from_args(args, split_index=None) -> IngestedDataset:
    return ingest_csv(
        args.data, response_column=args.response,
        conditional_column=getattr(args, "conditional", "AUTO"),
        standardize=args.standardize, interactions=args.interactions,
        clip_sd=args.clip_sd, split_index=split_index)


def cmd_screen(args, tracker: OutputTracker) -> None:
    ds = _ingest_from_args(args)
    sharded = shard_dataset(ds.matrix, args.shards, seed=args.seed,
                            shuffle=not args.no_shuffle,
                            feature_names=ds.feature_names)
    rule = parse_rule(args.rule, len(ds.y))
    result = screen_dataset(sharded, args.method, rule)
    write_screening_csv(tracker.path("utilities.csv"), result, ds.feature_names)
    write_selected(tracker.path("selected.txt"), result.selected, ds.feature_names)
    _write_json(tracker.path("meta.json"), {
        "command": "screen", "data": str(args.data), "response": args.response,
        "conditional": ds.conditional_name, "method": args.method,
        "shards": args.shards, "rule": args.rule, "seed": args.seed,
        "standardize": args.standardize, "interactions": args.interactions,
        "clip_sd": args.clip_sd, "rows": int(len(ds.y)),
        "rows_dropped_nonfinite": ds.n_dropped, "rows_dropped_outlier": ds.n_clipped,
        "n_selected": int(len(result.selected)), "version": __version__,
    })


def cmd_knockoff(args, tracker: OutputTracker) -> None:
    ds = _ingest_from_args(args)
    sharded = shard_dataset(ds.matrix, args.shards, seed=args.seed,
                            shuffle=not args.no_shuffle,
                            feature_names=ds.feature_names)
    out = run_algorithm1(sharded, alpha=args.alpha, d=args.d, method=args.method,
                         seed=args.seed, n1=args.n1, n2=args.n2,
                         s_method=args.s_method)
    with open(tracker.path("audit.txt"), "w", encoding="utf-8") as fh:
        fh.write(out.audit.to_text())
    write_selected(tracker.path("selected.txt"), out.selection.selected,
                   ds.feature_names)
    _write_json(tracker.path("meta.json"), {
        "command": "knockoff", "data": str(args.data), "response": args.response,
        "conditional": ds.conditional_name, "method": args.method,
        "shards": args.shards, "alpha": args.alpha, "d": args.d,
        "n1": out.audit.n1, "n2": out.audit.n2, "s_method": args.s_method,
        "seed": args.seed, "standardize": args.standardize,
        "interactions": args.interactions, "clip_sd": args.clip_sd,
        "rows": int(len(ds.y)), "rows_dropped_nonfinite": ds.n_dropped,
        "rows_dropped_outlier": ds.n_clipped,
        "threshold": (None if math.isinf(out.selection.threshold)
                      else out.selection.threshold),
        "n_selected": int(len(out.selection.selected)), "version": __version__,
    })


def cmd_evaluate(args, tracker: OutputTracker) -> None:
    ds = ingest_csv(args.data, response_column=args.response,
                    conditional_column="AUTO" if args.conditional is None
                    else args.conditional,
                    standardize=args.standardize, interactions=args.interactions,
                    clip_sd=args.clip_sd, split_index=args.split)
    names = read_selected(args.selected)
    name_to_col = {nm: i for i, nm in enumerate(ds.feature_names)}
    name_to_col[ds.conditional_name] = -1  # conditional column kept separately
    cols = []
    for nm in names:
        if nm not in name_to_col:
            raise ColumnNotFound(f"selected feature {nm!r} not in ingested data")
        cols.append(name_to_col[nm])
    design = np.column_stack(
        [np.ones(len(ds.y))]
        + [(ds.z if c == -1 else ds.X[:, c]) for c in cols]) \
        if cols else np.ones((len(ds.y), 1))

    split = args.split
    if not 0 < split < len(ds.y):
        raise ValueError(f"split index {split} must fall inside the {len(ds.y)} rows")
    A, b = design[:split], ds.y[:split]
    beta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    ridge_used = False
    if rank < A.shape[1]:
        # Interaction columns are frequently collinear; fall back to ridge.
        ridge_used = True
        gram = A.T @ A + RIDGE_EVAL * np.eye(A.shape[1])
        beta = np.linalg.solve(gram, A.T @ b)
    resid_test = ds.y[split:] - design[split:] @ beta
    rmse_test = float(np.sqrt(np.mean(resid_test**2)))
    resid_train = b - A @ beta
    _write_json(tracker.path("evaluate.json"), {
        "command": "evaluate", "data": str(args.data), "selected": str(args.selected),
        "split": split, "n_train": int(split), "n_test": int(len(ds.y) - split),
        "n_features": len(cols), "ridge_used": ridge_used,
        "rmse_train": float(np.sqrt(np.mean(resid_train**2))),
        "rmse_test": rmse_test, "version": __version__,
    })
    if args.verbose:
        print(f"evaluate: test RMSE {rmse_test:.6f} with {len(cols)} features",
              file=sys.stderr)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_ingest_flags(sp):
    sp.add_argument("--data", required=True, help="input CSV (header row required)")
    sp.add_argument("--response", required=True, help="response column name")
    sp.add_argument("--standardize", action="store_true",
                    help="center/scale feature columns by training statistics")
    sp.add_argument("--interactions", action="store_true",
                    help="expand all pairwise feature products")
    sp.add_argument("--clip-sd", type=float, default=None, dest="clip_sd",
                    help="drop rows with any feature beyond this many sds")


def _add_shard_flags(sp):
    sp.add_argument("--conditional", default="AUTO",
                    help="conditioning column name, or AUTO to pick the feature "
                         "most correlated with the response")
    sp.add_argument("--method", choices=("saps", "acps", "jdps"), default="acps")
    sp.add_argument("--shards", type=int, default=1, metavar="K")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-shuffle", action="store_true",
                    help="keep file row order when sharding")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shardscreen",
        description="Distributed conditional feature screening with FDR control.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run replicated synthetic experiments")
    sp.add_argument("--config", required=True, help="JSON experiment config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config's root seed")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("screen", help="rank CSV features by partial correlation")
    _add_ingest_flags(sp)
    _add_shard_flags(sp)
    sp.add_argument("--rule", default="topd:auto",
                    help="'topd:<d>' (or 'topd:auto' for floor(n/log n)) or 'gamma:<g>'")
    sp.add_argument("--out", required=True)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("knockoff", help="two-stage FDR-controlled selection")
    _add_ingest_flags(sp)
    _add_shard_flags(sp)
    sp.add_argument("--alpha", type=float, required=True, help="target FDR level")
    sp.add_argument("--d", type=int, required=True,
                    help="stage-one screening size (needs n2 > 2d)")
    sp.add_argument("--n1", type=int, default=None)
    sp.add_argument("--n2", type=int, default=None)
    sp.add_argument("--s-method", choices=("equi", "sdp"), default="equi",
                    dest="s_method")
    sp.add_argument("--out", required=True)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_knockoff)

    sp = sub.add_parser("evaluate", help="test RMSE of a selected feature set")
    _add_ingest_flags(sp)
    sp.add_argument("--conditional", default=None,
                    help="conditioning column used during screening (so its "
                         "name resolves if selected)")
    sp.add_argument("--selected", required=True, help="selected-set text file")
    sp.add_argument("--split", type=int, required=True,
                    help="first test row: rows [0, split) train, [split, n) test")
    sp.add_argument("--out", required=True)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tracker = OutputTracker(args.out)
    try:
        args.func(args, tracker)
    except ShardScreenError as exc:
        tracker.discard_all()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        tracker.discard_all()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
