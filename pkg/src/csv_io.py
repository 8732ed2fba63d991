"""
CSV-Ein-/Ausgabe: Datensaetze, Traces (Langformat), Guides und Ergebnistabellen.
Zahlen werden mit voller Round-Trip-Genauigkeit geschrieben.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import DataError
from src.guide import make_guide
from src.models import Dataset
from src.trainer import Trace
from src.transforms import TransformKind

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["iteration", "parameter", "value"]
GRAD_NORM_COLUMNS = ["iteration", "batch_size", "norm_m", "norm_scale", "clipped_fraction", "elbo"]


def _prepare(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _read(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"Datei nicht gefunden: {path}")
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"CSV nicht lesbar: {path} ({e})") from e


# ============================================================
# Datensaetze
# ============================================================
def load_dataset(path, target="y", standardize=False):
    """Headered CSV; alle Spalten ausser der Zielspalte sind Merkmale."""
    df = _read(path)
    if target not in df.columns:
        raise DataError(f"Zielspalte '{target}' fehlt in {path}. Spalten: {list(df.columns)}")
    features = df.drop(columns=[target])
    non_numeric = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    if non_numeric:
        raise DataError(f"Nicht-numerische Spalten in {path}: {non_numeric}")
    if features.shape[1] == 0:
        features = pd.DataFrame({"x0": np.zeros(len(df))})
    dataset = Dataset(
        features=features.to_numpy(dtype=float),
        targets=df[target].to_numpy(dtype=float),
        feature_names=list(features.columns),
        target_name=target,
    )
    logger.info(f"Datensatz geladen: {path} (N={dataset.n}, p={dataset.n_features})")
    return dataset.standardized() if standardize else dataset


def save_dataset(dataset, path):
    path = _prepare(path)
    df = pd.DataFrame(dataset.features, columns=dataset.feature_names)
    df[dataset.target_name] = dataset.targets
    df.to_csv(path, index=False)
    logger.info(f"Datensatz gespeichert: {path}")


# ============================================================
# Traces
# ============================================================
def write_trace_csv(trace, path):
    """Langformat: eine Zeile pro (Iteration, Parameter), Iterationen ab 1."""
    path = _prepare(path)
    T, P = trace.snapshots.shape
    df = pd.DataFrame({
        "iteration": np.repeat(np.arange(1, T + 1), P),
        "parameter": np.tile(np.asarray(trace.param_names, dtype=object), T),
        "value": trace.snapshots.reshape(-1),
    })
    df.to_csv(path, index=False)
    logger.info(f"Trace gespeichert: {path} ({T} Iterationen, {P} Parameter)")


def _guide_layout(names):
    kind = "fullrank" if any(n.startswith("a[") for n in names) else "diagonal"
    dim = sum(1 for n in names if n.startswith("m["))
    if dim == 0:
        raise DataError("Keine Mittelwert-Parameter (m[i]) gefunden")
    return kind, dim


def read_trace_csv(path, transform=TransformKind.SOFTPLUS):
    """Liest einen Trace im Langformat (ohne Konfiguration und Privacy-Spend)."""
    df = _read(path)
    missing = set(TRACE_COLUMNS) - set(df.columns)
    if missing:
        raise DataError(f"Trace-CSV {path} ohne Spalten {sorted(missing)}")
    names = list(pd.unique(df["parameter"]))
    try:
        wide = df.pivot(index="iteration", columns="parameter", values="value").sort_index()
    except ValueError as e:
        raise DataError(f"Trace-CSV {path} enthaelt doppelte Eintraege ({e})") from e
    if wide.isna().any().any():
        raise DataError(f"Trace-CSV {path} ist unvollstaendig")
    kind, dim = _guide_layout(names)
    snapshots = wide[names].to_numpy(dtype=float)
    return Trace(
        snapshots=snapshots,
        param_names=names,
        config=None,
        spend=None,
        initial=None,
        guide_kind=kind,
        transform=transform,
        dim=dim,
    )


def write_grad_norms_csv(trace, path):
    path = _prepare(path)
    df = pd.DataFrame({
        "iteration": np.arange(1, trace.iterations + 1),
        "batch_size": trace.batch_sizes,
        "norm_m": trace.norm_m,
        "norm_scale": trace.norm_scale,
        "clipped_fraction": trace.clipped_fraction,
        "elbo": trace.elbo,
    }, columns=GRAD_NORM_COLUMNS)
    df.to_csv(path, index=False)
    logger.info(f"Gradientennormen gespeichert: {path}")


# ============================================================
# Guides und Tabellen
# ============================================================
GUIDE_COLUMNS = ["name", "index", "value"]


def _split_param_name(label):
    """'m[3]' -> ('m', '3'), 'a[2,1]' -> ('a', '2,1')."""
    name, _, rest = label.partition("[")
    return name, rest.rstrip("]")


def write_guide_csv(guide, path):
    """Eine Zeile pro Parameter: name (m, s oder a), index (i bzw. i,j), value."""
    path = _prepare(path)
    names, indices = zip(*(_split_param_name(label) for label in guide.param_names()))
    pd.DataFrame({"name": names, "index": indices, "value": guide.params}, columns=GUIDE_COLUMNS).to_csv(
        path, index=False
    )
    logger.info(f"Guide gespeichert: {path}")


def read_guide_csv(path, transform=TransformKind.SOFTPLUS):
    df = _read(path)
    if not set(GUIDE_COLUMNS) <= set(df.columns):
        raise DataError(f"Guide-CSV {path} braucht die Spalten {GUIDE_COLUMNS}")
    labels = [f"{name}[{index}]" for name, index in zip(df["name"].astype(str), df["index"].astype(str))]
    kind, dim = _guide_layout(labels)
    template = make_guide(kind, dim, transform=transform)
    values = dict(zip(labels, df["value"].to_numpy(dtype=float)))
    missing = [label for label in template.param_names() if label not in values]
    if missing or len(values) != len(labels) or len(labels) != template.params.size:
        raise DataError(f"Guide-CSV {path} passt nicht zu einem {kind}-Guide mit d={dim} (fehlend: {missing})")
    return template.with_params(np.array([values[label] for label in template.param_names()]))


def write_table(rows, path):
    """Liste von Dicts (oder DataFrame) als CSV."""
    path = _prepare(path)
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    df.to_csv(path, index=False)
    logger.info(f"Tabelle gespeichert: {path} ({len(df)} Zeilen)")
    return df
