"""Structured result documents and deterministic file output.

All documents are schema-versioned JSON with sorted keys and no
timestamps, so replaying a command with the same inputs and seed
reproduces every output byte for byte. CSV cells hold shortest-repr
floats, which round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, is_dataclass

import numpy as np

from .community import CommunityNode, Hierarchy, Partition
from .factors import CalibratedModel, FactorSet
from .panels import IssuerMeta, ReturnPanel
from .rmt import SpectralDecomposition

SCHEMA_PREFIX = "mesorisk"


def jsonable(value):
    """Recursively convert numpy scalars/arrays and dataclasses to JSON types."""
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if is_dataclass(value) and not isinstance(value, type):
        return jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, float) and value != value:  # NaN has no JSON form
        return None
    return value


def write_json(path, document) -> None:
    with open(path, "w") as handle:
        json.dump(jsonable(document), handle, sort_keys=True, indent=2)
        handle.write("\n")


def write_csv(path, header, rows) -> None:
    """CSV with repr-formatted floats for exact round-trips."""

    def cell(value):
        if value is None:
            return ""
        if isinstance(value, (np.floating, float)):
            return repr(float(value))
        if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
            return str(int(value))
        return str(value)

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([str(h) for h in header])
        for row in rows:
            writer.writerow([cell(v) for v in row])


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_returns_csv(path, panel: ReturnPanel) -> None:
    """Panel artifact: one date column plus one repr-float column per issuer."""
    header = ["date", *panel.issuers]
    rows = [
        [panel.dates[t].isoformat(), *panel.returns[t]]
        for t in range(panel.n_obs)
    ]
    write_csv(path, header, rows)


def load_returns_csv(path, resolution, meta=None) -> ReturnPanel:
    """Rebuild a return panel from :func:`save_returns_csv` output."""
    import datetime as dt

    from .panels import Resolution

    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        issuers = header[1:]
        dates = []
        rows = []
        for row in reader:
            if not row:
                continue
            dates.append(dt.date.fromisoformat(row[0]))
            rows.append([float(cell) for cell in row[1:]])
    return ReturnPanel(
        dates=dates,
        issuers=issuers,
        returns=np.array(rows),
        resolution=Resolution.parse(resolution),
        standardized=False,
        meta=dict(meta) if meta else {},
    )


def _node_document(node: CommunityNode, path: str, issuers) -> dict:
    node_path = f"{path}/{node.name}" if path else node.name
    return {
        "name": node.name,
        "path": node_path,
        "size": node.size,
        "quality_share": float(node.quality_share),
        "members": [issuers[int(j)] for j in node.members],
        "children": [
            _node_document(child, node_path, issuers) for child in node.children
        ],
    }


def _label_paths(tree: Hierarchy) -> dict[str, str]:
    paths: dict[str, str] = {}

    def visit(node: CommunityNode, prefix: str):
        node_path = f"{prefix}/{node.name}" if prefix else node.name
        if node.children:
            for child in node.children:
                visit(child, node_path)
        else:
            for j in node.members:
                paths[tree.issuers[int(j)]] = node_path

    for root in tree.roots:
        visit(root, "")
    return paths


def detection_document(
    tree: Hierarchy,
    decomposition: SpectralDecomposition,
    norm: float,
    params: dict,
) -> dict:
    """Schema-versioned detection result with per-node label paths."""
    partition = tree.partition
    status = "no mesoscopic structure" if partition.is_trivial else "ok"
    return {
        "schema": f"{SCHEMA_PREFIX}/detection/1",
        "params": jsonable(params),
        "status": status,
        "norm": float(norm),
        "quality": float(partition.quality),
        "n_series": int(partition.n_nodes),
        "n_communities": int(partition.n_communities),
        "bounds": {
            "lambda_minus": float(decomposition.bounds.lambda_minus),
            "lambda_plus": float(decomposition.bounds.lambda_plus),
        },
        "market_index": decomposition.market_index,
        "market_sign_fraction": decomposition.market_sign_fraction,
        "eigenvalue_classes": {
            tag: int(sum(1 for t in decomposition.classification if t == tag))
            for tag in ("market", "group", "random", "below_bulk")
        },
        "communities": [
            _node_document(root, "", tree.issuers) for root in tree.roots
        ],
        "label_paths": _label_paths(tree),
    }


def hierarchy_from_document(document: dict):
    """Community and subcommunity name per issuer, from a detection document.

    Returns (issuers, community map, subcommunity map) where the maps key
    by issuer id. The subcommunity of an undivided community is the
    community itself.
    """
    if document.get("schema") != f"{SCHEMA_PREFIX}/detection/1":
        raise ValueError(
            f"not a detection document: schema {document.get('schema')!r}"
        )
    community: dict[str, str] = {}
    subcommunity: dict[str, str] = {}
    issuers: list[str] = []
    for root in document["communities"]:
        for issuer in root["members"]:
            community[issuer] = root["name"]
        stack = [root]
        while stack:
            node = stack.pop()
            if node["children"]:
                stack.extend(node["children"])
            else:
                for issuer in node["members"]:
                    subcommunity[issuer] = node["name"]
    for root in document["communities"]:
        issuers.extend(root["members"])
    return issuers, community, subcommunity


def partition_from_document(document: dict, issuers: list[str]) -> Partition:
    """Top-level partition aligned to the given issuer order."""
    _, community, _ = hierarchy_from_document(document)
    missing = [i for i in issuers if i not in community]
    if missing:
        raise ValueError(
            f"detection document lacks {len(missing)} issuer(s), e.g. {missing[:3]}"
        )
    names = sorted({community[i] for i in issuers})
    index = {name: k for k, name in enumerate(names)}
    labels = np.array([index[community[i]] for i in issuers])
    return Partition(labels=labels, quality=float(document["quality"]))


def composition_rows(
    tree: Hierarchy,
    meta: dict[str, IssuerMeta],
    field: str,
) -> list[list]:
    """Counts of a metadata field's values inside every community node."""
    rows = []
    for node in tree.walk():
        counts: dict[str, int] = {}
        for j in node.members:
            record = meta.get(tree.issuers[int(j)])
            value = getattr(record, field, None) if record else None
            key = value if value else "unknown"
            counts[key] = counts.get(key, 0) + 1
        for key in sorted(counts):
            rows.append([node.name, key, counts[key]])
    return rows


def calibration_document(model: CalibratedModel, factors: FactorSet) -> dict:
    """Schema-versioned calibration result for one variant."""
    issuers = []
    for i, issuer in enumerate(model.issuers):
        issuers.append(
            {
                "id": issuer,
                "factors": list(model.group_assignment[i]),
                "alpha_hat": jsonable(model.alpha_hat[i]),
                "alpha": jsonable(model.alpha[i]),
                "beta": float(model.beta[i]),
                "psi": float(model.psi[i]),
                "r_squared": float(model.r_squared[i]),
            }
        )
    diagnostics = {
        name: jsonable(diag)
        for name, diag in factors.diagnostics.items()
        if name in set(model.factor_names)
    }
    return {
        "schema": f"{SCHEMA_PREFIX}/calibration/1",
        "variant": model.variant,
        "n_obs": int(model.n_obs),
        "factor_names": list(model.factor_names),
        "omega": jsonable(model.omega),
        "factor_diagnostics": diagnostics,
        "issuers": issuers,
    }
