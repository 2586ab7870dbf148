"""JSON model files for plain and sectioned networks.

Layout: top-level `variables` (name, states), `edges` ([parent, child]),
`cpts` (child, parents, rows of probability vectors in row-major declared
parent order). Sectioned models add `subnets` (id, variables, cpt_owned) and
`hypertree` ({"links": [[id, id], ...]}); interfaces are always computed from
the variable sets, never declared. Saving is canonical, so load -> save ->
load reproduces identical structures.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .bayes import BayesNet, Cpt, Variable
from .errors import ModelFormatError
from .msbn import Msbn, Subnet


def _require(doc: dict, key: str, where: str = "document"):
    if key not in doc:
        raise ModelFormatError(f"{where} is missing the '{key}' key")
    return doc[key]


def network_from_dict(doc: dict) -> BayesNet:
    try:
        variables = tuple(
            Variable(str(v["name"]), tuple(str(s) for s in v["states"]))
            for v in _require(doc, "variables")
        )
        edges = [(str(p), str(c)) for p, c in _require(doc, "edges")]
        cpts = {}
        for entry in _require(doc, "cpts"):
            child = str(entry["child"])
            parents = tuple(str(p) for p in entry["parents"])
            table = np.asarray(entry["rows"], dtype=float)
            if table.ndim != 2:
                raise ModelFormatError(
                    f"cpt for '{child}': rows must form a rectangular table"
                )
            cpts[child] = Cpt(child, parents, table)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    return BayesNet(variables, edges, cpts)


def network_to_dict(net: BayesNet) -> dict:
    return {
        "variables": [
            {"name": v.name, "states": list(v.states)} for v in net.variables
        ],
        "edges": [list(e) for e in sorted(net.dag.edges)],
        "cpts": [
            {
                "child": name,
                "parents": list(net.cpts[name].parents),
                "rows": [[float(x) for x in row] for row in net.cpts[name].table],
            }
            for name in net.names
        ],
    }


def msbn_from_dict(doc: dict) -> Msbn:
    net = network_from_dict(doc)
    try:
        subnets = tuple(
            Subnet(
                str(s["id"]),
                tuple(str(v) for v in s["variables"]),
                frozenset(str(v) for v in s["cpt_owned"]),
            )
            for s in _require(doc, "subnets")
        )
        links = tuple(
            (str(a), str(b))
            for a, b in _require(doc, "hypertree").get("links", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed sectioned model: {exc}") from None
    return Msbn(net, subnets, links)


def msbn_to_dict(msbn: Msbn) -> dict:
    doc = network_to_dict(msbn.net)
    doc["subnets"] = [
        {
            "id": s.id,
            "variables": list(s.variables),
            "cpt_owned": sorted(s.cpt_owned),
        }
        for s in msbn.subnets
    ]
    doc["hypertree"] = {"links": [list(l) for l in msbn.links]}
    return doc


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read '{path}': {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"'{path}' is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"'{path}' does not hold a JSON object")
    return doc


def load_model(path) -> "BayesNet | Msbn":
    """Load either format; files with a `subnets` key come back sectioned."""
    doc = _read_json(path)
    if "subnets" in doc:
        return msbn_from_dict(doc)
    return network_from_dict(doc)


def load_network(path) -> BayesNet:
    return network_from_dict(_read_json(path))


def load_msbn(path) -> Msbn:
    return msbn_from_dict(_read_json(path))


def save_model(model, path) -> None:
    doc = msbn_to_dict(model) if isinstance(model, Msbn) else network_to_dict(model)
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def as_single_subnet(net: BayesNet, sid: str = "s0") -> Msbn:
    """Wrap a plain network as a one-subnet sectioned model."""
    return Msbn(
        net,
        (Subnet(sid, tuple(net.names), frozenset(net.names)),),
        (),
    )


def bundled_path(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(resources.files("msbnids").joinpath("data", name))
