"""Model configuration files and run manifests.

Model configs are key-value trees with sections [model], [drag], [pressure_q],
[pressure_r]; matrices are row-major flat lists with an explicit size.  Both
TOML and JSON files are accepted (selected by extension).  A run manifest is
a JSON file capturing everything needed to reproduce a run bit-identically,
including checksums of the artifacts it produced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    ConstantDrag,
    ConstantPressure,
    DegenerateDrag,
    ModelError,
    ModelSpec,
    PerturbedDrag,
    SKTPressure,
    TumorPressure,
    UnitDrag,
    preset,
)

SCHEMA_VERSION = 1


def _load_tree(path):
    text = open(path, "rb").read()
    name = str(path)
    if name.endswith(".json") or name.endswith(".meta"):
        return json.loads(text.decode())
    try:
        import tomllib as toml  # py >= 3.11
    except ModuleNotFoundError:
        import tomli as toml
    return toml.loads(text.decode())


def _matrix_from(section, key, size):
    flat = section.get(key)
    if flat is None:
        raise ModelError(f"missing matrix {key!r}")
    arr = np.asarray(flat, dtype=float)
    if arr.size != size * size:
        raise ModelError(f"{key!r} must have {size * size} row-major entries")
    return arr.reshape(size, size)


def build_model(tree):
    """Construct a ModelSpec from a configuration tree."""
    model = tree.get("model", {})
    if "preset" in model:
        overrides = {k: v for k, v in model.items() if k not in ("preset", "n")}
        return preset(model["preset"], **overrides)
    n = int(model.get("n", 2))
    eta = float(model.get("eta", 0.0))

    drag_sec = tree.get("drag", {"law": "unit"})
    law = drag_sec.get("law", "unit")
    if law == "unit":
        drag = UnitDrag()
    elif law == "constant":
        drag = ConstantDrag(_matrix_from(drag_sec, "matrix", int(drag_sec.get("size", n + 1))))
    elif law == "perturbed":
        drag = PerturbedDrag(
            _matrix_from(drag_sec, "kstar", int(drag_sec.get("size", n + 1))),
            float(drag_sec.get("eps", 0.0)),
        )
    elif law == "degenerate":
        drag = DegenerateDrag(
            _matrix_from(drag_sec, "kstar", int(drag_sec.get("size", n + 1)))
        )
    else:
        raise ModelError(f"unknown drag law {law!r}")

    q_sec = tree.get("pressure_q", {})
    q_law = q_sec.get("law", "constant")
    if q_law == "constant":
        size = int(q_sec.get("size", n + 1))
        q = ConstantPressure(
            _matrix_from(q_sec, "matrix", size),
            allow_solvent_pressure=bool(q_sec.get("allow_solvent_pressure", False)),
        )
    elif q_law == "tumor":
        q = TumorPressure(
            beta_c=float(q_sec.get("beta_c", 0.2)),
            beta_m=float(q_sec.get("beta_m", 0.0015)),
            theta=float(q_sec.get("theta", 30.0)),
        )
    elif q_law in ("multiphase-skt", "skt"):
        q = SKTPressure(
            theta1=float(q_sec.get("theta1", 1.0)),
            theta2=float(q_sec.get("theta2", 10.0)),
        )
    else:
        raise ModelError(f"unknown pressure law {q_law!r}")

    r_sec = tree.get("pressure_r", {})
    if r_sec:
        r = _matrix_from(r_sec, "matrix", int(r_sec.get("size", n + 1)))
    else:
        r = np.zeros((n + 1, n + 1))

    return ModelSpec(
        n=n, drag=drag, q=q, r=r, eta=eta,
        name=str(model.get("name", "config")),
        analysis_only=bool(model.get("analysis_only", False)),
    )


def load_model(path):
    return build_model(_load_tree(path))


def serialize_model(spec):
    """Configuration tree reproducing the ModelSpec exactly."""
    tree: dict = {"model": {"n": spec.n, "eta": spec.eta, "name": spec.name,
                            "analysis_only": spec.analysis_only}}
    drag = spec.drag
    if isinstance(drag, UnitDrag):
        tree["drag"] = {"law": "unit"}
    elif isinstance(drag, ConstantDrag):
        tree["drag"] = {"law": "constant", "size": drag.k.shape[0],
                        "matrix": drag.k.reshape(-1).tolist()}
    elif isinstance(drag, PerturbedDrag):
        tree["drag"] = {"law": "perturbed", "size": drag.kstar.shape[0],
                        "kstar": drag.kstar.reshape(-1).tolist(), "eps": drag.eps}
    elif isinstance(drag, DegenerateDrag):
        tree["drag"] = {"law": "degenerate", "size": drag.kstar.shape[0],
                        "kstar": drag.kstar.reshape(-1).tolist()}
    else:
        raise ModelError("cannot serialize this drag law")
    q = spec.q
    if isinstance(q, ConstantPressure):
        tree["pressure_q"] = {"law": "constant", "size": q.q.shape[0],
                              "matrix": q.q.reshape(-1).tolist(),
                              "allow_solvent_pressure": q.allow_solvent_pressure}
    elif isinstance(q, TumorPressure):
        tree["pressure_q"] = {"law": "tumor", "beta_c": q.beta_c,
                              "beta_m": q.beta_m, "theta": q.theta}
    elif isinstance(q, SKTPressure):
        tree["pressure_q"] = {"law": "multiphase-skt", "theta1": q.theta1,
                              "theta2": q.theta2}
    else:
        raise ModelError("cannot serialize this pressure law")
    tree["pressure_r"] = {"size": spec.r.shape[0],
                          "matrix": spec.r.reshape(-1).tolist()}
    return tree


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Resolved inputs and artifact checksums of one simulation run."""

    model: dict
    n_cells: int
    dt: float
    t_final: float
    eta: float
    snapshot_times: list
    projection_enabled: bool
    jacobian_mode: str
    newton_tol: float
    newton_max_iters: int
    diagnostics_every: int
    raw_initial: bool
    pad: float
    normalization: dict = field(default_factory=dict)
    preset: str | None = None
    outputs: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        tree = json.loads(open(path).read())
        tree.pop("schema_version", None)
        outputs = tree.pop("outputs", {})
        m = cls(**tree)
        m.outputs = outputs
        return m
