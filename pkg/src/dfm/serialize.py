"""Native JSON instance format.

A single self-describing document with explicit matrices, cost descriptors,
affine constraint rows, and the edge list; chosen over a binary format so
counterexamples can be authored and diffed by hand.

Document layout::

    {
      "graph": {"node_count": n, "edges": [[i, j], ...]},
      "rhs": [...], "rho": 1e-4,
      "beta": 0.0, "beta1": 1.0, "structure": null, "name": "...",
      "nodes": [
        {"dim": d,
         "smoothness": L,                      # optional, derived if absent
         "cost": {"type": "quadratic", "quad": [[..]], "lin": [..], "const": 0}
               | {"type": "sigmoid", "a": .., "b": .., "p": .., "dim": d},
         "constraints": [{"type": "affine", "a": [..], "b": ..}, ...],
         "coupling": [[..], ...]},             # m x d
        ...
      ]
    }
"""

from __future__ import annotations

import json

import numpy as np

from .model import (AffineConstraint, Graph, ModelError, NodeLocal, ProblemSpec,
                    QuadraticCost, QuadraticConstraint, SigmoidUtilityCost)


class FormatError(Exception):
    pass


def _cost_to_dict(cost):
    if isinstance(cost, QuadraticCost):
        return {"type": "quadratic", "quad": cost.quad.tolist(),
                "lin": cost.lin.tolist(), "const": cost.const}
    if isinstance(cost, SigmoidUtilityCost):
        return {"type": "sigmoid", "a": cost.a, "b": cost.b, "p": cost.p,
                "dim": cost.dim}
    raise FormatError(f"cost {type(cost).__name__} is not serializable")


def _cost_from_dict(d):
    kind = d.get("type")
    if kind == "quadratic":
        return QuadraticCost(d["quad"], d["lin"], d.get("const", 0.0))
    if kind == "sigmoid":
        return SigmoidUtilityCost(d["a"], d["b"], d["p"], d.get("dim", 1))
    raise FormatError(f"unknown cost type {kind!r}")


def _constraint_to_dict(g):
    if isinstance(g, AffineConstraint):
        return {"type": "affine", "a": g.a.tolist(), "b": g.b}
    if isinstance(g, QuadraticConstraint):
        return {"type": "quadratic", "quad": g.quad.tolist(),
                "lin": g.lin.tolist(), "const": g.const}
    raise FormatError(f"constraint {type(g).__name__} is not serializable")


def _constraint_from_dict(d):
    kind = d.get("type")
    if kind == "affine":
        return AffineConstraint(d["a"], d["b"])
    if kind == "quadratic":
        return QuadraticConstraint(d["quad"], d["lin"], d["const"])
    raise FormatError(f"unknown constraint type {kind!r}")


def spec_to_dict(spec):
    return {
        "graph": {"node_count": spec.graph.node_count,
                  "edges": [list(e) for e in spec.graph.edges]},
        "rhs": spec.rhs.tolist(),
        "rho": spec.barrier_weight,
        "beta": spec.beta,
        "beta1": spec.beta1,
        "structure": spec.structure,
        "name": spec.name,
        "nodes": [{
            "dim": nd.dim,
            "smoothness": nd.smoothness,
            "cost": _cost_to_dict(nd.cost),
            "constraints": [_constraint_to_dict(g) for g in nd.constraints],
            "coupling": nd.coupling_block.tolist(),
        } for nd in spec.nodes],
    }


def spec_from_dict(doc):
    try:
        graph = Graph(node_count=int(doc["graph"]["node_count"]),
                      edges=tuple(tuple(e) for e in doc["graph"]["edges"]))
        nodes = tuple(NodeLocal(
            dim=int(nd["dim"]),
            cost=_cost_from_dict(nd["cost"]),
            coupling_block=np.asarray(nd["coupling"], dtype=float),
            constraints=tuple(_constraint_from_dict(g)
                              for g in nd.get("constraints", ())),
            smoothness=nd.get("smoothness"),
        ) for nd in doc["nodes"])
        return ProblemSpec(graph=graph, nodes=nodes, rhs=doc["rhs"],
                           barrier_weight=float(doc.get("rho", 1e-3)),
                           beta=doc.get("beta"), beta1=doc.get("beta1"),
                           structure=doc.get("structure"),
                           name=doc.get("name", ""))
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise FormatError(f"invalid instance document: {exc}") from exc


def dumps(spec, indent=2):
    return json.dumps(spec_to_dict(spec), indent=indent)


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not valid JSON: {exc}") from exc
    return spec_from_dict(doc)
