"""MATPOWER-style case file ingestion.

Reads the matrix-literal blocks ``mpc.<name> = [ ... ];`` (rows separated
by semicolons, ``%`` comments stripped) and keeps the columns needed for
dispatch instances: bus ids/types, generator bus + active-power limits,
polynomial cost rows, and branch endpoints.  Unknown blocks are ignored.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

# column indices in the standard gen / bus / branch / gencost tables
GEN_BUS, GEN_PMAX, GEN_PMIN = 0, 8, 9
BUS_ID, BUS_TYPE = 0, 1
BR_FROM, BR_TO = 0, 1
COST_MODEL, COST_NCOEF = 0, 3
POLYNOMIAL_MODEL = 2


class MatpowerParseError(Exception):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Bus:
    id: int
    type: int


@dataclass(frozen=True)
class Gen:
    bus: int
    pmin: float
    pmax: float


@dataclass(frozen=True)
class GenCost:
    model: int
    coeffs: tuple  # highest order first: c2, c1, c0


@dataclass(frozen=True)
class CaseData:
    buses: tuple = ()
    gens: tuple = ()
    gencosts: tuple = ()
    branches: tuple = ()

    def bus_ids(self):
        return {b.id for b in self.buses}


def _strip_comments(text):
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_block(body, start_line):
    rows = []
    line = start_line
    for raw in body.split(";"):
        line += raw.count("\n")
        raw = raw.strip()
        if not raw:
            continue
        try:
            rows.append(tuple(float(tok) for tok in re.split(r"[\s,]+", raw) if tok))
        except ValueError:
            raise MatpowerParseError(f"malformed matrix row {raw!r}", line=line)
    return rows


def parse_matpower_case(text):
    """Extract bus, gen, gencost, and branch tables from case text."""
    stripped = _strip_comments(text)
    blocks = {}
    for match in re.finditer(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", stripped, re.DOTALL):
        name = match.group(1)
        start_line = stripped[:match.start(2)].count("\n") + 1
        blocks[name] = _parse_block(match.group(2), start_line)

    buses = tuple(Bus(id=int(r[BUS_ID]), type=int(r[BUS_TYPE]))
                  for r in blocks.get("bus", ()))
    bus_ids = {b.id for b in buses}

    if not blocks:
        raise MatpowerParseError("no mpc matrix blocks found")
    gen_rows = blocks.get("gen", ())
    cost_rows = blocks.get("gencost", ())
    if gen_rows and not cost_rows:
        raise MatpowerParseError("no cost data")

    gens, gencosts = [], []
    for idx, row in enumerate(gen_rows):
        if len(row) <= GEN_PMIN:
            raise MatpowerParseError(f"gen row {idx} too short")
        bus = int(row[GEN_BUS])
        if buses and bus not in bus_ids:
            raise MatpowerParseError(f"gen row {idx} references unknown bus {bus}")
        if idx >= len(cost_rows):
            log.warning("gen row %d has no matching gencost row; skipped", idx)
            continue
        cost = cost_rows[idx]
        model = int(cost[COST_MODEL])
        if model != POLYNOMIAL_MODEL:
            log.warning("gencost row %d: model %d is not polynomial; skipped", idx, model)
            continue
        ncoef = int(cost[COST_NCOEF])
        coeffs = cost[COST_NCOEF + 1:COST_NCOEF + 1 + ncoef]
        if len(coeffs) < 3:
            log.warning("gencost row %d: need at least 3 polynomial coefficients; skipped", idx)
            continue
        gens.append(Gen(bus=bus, pmin=float(row[GEN_PMIN]), pmax=float(row[GEN_PMAX])))
        gencosts.append(GenCost(model=model, coeffs=tuple(coeffs[-3:])))

    if gen_rows and not gens:
        raise MatpowerParseError("no cost data")

    branches = tuple((int(r[BR_FROM]), int(r[BR_TO])) for r in blocks.get("branch", ()))
    return CaseData(buses=buses, gens=tuple(gens), gencosts=tuple(gencosts),
                    branches=branches)


def emit_case(case):
    """Serialize a CaseData back into MATPOWER-style case text."""
    lines = ["function mpc = case_export", "mpc.version = '2';",
             "mpc.baseMVA = 100;"]
    lines.append("mpc.bus = [")
    for b in case.buses:
        lines.append(f"\t{b.id}\t{b.type}\t0 0 0 0 1 1 0 0 1 1.1 0.9;")
    lines.append("];")
    lines.append("mpc.gen = [")
    for g in case.gens:
        lines.append(f"\t{g.bus}\t0 0 0 0 1 100 1\t{g.pmax}\t{g.pmin};")
    lines.append("];")
    lines.append("mpc.gencost = [")
    for c in case.gencosts:
        coeffs = "\t".join(repr(x) for x in c.coeffs)
        lines.append(f"\t{c.model}\t0\t0\t{len(c.coeffs)}\t{coeffs};")
    lines.append("];")
    lines.append("mpc.branch = [")
    for f, t in case.branches:
        lines.append(f"\t{f}\t{t}\t0 0 0 0 0 0 0 0 1 -360 360;")
    lines.append("];")
    return "\n".join(lines) + "\n"
