"""SDPA sparse format (.dat-s) writer and reader.

The exported problem is the standalone moment SDP

    min  c.x   s.t.   X = sum_i x_i F_i - F_0  psd

with x the full moment vector.  PSD blocks map one-to-one onto the
instance's localizing blocks; every linear equality (assembled rows plus
the instance's internal variable-reduction identities) becomes a +/- pair
of entries in one trailing diagonal block.  Comment lines at the top
document the bijection from file variables back to (measure, exponent)
moment indices.  Values are printed with repr(), so a write/read round
trip reproduces every coefficient exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .relaxation import EqRow, LinearMatrixForm, SDPInstance


class SdpaFormatError(ValueError):
    pass


@dataclass
class SdpaData:
    """Plain representation of a .dat-s file.

    entries[(matno, blkno)] is a dict (i, j) -> value with 1-based matrix
    numbers (0 = F0) and 1-based block numbers, i <= j.
    """

    c: np.ndarray
    block_struct: list[int]
    entries: dict[tuple[int, int], dict[tuple[int, int], float]] = field(
        default_factory=dict
    )
    comments: list[str] = field(default_factory=list)

    def entry(self, matno, blkno, i, j):
        return self.entries.get((matno, blkno), {}).get((i, j), 0.0)


def _all_equalities(inst: SDPInstance) -> list[EqRow]:
    rows = list(inst.eq_rows)
    red = inst.reduction
    if red is not None:
        n = inst.n
        for g in range(n):
            col = red.expand[g].copy()
            if g in red.reduced_idx:
                continue  # identity dependence
            cols = np.flatnonzero(col)
            vals = -col[cols]
            cols = np.append(red.reduced_idx[cols], g)
            vals = np.append(vals, 1.0)
            rows.append(EqRow(("reduction", g), cols.astype(np.intp), vals, red.offset[g]))
    return rows


def instance_to_sdpa(inst: SDPInstance) -> SdpaData:
    n = inst.n
    entries: dict[tuple[int, int], dict[tuple[int, int], float]] = {}

    def put(matno, blkno, i, j, v):
        if v == 0.0:
            return
        if i > j:
            i, j = j, i
        d = entries.setdefault((matno, blkno), {})
        d[(i, j)] = d.get((i, j), 0.0) + v

    block_struct = []
    for k, blk in enumerate(inst.blocks, start=1):
        block_struct.append(blk.size)
        for r, cc, g, v in zip(blk.rows, blk.cols, blk.gidx, blk.coeff):
            if r <= cc:
                put(int(g) + 1, k, int(r) + 1, int(cc) + 1, float(v))
        if blk.const is not None:
            # X = sum x_i F_i - F_0 with our block = linpart + const >= 0
            for i in range(blk.size):
                for j in range(i, blk.size):
                    put(0, k, i + 1, j + 1, -float(blk.const[i, j]))

    rows = _all_equalities(inst)
    if rows:
        blkno = len(inst.blocks) + 1
        block_struct.append(-2 * len(rows))
        for r_i, row in enumerate(rows):
            d_pos = 2 * r_i + 1
            d_neg = 2 * r_i + 2
            for g, v in zip(row.cols, row.vals):
                put(int(g) + 1, blkno, d_pos, d_pos, float(v))
                put(int(g) + 1, blkno, d_neg, d_neg, -float(v))
            put(0, blkno, d_pos, d_pos, float(row.rhs))
            put(0, blkno, d_neg, d_neg, -float(row.rhs))

    comments = [f"* objective offset (not representable in SDPA): {inst.objective_offset!r}"]
    if inst.layout is not None:
        for meas in inst.layout.measures:
            for k, exps in enumerate(meas.monomials):
                comments.append(f"* var {meas.offset + k + 1} = {meas.id} {list(exps)}")
    for k, blk in enumerate(inst.blocks, start=1):
        comments.append(f"* block {k} = {blk.measure_id} {blk.label}")
    if rows:
        comments.append(f"* block {len(inst.blocks) + 1} = equality pairs ({len(rows)} rows)")
    return SdpaData(np.asarray(inst.cost, dtype=float), block_struct, entries, comments)


def write_sdpa(data: SdpaData, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for line in data.comments:
            fh.write(line + "\n")
        fh.write(f"{len(data.c)}\n")
        fh.write(f"{len(data.block_struct)}\n")
        fh.write(" ".join(str(s) for s in data.block_struct) + "\n")
        fh.write(" ".join(repr(float(v)) for v in data.c) + "\n")
        for (matno, blkno), d in sorted(data.entries.items()):
            for (i, j), v in sorted(d.items()):
                fh.write(f"{matno} {blkno} {i} {j} {v!r}\n")


def export_sdpa(inst: SDPInstance, path: str) -> SdpaData:
    """Write the instance in SDPA sparse format; returns the file's data."""
    data = instance_to_sdpa(inst)
    write_sdpa(data, path)
    return data


def read_sdpa(path: str) -> SdpaData:
    """Parse a .dat-s file (comments, sizes, c vector, entry lines)."""
    comments = []
    tokens_needed = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("*") or stripped.startswith('"'):
            comments.append(stripped)
            continue
        if stripped:
            body.append(stripped)
    if len(body) < 4:
        raise SdpaFormatError("file too short: need m, nblocks, blockstruct, c")

    def ints(text):
        out = []
        for tok in text.replace(",", " ").replace("(", " ").replace(")", " ").replace("{", " ").replace("}", " ").split():
            out.append(int(float(tok)))
        return out

    try:
        m = ints(body[0])[0]
        nblocks = ints(body[1])[0]
        struct = ints(body[2])
        cvec = [float(t) for t in body[3].replace(",", " ").split()]
    except (ValueError, IndexError) as exc:
        raise SdpaFormatError(f"malformed header: {exc}") from None
    if len(struct) != nblocks:
        raise SdpaFormatError(f"blockstruct has {len(struct)} sizes, expected {nblocks}")
    if len(cvec) != m:
        raise SdpaFormatError(f"c vector has {len(cvec)} entries, expected {m}")

    entries: dict[tuple[int, int], dict[tuple[int, int], float]] = {}
    for line in body[4:]:
        toks = line.split()
        if len(toks) != 5:
            raise SdpaFormatError(f"entry line needs 5 fields: {line!r}")
        matno, blkno, i, j = (int(t) for t in toks[:4])
        v = float(toks[4])
        if not 0 <= matno <= m:
            raise SdpaFormatError(f"matrix number {matno} out of range")
        if not 1 <= blkno <= nblocks:
            raise SdpaFormatError(f"block number {blkno} out of range")
        size = abs(struct[blkno - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise SdpaFormatError(f"entry ({i},{j}) outside block {blkno} of size {size}")
        if i > j:
            raise SdpaFormatError("entries must satisfy i <= j")
        if struct[blkno - 1] < 0 and i != j:
            raise SdpaFormatError("diagonal block entries must have i == j")
        d = entries.setdefault((matno, blkno), {})
        d[(i, j)] = d.get((i, j), 0.0) + v
    return SdpaData(np.array(cvec), struct, entries, comments)
