import numpy as np
import pytest

from modalsos import benchmarks
from modalsos.problem import normalize
from modalsos.relaxation import LinearMatrixForm, SDPInstance, assemble
from modalsos.sdpa import (
    SdpaFormatError,
    export_sdpa,
    instance_to_sdpa,
    read_sdpa,
    write_sdpa,
)


def toy_instance():
    # min y2 s.t. [[1, y1], [y1, y2]] >= 0
    blk = LinearMatrixForm(
        measure_id="toy",
        label="psd",
        size=2,
        basis=((), ()),
        rows=np.array([0, 1, 1]),
        cols=np.array([1, 0, 1]),
        gidx=np.array([0, 0, 1]),
        coeff=np.array([1.0, 1.0, 1.0]),
        const=np.array([[1.0, 0.0], [0.0, 0.0]]),
    )
    return SDPInstance(None, [blk], [], [], np.array([0.0, 1.0]))


class TestToy:
    def test_file_shape(self, tmp_path):
        path = str(tmp_path / "toy.dat-s")
        data = export_sdpa(toy_instance(), path)
        assert data.block_struct == [2]
        got = read_sdpa(path)
        assert got.block_struct == [2]
        assert np.array_equal(got.c, data.c)
        # F0 carries -const, F1 the y1 pattern, F2 the y2 entry
        assert got.entry(0, 1, 1, 1) == -1.0
        assert got.entry(1, 1, 1, 2) == 1.0
        assert got.entry(2, 1, 2, 2) == 1.0

    def test_round_trip_exact(self, tmp_path):
        path = str(tmp_path / "toy.dat-s")
        data = export_sdpa(toy_instance(), path)
        got = read_sdpa(path)
        assert got.entries == data.entries


@pytest.fixture(scope="module")
def inst():
    sp, _ = normalize(benchmarks.load("chattering"))
    return assemble(sp, 2)[0]


class TestChatteringExport:

    def test_round_trip_bit_exact(self, tmp_path, inst):
        path = str(tmp_path / "chattering2.dat-s")
        data = export_sdpa(inst, path)
        got = read_sdpa(path)
        assert got.block_struct == data.block_struct
        assert np.array_equal(got.c, data.c)
        assert got.entries.keys() == data.entries.keys()
        for key in data.entries:
            assert got.entries[key] == data.entries[key]

    def test_equalities_become_paired_diagonals(self, inst):
        data = instance_to_sdpa(inst)
        assert data.block_struct[-1] < 0  # diagonal block
        # the reduction identities are exported too, so the standalone file
        # describes the same feasible set
        n_rows = -data.block_struct[-1] // 2
        n_dependent = inst.n - inst.reduction.n_red
        assert n_rows == len(inst.eq_rows) + n_dependent

    def test_variable_bijection_documented(self, inst, tmp_path):
        path = str(tmp_path / "doc.dat-s")
        export_sdpa(inst, path)
        text = open(path).read()
        assert "* var 1 = mode:down [0, 0]" in text
        assert "* block 1 = mode:down moment" in text

    def test_no_inequality_instance_has_pairs_only(self, inst):
        # chattering carries no integral inequalities: the only non-PSD
        # block is the equality-pair diagonal
        data = instance_to_sdpa(inst)
        assert sum(1 for s in data.block_struct if s < 0) == 1


class TestGrammar:
    def test_rejects_bad_entry_count(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("1\n1\n2\n1.0\n0 1 1\n")
        with pytest.raises(SdpaFormatError, match="5 fields"):
            read_sdpa(str(path))

    def test_rejects_lower_triangle(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("1\n1\n2\n1.0\n1 1 2 1 3.0\n")
        with pytest.raises(SdpaFormatError, match="i <= j"):
            read_sdpa(str(path))

    def test_rejects_block_overflow(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("1\n1\n2\n1.0\n1 2 1 1 3.0\n")
        with pytest.raises(SdpaFormatError, match="block number"):
            read_sdpa(str(path))

    def test_rejects_offdiagonal_in_diagonal_block(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("1\n1\n-2\n1.0\n1 1 1 2 3.0\n")
        with pytest.raises(SdpaFormatError, match="diagonal"):
            read_sdpa(str(path))

    def test_accepts_comments_and_braces(self, tmp_path):
        path = tmp_path / "ok.dat-s"
        path.write_text('* a comment\n"another\n2\n2\n{2, -2}\n0.5 1.5\n1 1 1 1 1.0\n')
        data = read_sdpa(str(path))
        assert data.block_struct == [2, -2]
        assert list(data.c) == [0.5, 1.5]
