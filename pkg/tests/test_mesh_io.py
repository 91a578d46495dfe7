import numpy as np
import pytest

from qcmap.errors import InputError, ParseError
from qcmap.mesh_io import detect_format, read_mesh_arrays, write_mesh


def test_read_off_counts_on_header_line(tmp_path):
    path = tmp_path / "tri.off"
    path.write_text("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", encoding="utf-8")
    vertices, faces = read_mesh_arrays(path)
    assert vertices.shape == (3, 3)
    assert faces.tolist() == [[0, 1, 2]]


def test_read_off_ignores_comments(tmp_path):
    path = tmp_path / "tri.off"
    path.write_text("OFF\n# a comment\n3 1 0\n0 0 0\n1 0 0 # trailing\n0 1 0\n3 0 1 2\n", encoding="utf-8")
    _, faces = read_mesh_arrays(path)
    assert faces.tolist() == [[0, 1, 2]]


def test_read_obj_slashes_and_negative_indices(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\nf -4//1 -2//1 -1//1\n",
        encoding="utf-8",
    )
    vertices, faces = read_mesh_arrays(path)
    assert len(vertices) == 4
    assert faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_zero_index_is_rejected(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", encoding="utf-8")
    with pytest.raises(ParseError):
        read_mesh_arrays(path)


def test_non_triangle_face(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n", encoding="utf-8")
    with pytest.raises(ParseError, match="not a triangle"):
        read_mesh_arrays(path)


def test_truncated_off(tmp_path):
    path = tmp_path / "short.off"
    path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n", encoding="utf-8")
    with pytest.raises(ParseError, match="truncated"):
        read_mesh_arrays(path)


def test_unknown_format_and_missing_file(tmp_path):
    with pytest.raises(ParseError):
        detect_format(tmp_path / "mesh.ply")
    with pytest.raises(InputError) as info:
        read_mesh_arrays(tmp_path / "nope.off")
    assert info.value.exit_code == 2
    assert info.value.details["path"].endswith("nope.off")


@pytest.mark.parametrize("suffix", [".off", ".obj"])
def test_write_complex_vertices(tmp_path, suffix):
    z = np.array([0.0, 1.0, 0.25 + 1j])
    path = write_mesh(tmp_path / f"image{suffix}", z, np.array([[0, 1, 2]]))
    vertices, faces = read_mesh_arrays(path)
    np.testing.assert_array_equal(vertices[:, :2], [[0.0, 0.0], [1.0, 0.0], [0.25, 1.0]])
    assert np.all(vertices[:, 2] == 0.0)
    assert faces.tolist() == [[0, 1, 2]]
