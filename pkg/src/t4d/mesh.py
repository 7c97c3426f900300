"""Triangle meshes, mesh sequences, vertex masks and their file formats.

Coordinates are millimetres throughout. Only OBJ and ASCII PLY are read and
written; anything else is rejected.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

ZERO_AREA_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh data or a file that cannot be parsed."""


class TopologyError(ValueError):
    """Two meshes (or a mesh and a mask) do not share a topology."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    if len(f) == 0:
        return np.zeros(0)
    cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cr, axis=1)


@dataclass(frozen=True, eq=False)
class Mesh:
    """One frame: ``vertices`` (V, 3) float64 and ``faces`` (F, 3) int64.

    Construction checks index range and repeated indices and raises
    :class:`MeshError`. Zero-area faces are kept but reported through
    :attr:`zero_area_faces`.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if len(f):
            lo, hi = int(f.min()), int(f.max())
            if lo < 0 or hi >= len(v):
                bad = int(np.flatnonzero((f < 0).any(1) | (f >= len(v)).any(1))[0])
                raise MeshError(
                    f"face {bad} has index out of range [0, {len(v)}): {f[bad].tolist()}"
                )
            rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if rep.any():
                bad = int(np.flatnonzero(rep)[0])
                raise MeshError(f"degenerate face {bad}: {f[bad].tolist()}")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        return face_areas(self.vertices, self.faces)

    @property
    def zero_area_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_areas() <= ZERO_AREA_TOL)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (E, 2) pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def same_topology(self, other: Mesh) -> bool:
        return self.n_vertices == other.n_vertices and np.array_equal(self.faces, other.faces)

    def with_vertices(self, vertices: np.ndarray) -> Mesh:
        return Mesh(vertices, self.faces)


def validate_mesh(mesh: Mesh) -> list[str]:
    """Return a list of invariant violations (empty when the mesh is sound).

    Checks zero-area faces and edges shared by more than two faces, on top of
    what :class:`Mesh` already enforces at construction.
    """
    issues = []
    za = mesh.zero_area_faces
    if len(za):
        issues.append(f"{len(za)} zero-area face(s), first {int(za[0])}")
    if mesh.n_faces:
        f = mesh.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if (counts > 2).any():
            issues.append(f"{int((counts > 2).sum())} non-manifold edge(s)")
        # same triangle listed twice
        fs = np.sort(f, axis=1)
        if len(np.unique(fs, axis=0)) != len(fs):
            issues.append("duplicate faces")
    return issues


class TopologyMode(str, Enum):
    HOMOGENEOUS = "homogeneous"
    HETEROGENEOUS = "heterogeneous"


@dataclass(frozen=True, eq=False)
class MeshSequence:
    frames: tuple[Mesh, ...]
    fps: float = 30.0
    neutral: Mesh | None = None
    topology_mode: TopologyMode = field(default=None)  # inferred when None

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise MeshError("a sequence needs at least one frame")
        if not (self.fps > 0 and np.isfinite(self.fps)):
            raise MeshError(f"fps must be positive, got {self.fps}")
        homogeneous = all(frames[0].same_topology(m) for m in frames[1:])
        mode = self.topology_mode
        if mode is None:
            mode = TopologyMode.HOMOGENEOUS if homogeneous else TopologyMode.HETEROGENEOUS
        mode = TopologyMode(mode)
        if mode is TopologyMode.HOMOGENEOUS:
            if not homogeneous:
                raise TopologyError("frames do not share one topology")
            if self.neutral is not None and not self.neutral.same_topology(frames[0]):
                raise TopologyError("neutral mesh does not share the frames' topology")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "topology_mode", mode)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i) -> Mesh:
        return self.frames[i]

    @property
    def is_homogeneous(self) -> bool:
        return self.topology_mode is TopologyMode.HOMOGENEOUS

    @property
    def faces(self) -> np.ndarray:
        if not self.is_homogeneous:
            raise TopologyError("heterogeneous sequence has no single face array")
        return self.frames[0].faces

    def positions(self) -> np.ndarray:
        """Stacked vertex positions (T, V, 3); homogeneous sequences only."""
        if not self.is_homogeneous:
            raise TopologyError("heterogeneous sequence cannot be stacked")
        return np.stack([m.vertices for m in self.frames])

    @classmethod
    def from_positions(cls, positions, faces, fps=30.0, neutral=None) -> MeshSequence:
        frames = tuple(Mesh(p, faces) for p in np.asarray(positions))
        return cls(frames, fps=fps, neutral=neutral)


def require_registered_pair(gt: MeshSequence, pred: MeshSequence) -> None:
    if not gt.is_homogeneous or not pred.is_homogeneous:
        raise TopologyError(
            "registered evaluation needs homogeneous sequences; "
            "use the unregistered mode for heterogeneous topology"
        )
    if not gt.frames[0].same_topology(pred.frames[0]):
        raise TopologyError(
            "ground truth and prediction do not share a topology; "
            "use the unregistered mode"
        )
    if len(gt) != len(pred):
        raise ValueError(f"sequence length mismatch: {len(gt)} vs {len(pred)}")


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True, eq=False)
class VertexMask:
    indices: np.ndarray
    label: str
    topology_vertex_count: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(idx):
            if np.any(np.diff(idx) <= 0):
                raise MeshError(f"mask '{self.label}' indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.topology_vertex_count:
                raise MeshError(
                    f"mask '{self.label}' index out of range for V={self.topology_vertex_count}"
                )
        object.__setattr__(self, "indices", _frozen(idx))

    def __len__(self) -> int:
        return len(self.indices)

    def weights(self) -> np.ndarray:
        w = np.zeros(self.topology_vertex_count)
        w[self.indices] = 1.0
        return w

    def check(self, n_vertices: int) -> None:
        if n_vertices != self.topology_vertex_count:
            raise TopologyError(
                f"mask '{self.label}' is bound to V={self.topology_vertex_count}, "
                f"mesh has V={n_vertices}"
            )


@dataclass(frozen=True, eq=False)
class LipLandmarkSet:
    upper: tuple[int, int, int]
    lower: tuple[int, int, int]
    topology_vertex_count: int

    def __post_init__(self):
        up = tuple(int(i) for i in self.upper)
        lo = tuple(int(i) for i in self.lower)
        if len(up) != 3 or len(lo) != 3:
            raise MeshError("lip landmarks need exactly 3 upper and 3 lower indices")
        allv = up + lo
        if len(set(allv)) != 6:
            raise MeshError(f"lip landmarks must be distinct, got {allv}")
        if min(allv) < 0 or max(allv) >= self.topology_vertex_count:
            raise MeshError(f"lip landmark out of range for V={self.topology_vertex_count}")
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "lower", lo)

    @property
    def indices(self) -> tuple[int, ...]:
        return self.upper + self.lower

    def check(self, n_vertices: int) -> None:
        if n_vertices != self.topology_vertex_count:
            raise TopologyError(
                f"lip landmarks are bound to V={self.topology_vertex_count}, "
                f"mesh has V={n_vertices}"
            )


def load_mask(path, n_vertices: int) -> VertexMask:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        label = str(data["label"])
        raw = [int(i) for i in data["indices"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"{path}: expected {{'label': str, 'indices': [int]}}") from exc
    if len(set(raw)) != len(raw):
        raise MeshError(f"{path}: duplicate mask indices")
    if any(i < 0 or i >= n_vertices for i in raw):
        raise MeshError(f"{path}: mask index out of range for V={n_vertices}")
    return VertexMask(np.sort(np.asarray(raw, dtype=np.int64)), label, n_vertices)


def save_mask(path, mask: VertexMask) -> None:
    Path(path).write_text(
        json.dumps({"label": mask.label, "indices": mask.indices.tolist()}), encoding="utf-8"
    )


def load_lips(path, n_vertices: int) -> LipLandmarkSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return LipLandmarkSet(tuple(data["upper"]), tuple(data["lower"]), n_vertices)
    except (KeyError, TypeError) as exc:
        raise MeshError(f"{path}: expected {{'upper': [3 ints], 'lower': [3 ints]}}") from exc


def save_lips(path, lips: LipLandmarkSet) -> None:
    Path(path).write_text(
        json.dumps({"upper": list(lips.upper), "lower": list(lips.lower)}), encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# file I/O


def _fan(poly, triangulate, where):
    if len(poly) < 3:
        raise MeshError(f"{where}: face with fewer than 3 vertices")
    if len(poly) == 3:
        return [poly]
    if not triangulate:
        raise MeshError(f"{where}: {len(poly)}-gon face (pass triangulate=True to fan-split)")
    return [[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)]


def _read_obj(text: str, path, triangulate: bool):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        where = f"{path}:{lineno}"
        if parts[0] == "v":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshError(f"{where}: malformed vertex line") from exc
            if len(verts[-1]) != 3:
                raise MeshError(f"{where}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            poly = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError as exc:
                    raise MeshError(f"{where}: malformed face index '{tok}'") from exc
                if i == 0:
                    raise MeshError(f"{where}: OBJ indices are 1-based")
                poly.append(i - 1 if i > 0 else len(verts) + i)
            faces.extend(_fan(poly, triangulate, where))
    return verts, faces


def _read_ply(text: str, path, triangulate: bool):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{path}: not a PLY file")
    elements = []  # (name, count, [props])
    i = 1
    fmt = None
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshError(f"{path}: property before element")
            elements[-1][2].append(parts[1:])
        elif parts[0] == "end_header":
            break
    else:
        raise MeshError(f"{path}: missing end_header")
    if fmt != "ascii":
        raise MeshError(f"{path}: only ASCII PLY is supported (got format {fmt})")

    body = [ln for ln in lines[i:] if ln.strip()]
    pos = 0
    verts, faces = [], []
    for name, count, props in elements:
        rows = body[pos:pos + count]
        if len(rows) < count:
            raise MeshError(f"{path}: truncated '{name}' element")
        pos += count
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                cols = [names.index(c) for c in "xyz"]
            except ValueError as exc:
                raise MeshError(f"{path}: vertex element lacks x/y/z") from exc
            for r in rows:
                vals = r.split()
                try:
                    verts.append([float(vals[c]) for c in cols])
                except (ValueError, IndexError) as exc:
                    raise MeshError(f"{path}: malformed vertex row '{r}'") from exc
        elif name == "face":
            for r in rows:
                vals = r.split()
                try:
                    n = int(vals[0])
                    poly = [int(x) for x in vals[1:1 + n]]
                except (ValueError, IndexError) as exc:
                    raise MeshError(f"{path}: malformed face row '{r}'") from exc
                if len(poly) != n:
                    raise MeshError(f"{path}: malformed face row '{r}'")
                faces.extend(_fan(poly, triangulate, path))
    return verts, faces


def load_mesh(path, format: str = "auto", triangulate: bool = False) -> Mesh:
    """Read an OBJ or ASCII PLY file. Vertex order is kept as in the file."""
    path = Path(path)
    fmt = format.lower()
    if fmt == "auto":
        fmt = path.suffix.lower().lstrip(".")
    if fmt in ("ply-ascii", "ply_ascii"):
        fmt = "ply"
    raw = path.read_bytes()
    if fmt == "ply":
        head = raw[:512]
        if b"format binary" in head:
            raise MeshError(f"{path}: binary PLY is not supported, convert to ASCII")
        reader = _read_ply
    elif fmt == "obj":
        reader = _read_obj
    else:
        raise MeshError(f"{path}: unsupported mesh format '{format}'")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MeshError(f"{path}: not a text file") from exc
    verts, faces = reader(text, path, triangulate)
    try:
        mesh = Mesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                    np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc
    za = mesh.zero_area_faces
    if len(za):
        logger.warning("%s: %d zero-area face(s)", path, len(za))
    return mesh


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def save_mesh(path, mesh: Mesh, format: str = "auto") -> None:
    """Write OBJ or ASCII PLY with coordinates at 9 significant digits."""
    path = Path(path)
    fmt = format.lower()
    if fmt == "auto":
        fmt = path.suffix.lower().lstrip(".")
    vlines = [" ".join(_fmt(c) for c in v) for v in mesh.vertices.tolist()]
    if fmt == "obj":
        out = [f"v {s}" for s in vlines]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    elif fmt in ("ply", "ply-ascii"):
        out = [
            "ply",
            "format ascii 1.0",
            f"element vertex {mesh.n_vertices}",
            "property float x",
            "property float y",
            "property float z",
            f"element face {mesh.n_faces}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        out += vlines
        out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    else:
        raise MeshError(f"unsupported mesh format '{format}'")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


def natural_key(name: str):
    """Sort key that orders embedded integers numerically: f2 < f10."""
    return [(0, int(t), "") if t.isdigit() else (1, 0, t)
            for t in re.split(r"(\d+)", name) if t] + [(2, 0, name)]


MESH_SUFFIXES = (".obj", ".ply")


def list_frames(directory, pattern: str = "*") -> list[Path]:
    directory = Path(directory)
    paths = [p for p in directory.glob(pattern)
             if p.is_file() and p.suffix.lower() in MESH_SUFFIXES]
    return sorted(paths, key=lambda p: natural_key(p.name))


def load_sequence(directory, pattern: str = "*", fps: float = 30.0,
                  triangulate: bool = False, neutral=None) -> MeshSequence:
    """Load every mesh file in ``directory`` matching ``pattern`` as one sequence.

    Frame order is the natural (lexicographic-numeric) order of file names.
    The topology mode is inferred from the frames' connectivity.
    """
    paths = list_frames(directory, pattern)
    if not paths:
        raise MeshError(f"{directory}: no mesh files match '{pattern}'")
    frames = []
    for p in paths:
        try:
            frames.append(load_mesh(p, triangulate=triangulate))
        except OSError as exc:
            raise MeshError(f"{p}: unreadable frame ({exc})") from exc
    neutral_mesh = load_mesh(neutral) if neutral is not None else None
    return MeshSequence(tuple(frames), fps=fps, neutral=neutral_mesh)


def save_sequence(directory, seq: MeshSequence, prefix: str = "frame", format: str = "obj"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(seq))))
    for i, m in enumerate(seq.frames):
        save_mesh(directory / f"{prefix}_{i:0{width}d}.{format}", m, format)
