# anchorcast/anchorcast_core/joint_layout.py
import time
from functools import lru_cache
from .exceptions import InputValidationError
from .utils import LAYOUT_FILE, LIMBS_FILE, NUM_JOINTS

LAYOUT_HEADER = "slot::joint_name::part::point_color"
LIMBS_HEADER = "joint_a::joint_b::color"


def _parse_color(text, where):
    try:
        rgb = tuple(int(c) for c in text.split(','))
    except ValueError:
        raise InputValidationError(f"{where}: bad color '{text}'")
    if len(rgb) != 3 or any(c < 0 or c > 255 for c in rgb):
        raise InputValidationError(f"{where}: bad color '{text}'")
    return rgb


def _table_rows(path, header):
    """Yields (line_number, fields) for the data rows of a `::` table."""
    with open(path, 'r', encoding='utf-8') as f:
        seen_header = False
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if not seen_header:
                seen_header = True
                if line != header:
                    print(f"[{time.ctime()}] LAYOUT Warning: header mismatch in {path}.")
                continue
            yield line_number, [field.strip() for field in line.split('::')]


class JointLayout:
    """The fixed 135-slot OpenPose layout: slot order, names, body part, point color."""

    def __init__(self, names, parts, point_colors):
        if len(names) != NUM_JOINTS:
            raise InputValidationError(f"layout has {len(names)} slots, expected {NUM_JOINTS}")
        if len(set(names)) != len(names):
            raise InputValidationError("layout repeats a joint name")
        self.names = list(names)
        self.parts = list(parts)
        self.point_colors = list(point_colors)
        self.index = {name: slot for slot, name in enumerate(self.names)}

    def slots_for_part(self, part):
        return [slot for slot, p in enumerate(self.parts) if p == part]

    def __repr__(self):
        counts = {p: self.parts.count(p) for p in dict.fromkeys(self.parts)}
        return f"JointLayout({counts})"


class LimbTopology:
    def __init__(self, edges, point_colors):
        for a, b, _ in edges:
            if not (0 <= a < NUM_JOINTS and 0 <= b < NUM_JOINTS):
                raise InputValidationError(f"limb ({a}, {b}) has an index outside [0, {NUM_JOINTS})")
            if a == b:
                raise InputValidationError(f"limb ({a}, {b}) is a self-edge")
        if len(point_colors) != NUM_JOINTS:
            raise InputValidationError(f"expected {NUM_JOINTS} point colors, got {len(point_colors)}")
        self.edges = [(int(a), int(b), tuple(color)) for a, b, color in edges]
        self.point_color = [tuple(c) for c in point_colors]

    def __repr__(self):
        return f"LimbTopology(edges={len(self.edges)})"


@lru_cache(maxsize=None)
def load_layout(path=LAYOUT_FILE):
    rows = {}
    for line_number, fields in _table_rows(path, LAYOUT_HEADER):
        where = f"{path}:{line_number}"
        if len(fields) != 4:
            raise InputValidationError(f"{where}: expected 4 fields, got {len(fields)}")
        slot = int(fields[0])
        if slot in rows:
            raise InputValidationError(f"{where}: slot {slot} listed twice")
        rows[slot] = (fields[1], fields[2], _parse_color(fields[3], where))
    if sorted(rows) != list(range(NUM_JOINTS)):
        raise InputValidationError(f"{path}: slots must be exactly 0..{NUM_JOINTS - 1}")
    names, parts, colors = zip(*(rows[s] for s in range(NUM_JOINTS)))
    return JointLayout(names, parts, colors)


@lru_cache(maxsize=None)
def load_limb_topology(path=LIMBS_FILE, layout_path=LAYOUT_FILE):
    layout = load_layout(layout_path)
    edges = []
    for line_number, fields in _table_rows(path, LIMBS_HEADER):
        where = f"{path}:{line_number}"
        if len(fields) != 3:
            raise InputValidationError(f"{where}: expected 3 fields, got {len(fields)}")
        try:
            a, b = layout.index[fields[0]], layout.index[fields[1]]
        except KeyError as e:
            raise InputValidationError(f"{where}: unknown joint {e}")
        edges.append((a, b, _parse_color(fields[2], where)))
    return LimbTopology(edges, layout.point_colors)
