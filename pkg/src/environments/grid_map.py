"""Grid-world map files: parsing, validation and cell geometry."""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

from src.utils.logger import get_logger

logger = get_logger(__name__)

WALL = "#"
EMPTY = "."
START = "S"
GOAL = "G"
ROCK = "R"
BOX = "B"

MARS = "mars"
BOX_WORLD = "box"

MAPS_DIR = Path(__file__).parent / "maps"
DEFAULT_MAPS = {
    MARS: MAPS_DIR / "mars_rover_8x8.txt",
    BOX_WORLD: MAPS_DIR / "box_6x6.txt",
}

# up, down, left, right
MOVES: Tuple[Tuple[int, int], ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))

Cell = Tuple[int, int]


class MapParseError(Exception):
    """A map file is malformed; ``row`` and ``col`` are 1-based when known."""

    def __init__(self, message: str, row: int = 0, col: int = 0):
        self.row = row
        self.col = col
        location = f" at row {row}, column {col}" if row else ""
        super().__init__(f"{message}{location}")


@dataclass(frozen=True)
class GridMap:
    rows: Tuple[str, ...]

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    def at(self, cell: Cell) -> str:
        return self.rows[cell[0]][cell[1]]

    def is_wall(self, cell: Cell) -> bool:
        r, c = cell
        if not (0 <= r < self.height and 0 <= c < self.width):
            return True
        return self.rows[r][c] == WALL

    def free_cells(self) -> List[Cell]:
        """Non-wall cells in row-major order."""
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if self.rows[r][c] != WALL
        ]

    def find(self, symbol: str) -> List[Cell]:
        return [cell for cell in self.free_cells() if self.at(cell) == symbol]

    def step(self, cell: Cell, move: int) -> Cell:
        """Neighbour in direction ``move``; moving into a wall stays in place."""
        dr, dc = MOVES[move]
        target = (cell[0] + dr, cell[1] + dc)
        return cell if self.is_wall(target) else target

    def adjacent_walls(self, cell: Cell) -> int:
        return sum(self.is_wall((cell[0] + dr, cell[1] + dc)) for dr, dc in MOVES)

    def is_corner(self, cell: Cell) -> bool:
        return self.adjacent_walls(cell) >= 2

    def corner_cells(self) -> List[Cell]:
        return [cell for cell in self.free_cells() if self.is_corner(cell)]

    def cell_index(self) -> Dict[Cell, int]:
        return {cell: i for i, cell in enumerate(self.free_cells())}


def parse_map(text: str, kind: str = MARS) -> GridMap:
    """
    Parse map text.

    Lines starting with ';' are comments; blank lines are ignored. The map
    must be rectangular, bordered by walls and contain exactly one start and
    one goal. Rocks are only allowed in Mars rover maps; Box maps contain
    exactly one box.

    Raises:
        MapParseError: with the offending position
    """
    if kind not in (MARS, BOX_WORLD):
        raise MapParseError(f"Unknown map kind: {kind}")
    allowed = {WALL, EMPTY, START, GOAL} | ({ROCK} if kind == MARS else {BOX})

    rows: List[str] = []
    line_numbers: List[int] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line or line.lstrip().startswith(";"):
            continue
        rows.append(line)
        line_numbers.append(line_no)
    if not rows:
        raise MapParseError("map is empty")

    width = len(rows[0])
    for row, line_no in zip(rows, line_numbers):
        if len(row) != width:
            raise MapParseError(f"expected {width} columns, found {len(row)}", line_no, len(row))
        for col, symbol in enumerate(row, start=1):
            if symbol not in allowed:
                raise MapParseError(f"unexpected symbol {symbol!r} in {kind} map", line_no, col)

    last = len(rows) - 1
    for i, (row, line_no) in enumerate(zip(rows, line_numbers)):
        for col, symbol in enumerate(row):
            on_border = i in (0, last) or col in (0, width - 1)
            if on_border and symbol != WALL:
                raise MapParseError("border cells must be walls", line_no, col + 1)

    grid = GridMap(tuple(rows))
    for symbol, name in ((START, "start"), (GOAL, "goal")):
        found = grid.find(symbol)
        if len(found) != 1:
            raise MapParseError(f"expected exactly one {name} cell, found {len(found)}")
    if kind == BOX_WORLD and len(grid.find(BOX)) != 1:
        raise MapParseError(f"expected exactly one box cell, found {len(grid.find(BOX))}")
    return grid


def load_map(path: Union[str, Path], kind: str = MARS) -> GridMap:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise MapParseError(f"cannot read map file {path}: {e}") from e
    grid = parse_map(text, kind)
    logger.debug(f"Loaded {kind} map {path} ({grid.height}x{grid.width})")
    return grid


def default_map(kind: str) -> GridMap:
    return load_map(DEFAULT_MAPS[kind], kind)
