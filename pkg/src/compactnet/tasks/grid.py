"""Shortest-path grid task.

Each sample is a square grid with two query cells and random obstacles.  The
target marks every cell lying on at least one shortest 4-connected path
between the queries.  Positives are rare, so F1 is the reported metric.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))
UNREACHABLE = -1


@dataclass
class GridSample:
    size: int
    D: int
    q1: tuple[int, int]
    q2: tuple[int, int]
    obstacles: np.ndarray  # bool (size, size)
    labels: np.ndarray  # bool (size, size)

    @property
    def query(self) -> np.ndarray:
        q = np.zeros((self.size, self.size), dtype=bool)
        q[self.q1] = q[self.q2] = True
        return q

    def inputs(self) -> np.ndarray:
        """Two-channel float input: queries, obstacles."""
        return np.stack([self.query, self.obstacles]).astype(np.float64)

    def to_text(self) -> str:
        """Three flag characters per cell (query, obstacle, label), cells separated by spaces."""
        q = self.query
        lines = [f"grid size={self.size} D={self.D}"]
        for r in range(self.size):
            cells = (("Q" if q[r, c] else ".") + ("#" if self.obstacles[r, c] else ".")
                     + ("*" if self.labels[r, c] else ".") for c in range(self.size))
            lines.append(" ".join(cells))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GridSample":
        lines = text.strip("\n").split("\n")
        head = dict(kv.split("=") for kv in lines[0].split()[1:])
        size, D = int(head["size"]), int(head["D"])
        rows = [ln.split(" ") for ln in lines[1:]]
        if len(rows) != size or any(len(r) != size for r in rows):
            raise ValueError("grid text does not match its declared size")
        queries = [(r, c) for r in range(size) for c in range(size) if rows[r][c][0] == "Q"]
        if len(queries) != 2:
            raise ValueError(f"expected 2 query cells, found {len(queries)}")
        obst = np.array([[cell[1] == "#" for cell in row] for row in rows])
        lab = np.array([[cell[2] == "*" for cell in row] for row in rows])
        return cls(size, D, queries[0], queries[1], obst, lab)


def bfs_distances(obstacles: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    n, m = obstacles.shape
    dist = np.full((n, m), UNREACHABLE, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES:
            rr, cc = r + dr, c + dc
            if 0 <= rr < n and 0 <= cc < m and not obstacles[rr, cc] and dist[rr, cc] == UNREACHABLE:
                dist[rr, cc] = dist[r, c] + 1
                queue.append((rr, cc))
    return dist


def shortest_path_labels(obstacles: np.ndarray, q1, q2) -> np.ndarray:
    d1 = bfs_distances(obstacles, q1)
    d2 = bfs_distances(obstacles, q2)
    total = d1[q2]
    if total == UNREACHABLE:
        return np.zeros_like(obstacles, dtype=bool)
    return (d1 >= 0) & (d2 >= 0) & (d1 + d2 == total)


def generate_grid(rng: np.random.Generator, D: int, size: int = 32,
                  obstacle_rate: float = 0.1, max_tries: int = 1000) -> GridSample:
    """Sample queries at most ``D`` apart (Manhattan) and obstacles, until q2 is reachable within ``D`` steps."""
    if D < 2:
        raise ValueError("D must be at least 2")
    if size < D + 2:
        raise ValueError(f"size {size} too small for distance {D}")
    for _ in range(max_tries):
        q1 = (int(rng.integers(size)), int(rng.integers(size)))
        dr = int(rng.integers(-D, D + 1))
        rest = D - abs(dr)
        dc = int(rng.integers(-rest, rest + 1))
        q2 = (q1[0] + dr, q1[1] + dc)
        if q2 == q1 or not (0 <= q2[0] < size and 0 <= q2[1] < size):
            continue
        obstacles = rng.random((size, size)) < obstacle_rate
        obstacles[q1] = obstacles[q2] = False
        d = bfs_distances(obstacles, q1)[q2]
        if d == UNREACHABLE or d > D:
            continue
        q1, q2 = sorted((q1, q2))  # row-major order, matching the text format
        return GridSample(size, D, q1, q2, obstacles, shortest_path_labels(obstacles, q1, q2))
    raise RuntimeError(f"no valid grid after {max_tries} tries (size={size}, D={D})")


def curriculum(D_max: int, start: int = 2, increment: int = 2) -> list[int]:
    return list(range(start, D_max + 1, increment))


def make_dataset(n: int, D: int, size: int = 32, seed: int = 0, obstacle_rate: float = 0.1):
    """Stacked inputs (n, 2, size, size) and boolean labels (n, size, size)."""
    if n <= 0:
        raise ValueError("dataset must contain at least one sample")
    rng = np.random.default_rng(seed)
    samples = [generate_grid(rng, D, size, obstacle_rate) for _ in range(n)]
    return np.stack([s.inputs() for s in samples]), np.stack([s.labels for s in samples]), samples


def enumerate_shortest_paths(obstacles: np.ndarray, q1, q2) -> list[list[tuple[int, int]]]:
    """All minimum-length simple paths by iterative deepening.

    Independent of BFS: it grows path length until some walk arrives, pruning
    only with the Manhattan lower bound.  Exponential; meant for small grids.
    """
    n, m = obstacles.shape

    def walks(limit):
        found = []
        path = [q1]
        seen = {q1}

        def rec(cell, left):
            if cell == q2:
                if left == 0:
                    found.append(list(path))
                return
            if abs(cell[0] - q2[0]) + abs(cell[1] - q2[1]) > left:
                return
            for dr, dc in MOVES:
                nxt = (cell[0] + dr, cell[1] + dc)
                if 0 <= nxt[0] < n and 0 <= nxt[1] < m and not obstacles[nxt] and nxt not in seen:
                    seen.add(nxt)
                    path.append(nxt)
                    rec(nxt, left - 1)
                    path.pop()
                    seen.discard(nxt)

        rec(q1, limit)
        return found

    for L in range(n * m):
        paths = walks(L)
        if paths:
            return paths
    return []


def f1_score(y, y_hat) -> float:
    y = np.asarray(y).astype(bool).ravel()
    y_hat = np.asarray(y_hat).astype(bool).ravel()
    if y.shape != y_hat.shape:
        raise ValueError("label vectors differ in length")
    den = int(y.sum()) + int(y_hat.sum())
    if den == 0:
        return 0.0
    return 2.0 * int(np.sum(y & y_hat)) / den
