"""Sliding-window (initial sequence -> ideal frame) pairs."""

from __future__ import annotations

import numpy as np


def make_frames(values, mask, v_scale: float = 120.0) -> np.ndarray:
    """Stack (T, R) initial values and mask into (T, 2, R) normalized frames."""
    values = np.asarray(getattr(values, "values", values), dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.shape != mask.shape or values.ndim != 2:
        raise ValueError(f"make_frames: values {values.shape} and mask {mask.shape} must be equal (T, R)")
    return np.stack([values / v_scale, mask], axis=1).astype(np.float32)


def frames_from_initial(initial, v_scale: float = 120.0) -> np.ndarray:
    return make_frames(initial.values, initial.mask, v_scale)


class WindowDataset:
    """Every length-L window of one or more (frames, ideal) day pairs.

    Sample ``(d, t)`` is frames ``t-L+1 .. t`` of day ``d`` with target
    ``ideal[t]``. Windows are materialized per batch, never all at once.
    """

    def __init__(self, frames, targets, L: int, t_min: int | None = None):
        if len(frames) != len(targets):
            raise ValueError("frames and targets must pair up")
        if L < 1:
            raise ValueError("L must be >= 1")
        self.frames = [np.asarray(f, dtype=np.float32) for f in frames]
        self.targets = [np.asarray(y, dtype=np.float32) for y in targets]
        self.L = L
        start = L - 1 if t_min is None else max(t_min, L - 1)
        index = []
        for d, (f, y) in enumerate(zip(self.frames, self.targets)):
            if f.ndim != 3 or f.shape[1] != 2 or y.shape != (f.shape[0], f.shape[2]):
                raise ValueError(f"day {d}: frames {f.shape} and target {y.shape} disagree")
            for t in range(start, f.shape[0]):
                index.append((d, t))
        self.index = np.array(index, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def from_pairs(cls, seqs, targets) -> "WindowDataset":
        """Explicit pairs: seqs (n, L, 2, R), targets (n, R)."""
        seqs = np.asarray(seqs, dtype=np.float32)
        targets = np.asarray(targets, dtype=np.float32)
        if seqs.ndim != 4 or targets.shape != (seqs.shape[0], seqs.shape[3]):
            raise ValueError(f"from_pairs: seqs {seqs.shape} and targets {targets.shape} disagree")
        L = seqs.shape[1]
        ys = []
        for y in targets:
            full = np.zeros((L, y.shape[0]), dtype=np.float32)
            full[-1] = y
            ys.append(full)
        return cls(list(seqs), ys, L, t_min=L - 1)

    def __len__(self) -> int:
        return len(self.index)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        L = self.L
        rows = self.index[np.asarray(idx, dtype=np.int64)]
        x = np.stack([self.frames[d][t - L + 1:t + 1] for d, t in rows])
        y = np.stack([self.targets[d][t] for d, t in rows])
        return x, y
