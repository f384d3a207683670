"""Synthetic tight-binding scenarios and their JSON files.

A scenario is a random Hermitian Hamiltonian per spin channel and an overlap
near the identity, both with nearest-neighbour blocks at the six offsets
``±x, ±y, ±z`` of a simple cubic lattice, plus a uniform k-point grid.

File schema (JSON object, all keys optional except ``n``)::

    n                 basis count
    n_k               number of k-points (default 8)
    seed              RNG seed (default 0)
    spin_mode         "collinear-two-channel" | "unpolarized-degeneracy-2"
    neighbor_strength scale of the neighbour blocks (default 0.1)
    N_e               electron count (default round(n/2))
    kT                smearing width (default 0.025)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pipeline import DEFAULT_KT, KPointSet, OccupationParams, RealSpaceOperator, SpinMode

NEIGHBOR_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
MIN_OVERLAP_EIG = 0.1
ONSITE_PERTURBATION = 0.05


@dataclass(frozen=True)
class ScenarioParams:
    n: int
    n_k: int = 8
    seed: int = 0
    spin_mode: str = SpinMode.COLLINEAR.value
    neighbor_strength: float = 0.1
    n_electrons: float | None = None
    kT: float = DEFAULT_KT

    def __post_init__(self):
        if self.n < 1 or self.n_k < 1:
            raise ConfigError("scenario needs n >= 1 and n_k >= 1")
        try:
            SpinMode(self.spin_mode)
        except ValueError:
            raise ConfigError(f"unknown spin mode {self.spin_mode!r}") from None
        if self.neighbor_strength < 0 or not self.kT > 0:
            raise ConfigError("neighbor_strength must be >= 0 and kT > 0")

    @property
    def electrons(self) -> float:
        return float(round(self.n / 2)) if self.n_electrons is None else float(self.n_electrons)

    def to_dict(self) -> dict:
        return {"n": self.n, "n_k": self.n_k, "seed": self.seed, "spin_mode": self.spin_mode,
                "neighbor_strength": self.neighbor_strength, "N_e": self.electrons,
                "kT": self.kT}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioParams":
        known = {"n", "n_k", "seed", "spin_mode", "neighbor_strength", "N_e", "kT"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        if "n" not in d:
            raise ConfigError("scenario file must give n")
        return cls(int(d["n"]), int(d.get("n_k", 8)), int(d.get("seed", 0)),
                   str(d.get("spin_mode", SpinMode.COLLINEAR.value)),
                   float(d.get("neighbor_strength", 0.1)),
                   None if d.get("N_e") is None else float(d["N_e"]),
                   float(d.get("kT", DEFAULT_KT)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Scenario:
    params: ScenarioParams
    hams: list
    overlap: RealSpaceOperator
    kset: KPointSet
    occ: OccupationParams
    neighbor_strength: float  # after any halving


def kpoint_grid(n_k: int) -> np.ndarray:
    """``n_k`` fractional k-points along the body diagonal, avoiding Gamma
    symmetry so that Bloch matrices are genuinely complex."""
    t = (np.arange(n_k) + 0.5) / n_k - 0.5
    return np.stack([t, 0.5 * t + 0.125, 0.25 * t - 0.0625], axis=1)


def _random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def _build(rng, n, strength, onsite_shift):
    """Operator with the given on-site block and random neighbour blocks."""
    blocks = {(0, 0, 0): onsite_shift}
    for r in NEIGHBOR_OFFSETS[::2]:
        m = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2 * n)
        blocks[r] = strength * m
        blocks[tuple(-x for x in r)] = strength * m.conj().T
    return blocks


def _min_overlap_eig(overlap: RealSpaceOperator, points) -> float:
    from .pipeline import bloch_transform

    return min(float(np.linalg.eigvalsh(bloch_transform(overlap, k))[0]) for k in points)


def generate_scenario(n: int, n_k: int = 8, seed: int = 0,
                      spin_mode: str = SpinMode.COLLINEAR.value,
                      neighbor_strength: float = 0.1, n_electrons: float | None = None,
                      kT: float = DEFAULT_KT) -> Scenario:
    params = ScenarioParams(n, n_k, seed, spin_mode, neighbor_strength, n_electrons, kT)
    return build_scenario(params)


def build_scenario(params: ScenarioParams) -> Scenario:
    n, mode = params.n, SpinMode(params.spin_mode)
    points = kpoint_grid(params.n_k)
    test_points = np.concatenate([points, kpoint_grid(4), np.zeros((1, 3)),
                                  np.full((1, 3), 0.5)])
    strength = params.neighbor_strength
    while True:
        rng = np.random.default_rng(params.seed)
        pert = _random_hermitian(rng, n)
        pert *= ONSITE_PERTURBATION / max(1.0, float(np.linalg.norm(pert, 2)))
        s_blocks = _build(rng, n, strength / np.sqrt(6.0), np.eye(n) + pert)
        overlap = RealSpaceOperator(n, s_blocks)
        if strength == 0 or _min_overlap_eig(overlap, test_points) > MIN_OVERLAP_EIG:
            break
        strength *= 0.5
    hams = []
    for _ in range(mode.channels):
        onsite = _random_hermitian(rng, n) / np.sqrt(n)
        hams.append(RealSpaceOperator(n, _build(rng, n, strength, onsite)))
    kset = KPointSet.uniform(points)
    occ = OccupationParams(params.kT, params.electrons, mode)
    return Scenario(params, hams, overlap, kset, occ, strength)


def load_scenario_params(path) -> ScenarioParams:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario file must hold a JSON object")
    return ScenarioParams.from_dict(data)


def save_scenario_params(params: ScenarioParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")


__all__ = ["ScenarioParams", "Scenario", "generate_scenario", "build_scenario",
           "kpoint_grid", "load_scenario_params", "save_scenario_params"]
