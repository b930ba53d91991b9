"""Synthetic, geometrically valid molecules for demos and self-tests.

None of this is real chemistry: coordinates are random points with a
minimum-separation constraint, and the bundled targets are simple geometric
or compositional functions that a working model must be able to learn.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import Dataset, Molecule, inverse_distance

__all__ = [
    "random_molecule",
    "random_molecules",
    "pairwise_inverse_distance_sum",
    "carbon_count",
    "geometric_dataset",
    "composition_dataset",
]


def random_molecule(rng: np.random.Generator, n_atoms: int,
                    elements: Sequence[str] = ("H", "C", "N", "O"),
                    box: float = 4.0, min_separation: float = 0.7,
                    mol_id: str = "synth0") -> Molecule:
    """Random atoms in a cube of side ``box`` with all pair distances >= ``min_separation``."""
    symbols = tuple(rng.choice(list(elements), size=n_atoms))
    coords = np.empty((n_atoms, 3))
    placed = 0
    while placed < n_atoms:
        candidate = rng.uniform(0.0, box, size=3)
        if placed == 0 or np.linalg.norm(coords[:placed] - candidate, axis=1).min() >= min_separation:
            coords[placed] = candidate
            placed += 1
    return Molecule(mol_id=mol_id, symbols=symbols, coords=coords)


def random_molecules(seed: int, count: int, size_range: tuple[int, int] = (3, 8),
                     sizes: Sequence[int] | None = None,
                     elements: Sequence[str] = ("H", "C", "N", "O"),
                     box: float = 4.0) -> list[Molecule]:
    """Deterministic batch of random molecules.

    Atom counts are sampled from the inclusive ``size_range`` unless
    ``sizes`` gives them explicitly (cycled if shorter than ``count``).
    """
    rng = np.random.default_rng(seed)
    if sizes is not None:
        picked = [int(sizes[i % len(sizes)]) for i in range(count)]
    else:
        picked = [int(rng.integers(size_range[0], size_range[1] + 1)) for _ in range(count)]
    return [random_molecule(rng, picked[i], elements, box, mol_id=f"synth{i}")
            for i in range(count)]


def pairwise_inverse_distance_sum(mol: Molecule, epsilon: float = 1e-6) -> float:
    """Sum of reciprocal distances over unordered atom pairs."""
    total = 0.0
    for i in range(mol.natoms):
        for j in range(i + 1, mol.natoms):
            total += inverse_distance(mol.coords[i], mol.coords[j], epsilon)
    return total


def carbon_count(mol: Molecule) -> float:
    return float(sum(1 for s in mol.symbols if s == "C"))


def _with_target(mol: Molecule, name: str, value: float) -> Molecule:
    targets = dict(mol.targets)
    targets[name] = value
    return Molecule(mol_id=mol.mol_id, symbols=mol.symbols, coords=mol.coords, targets=targets)


def geometric_dataset(count: int, seed: int, n_atoms=(3, 8),
                      elements: Sequence[str] = ("H", "C", "N", "O"),
                      property_name: str = "energy") -> Dataset:
    """Molecules whose target is the sum of pairwise reciprocal distances.

    The target is a pure function of geometry, which makes it a sharp probe
    for the distance feature: with distances removed the model cannot do
    better than predicting the mean.
    """
    mols = [(_with_target(m, property_name, pairwise_inverse_distance_sum(m)))
            for m in random_molecules(seed, count, size_range=n_atoms, elements=elements)]
    return Dataset(mols, [property_name], units={property_name: "arb"})


def composition_dataset(count: int, seed: int, n_atoms: int = 5,
                        elements: Sequence[str] = ("H", "C", "N", "O"),
                        property_name: str = "ncarbon") -> Dataset:
    """Fixed-size molecules whose target is the number of carbon atoms.

    All molecules share the same atom count, so the count feature carries no
    information about this target.
    """
    mols = [(_with_target(m, property_name, carbon_count(m)))
            for m in random_molecules(seed, count, sizes=(n_atoms,), elements=elements)]
    return Dataset(mols, [property_name], units={property_name: "count"})
