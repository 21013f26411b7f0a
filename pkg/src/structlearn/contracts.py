"""The pluggable task interface every trainer works against.

A task plugs in by providing two objects: a feature generator mapping an
(instance, structure) pair to a joint feature vector, and an inference
solver producing the highest-scoring structure for an instance (plain or
loss-augmented).  Trainers never look inside instances or structures; they
only move them between these two objects.

Implementations must be safe for concurrent read-only use once their
lexicons are frozen: the parallel trainer calls them from several threads
against a shared weight vector.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Tuple

from .core import SparseFeatureVector, WeightVector

Instance = Any
Structure = Any


class FeatureGenerator(ABC):
    """Extracts the joint feature vector of an (instance, structure) pair."""

    @abstractmethod
    def features(self, x: Instance, y: Structure) -> SparseFeatureVector:
        """Return the feature vector for (x, y).

        Must be deterministic: the same pair always yields the same vector.
        Raises ContractError if y is not a feasible structure for x.
        """


class InferenceSolver(ABC):
    """Solves argmax over the structure space of an instance.

    Tie-breaking must be deterministic and documented by the task so that
    training runs are reproducible.
    """

    @abstractmethod
    def best(self, w: WeightVector, x: Instance) -> Structure:
        """Return a structure maximizing dot(w, features(x, y))."""

    @abstractmethod
    def loss_augmented_best(
        self, w: WeightVector, x: Instance, y_gold: Structure
    ) -> Tuple[Structure, float]:
        """Return (y, loss(y, y_gold)) with y maximizing score + loss.

        The augmented score of the returned structure is at least the plain
        score of y_gold, since y_gold itself has augmentation zero.  Both
        values are returned together because every trainer needs both.
        """

    @abstractmethod
    def loss(self, y: Structure, y_gold: Structure) -> float:
        """Distance from gold; zero iff equal, never negative.

        Raises ContractError when the two structures are not comparable
        (different lengths).  Symmetry is not required.
        """
