"""Private read-update-write for federated submodel learning with sparsification."""

from .client import ClientSession, SparseUpdate, sparsify
from .coordinator import Permutation, setup
from .database import Database, WritePair
from .field import FieldElement, PrimeField
from .orchestrator import RoundPlan, Simulation
from .params import Sabotage, SystemParams, validate

__all__ = [
    "ClientSession", "Database", "FieldElement", "Permutation", "PrimeField", "RoundPlan",
    "Sabotage", "Simulation", "SparseUpdate", "SystemParams", "WritePair", "setup", "sparsify",
    "validate",
]
