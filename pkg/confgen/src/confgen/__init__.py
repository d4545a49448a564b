"""SMILES parsing, featurization, and 3D conformer generation for the
molecular-graph JSON-lines formats consumed by the training package."""

__version__ = "0.1.0"

from .embed import GenerationConfig, generate_conformers  # noqa: F401
from .smiles import Molecule, SmilesError, parse_smiles  # noqa: F401
