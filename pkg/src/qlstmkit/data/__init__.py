from .dataset import DatasetTable, load_dataset, make_separable_dataset, write_fingerprint_csv
from .fingerprint import Fingerprint, morgan_fingerprint
from .smiles import Atom, Bond, BondOrder, MoleculeGraph, parse_smiles

__all__ = [
    "Atom", "Bond", "BondOrder", "DatasetTable", "Fingerprint", "MoleculeGraph",
    "load_dataset", "make_separable_dataset", "morgan_fingerprint", "parse_smiles",
    "write_fingerprint_csv",
]
