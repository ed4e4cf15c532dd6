"""sigseek: query-by-example over 64-bit patch signatures.

Pipeline: synthesize or load a gridded volume, contrastively train a small
encoder, binarize embeddings into 64-bit signatures on a stride grid,
shard them spatially, index them with N-table multi-index hashing, then
search, evaluate, and serve interactively.
"""

from .errors import ContractViolation, DataFormatError, SigseekError
from .sigcore import (
    PartitionMask,
    SignatureRecord,
    VoxelCoord,
    extract_subsignature,
    hamming,
    make_partition_mask,
    sig_from_hex,
    sig_to_hex,
)

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "DataFormatError",
    "SigseekError",
    "PartitionMask",
    "SignatureRecord",
    "VoxelCoord",
    "extract_subsignature",
    "hamming",
    "make_partition_mask",
    "sig_from_hex",
    "sig_to_hex",
    "__version__",
]
