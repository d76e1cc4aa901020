"""Blocklace: a signed-hash DAG used as a Byzantine fault-tolerant universal CRDT."""

from .codec import BlockId, ContentHash, EncodingError, NodeId, PrivateKey, check_id, keygen
from .core import (
    Block,
    Blocklace,
    BlocklaceError,
    DuplicateBlock,
    InvalidBlockId,
    MissingPredecessors,
    UnknownBlock,
    new_block,
    pointed,
)
from .crdt import delta_join, delta_merge, delta_merge_condition, effect, orset_query, prepare
from .faults import (
    VALIDITY,
    Analyzer,
    ByzEvidence,
    POLog,
    Reason,
    UniqueIdRegistry,
    always_valid,
    byz,
    equivocators,
    polog,
    verify_evidence,
    well_formed,
)
from .repelling import PLAIN, REPELLING, Chunk, NodeState, brep

__all__ = [
    "Analyzer", "Block", "BlockId", "Blocklace", "BlocklaceError", "ByzEvidence", "Chunk",
    "ContentHash", "DuplicateBlock", "EncodingError", "InvalidBlockId", "MissingPredecessors",
    "NodeId", "NodeState", "PLAIN", "POLog", "PrivateKey", "REPELLING", "Reason",
    "UniqueIdRegistry", "UnknownBlock", "VALIDITY", "always_valid", "brep", "byz", "check_id",
    "delta_join", "delta_merge", "delta_merge_condition", "effect", "equivocators", "keygen",
    "new_block", "orset_query", "pointed", "polog", "prepare", "verify_evidence", "well_formed",
]
