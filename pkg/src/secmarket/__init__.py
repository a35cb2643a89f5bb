"""Deterministic simulator of a smart-contract data market for secure federated model updates."""
from .contract import ContractSession, SessionConfig, State, deploy
from .fixedpoint import RingVector, decode, decode_vector, encode, encode_vector, ring_add, ring_neg
from .kernels import BACKEND
from .krum import m_krum, score_one

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContractSession",
    "RingVector",
    "SessionConfig",
    "State",
    "decode",
    "decode_vector",
    "deploy",
    "encode",
    "encode_vector",
    "m_krum",
    "ring_add",
    "ring_neg",
    "score_one",
]
