"""Remote data integrity auditing: client, cloud server and third-party auditor."""

from .batch import BatchResult, BatchTask, batch_verify, draw_deltas
from .dynamics import prepare_update, exec_update, verify_update, verify_block
from .group import TransparentSuite, get_suite
from .harness import Harness, detection_probability
from .kernels import BACKEND
from .merkle import AuthPath, MhtTree, verify_path
from .protocol import (
    AuditProof,
    AuditResult,
    Challenge,
    decode_file,
    encode_file,
    gen_challenge,
    gen_proof,
    keygen,
    sig_gen,
    verify_proof,
)

__all__ = [
    "AuditProof", "AuditResult", "AuthPath", "BACKEND", "BatchResult", "BatchTask", "Challenge",
    "Harness", "MhtTree", "TransparentSuite", "batch_verify", "decode_file", "detection_probability",
    "draw_deltas", "encode_file", "exec_update", "gen_challenge", "gen_proof", "get_suite", "keygen",
    "prepare_update", "sig_gen", "verify_block", "verify_path", "verify_proof", "verify_update",
]
__version__ = "0.1.0"
