"""Evaluation backends: in-process, subprocess and remote workers."""
from .dispatch import Dispatcher, WorkerInfo, dispatch
from .executors import (InlineExecutor, PoolExecutor, RemoteExecutor, SubprocessExecutor,
                        as_result, evaluator_timeout)
from .net import MasterServer, parse_address, run_worker
from .protocol import (JobRequest, JobResult, ProtocolError, decode_message, encode_message)
from .subproc import EvaluatorUnavailable, run_subprocess_evaluator

__all__ = [
    "Dispatcher", "WorkerInfo", "dispatch", "InlineExecutor", "PoolExecutor", "RemoteExecutor",
    "SubprocessExecutor", "as_result", "evaluator_timeout", "MasterServer", "parse_address",
    "run_worker", "JobRequest", "JobResult", "ProtocolError", "decode_message", "encode_message",
    "EvaluatorUnavailable", "run_subprocess_evaluator",
]
