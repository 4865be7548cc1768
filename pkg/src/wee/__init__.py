"""wee: a minimal workflow execution engine.

Parse `.wee` workflow descriptions, execute them with concurrent branches
over a supervised context, delegate call activities to pluggable handler
wrappers, and check control-flow pattern coverage with the bundled harness.
"""

from .context import ChangeRecord, ContextStore
from .dsl import Diagnostic, ParseError, WorkflowAst, parse, positions, pretty, validate
from .engine import (
    EngineError,
    InstanceState,
    Lifecycle,
    RunOptions,
    WorkflowInstance,
    run_workflow,
)
from .events import EventLog, EventRecord, FixedClock, read_jsonl
from .expressions import EvalError, Value, apply_assignments, eval_expr
from .handlers import (
    Failure,
    HandlerCall,
    HandlerOutcome,
    HandlerWrapper,
    HttpHandler,
    Jump,
    JumpHandler,
    MockHandler,
    Passthrough,
    RecursiveHandler,
    Result,
    TriggerEvent,
    TriggerHandler,
)

__version__ = "0.1.0"

__all__ = [
    "ChangeRecord",
    "ContextStore",
    "Diagnostic",
    "EngineError",
    "EvalError",
    "EventLog",
    "EventRecord",
    "Failure",
    "FixedClock",
    "HandlerCall",
    "HandlerOutcome",
    "HandlerWrapper",
    "HttpHandler",
    "InstanceState",
    "Jump",
    "JumpHandler",
    "Lifecycle",
    "MockHandler",
    "ParseError",
    "Passthrough",
    "RecursiveHandler",
    "Result",
    "RunOptions",
    "TriggerEvent",
    "TriggerHandler",
    "Value",
    "WorkflowAst",
    "WorkflowInstance",
    "apply_assignments",
    "eval_expr",
    "parse",
    "positions",
    "pretty",
    "read_jsonl",
    "run_workflow",
    "validate",
]
