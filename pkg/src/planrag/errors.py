"""Exception types shared across the package.

Every error names the offending element (node id, tag, label, position, ...)
so callers can report or repair precisely.  Backend errors carry a
``retryable`` flag consumed by the bounded-retry wrapper.
"""

from __future__ import annotations


class PlanError(Exception):
    """Base class for plan construction and parsing failures."""


# --- structural errors (dag construction) ---------------------------------


class PlanStructureError(PlanError):
    pass


class CycleDetected(PlanStructureError):
    def __init__(self, node_ids=()):
        self.node_ids = tuple(node_ids)
        detail = ", ".join(str(n) for n in self.node_ids)
        super().__init__(f"plan contains a cycle involving: {detail or 'unknown nodes'}")


class DisconnectedNode(PlanStructureError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"node {node_id} is not reachable from the root")


class MultipleSinks(PlanStructureError):
    def __init__(self, node_ids):
        self.node_ids = tuple(node_ids)
        detail = ", ".join(str(n) for n in self.node_ids)
        super().__init__(f"plan has multiple sinks: {detail}")


class DuplicateNode(PlanStructureError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"node label {node_id} used for two different subqueries")


class DanglingTag(PlanStructureError):
    def __init__(self, node_id, tag):
        self.node_id = node_id
        self.tag = tag
        super().__init__(f"node {node_id} carries tag {tag} that does not point at one of its parents")


# --- syntax errors (raw text parsing) --------------------------------------


class PlanSyntaxError(PlanError):
    pass


class UnparseableSyntax(PlanSyntaxError):
    def __init__(self, position: int, detail: str = ""):
        self.position = position
        msg = f"unparseable plan text at offset {position}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class BadLabel(PlanSyntaxError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"not a valid node label: {label!r}")


# --- backend errors ---------------------------------------------------------


class BackendError(Exception):
    """Base class for generation-service failures.

    ``retryable`` marks transient transport conditions worth one more attempt.
    """

    retryable = False


class BackendUnavailable(BackendError):
    def __init__(self, detail: str = "", retryable: bool = True):
        self.retryable = retryable
        super().__init__(detail or "backend unavailable")


class BackendTimeout(BackendError):
    retryable = True


class RateLimited(BackendError):
    retryable = True

    def __init__(self, retry_after: float = 1.0):
        self.retry_after = retry_after
        super().__init__(f"rate limited; retry after {retry_after}s")


class MalformedGeneration(BackendError):
    """The completion did not contain the JSON payload a prompt asked for."""

    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"no usable JSON payload in completion: {raw[:120]!r}")


class ScriptedResponseMissing(BackendError):
    def __init__(self, purpose: str, user_head: str):
        self.purpose = purpose
        super().__init__(f"no scripted response for purpose={purpose}, prompt starting {user_head!r}")


# --- retrieval errors -------------------------------------------------------


class RetrievalError(Exception):
    pass


class EmptyCorpus(RetrievalError):
    def __init__(self):
        super().__init__("corpus contains no ingestible text")


class EndpointUnavailable(RetrievalError):
    def __init__(self, detail: str = ""):
        super().__init__(detail or "retrieval endpoint unavailable")


# --- execution errors -------------------------------------------------------


class ExecutionError(Exception):
    pass


class NodeFailed(ExecutionError):
    def __init__(self, node_id, cause: BaseException):
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"node {node_id} failed: {cause!r}")


class MissingParentAnswer(ExecutionError):
    def __init__(self, tag):
        self.tag = tag
        super().__init__(f"tag {tag} has no resolved parent answer")


class UnnormalizableBoolean(ExecutionError):
    def __init__(self, answer: str):
        self.answer = answer
        super().__init__(f"cannot map answer to yes/no: {answer!r}")


# --- evaluation errors ------------------------------------------------------


class EvalError(Exception):
    pass


class MissingGold(EvalError):
    def __init__(self, item_id):
        self.item_id = item_id
        super().__init__(f"dataset item {item_id} has no gold sentences")


class IdMismatch(EvalError):
    def __init__(self, ids):
        self.ids = tuple(ids)
        super().__init__(f"record ids missing from dataset: {', '.join(map(str, self.ids))}")


class JudgeUnparseable(EvalError):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"judge output is not an integer score: {raw[:80]!r}")
