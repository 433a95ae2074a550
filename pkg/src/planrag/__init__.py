"""Test-time reasoning-plan RAG: decompose a query into a DAG of atomic
subqueries, execute it layer-parallel with per-node retrieval, and evaluate.
"""

from .backends import (
    Backend,
    Completion,
    HttpBackend,
    PromptBundle,
    Purpose,
    ScriptedBackend,
    generate_with_retry,
    load_scripted_backend,
    prompt_text,
)
from .errors import (
    BackendError,
    CycleDetected,
    DanglingTag,
    DisconnectedNode,
    DuplicateNode,
    MultipleSinks,
    PlanError,
    RetrievalError,
    UnparseableSyntax,
)
from .evalkit import (
    DatasetItem,
    EvalReport,
    accuracy_contains,
    build_report,
    depth_histogram,
    format_report,
    gold_chunks,
    info_gain_curve,
    load_dataset,
    record_depth,
    retrieval_pr,
)
from .executor import (
    Aggregation,
    ExecutionTrace,
    Mode,
    NodeResult,
    RunConfig,
    RunRecord,
    TagResolution,
    context_cost,
    generate_plan,
    latency_model,
    materialize_subquery,
    normalize_record,
    normalized_record_bytes,
    run_pipeline,
    run_plan,
)
from .plan_model import (
    ROOT_ID,
    AnswerTag,
    NodeId,
    PlanNode,
    ReasoningDag,
    build_dag,
    dag_from_json,
    dag_to_json,
    layers,
    node_depths,
    reasoning_depth,
    render_plan_tuples,
)
from .plan_parser import PlanParseResult, SimpleQuery, parse_plan_text, parse_subquery_list
from .retrieval import (
    ChunkStore,
    Document,
    HttpRetriever,
    LexicalRetriever,
    RetrievalSet,
    ScriptedRetriever,
    ingest_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "Aggregation",
    "AnswerTag",
    "Backend",
    "BackendError",
    "ChunkStore",
    "Completion",
    "CycleDetected",
    "DanglingTag",
    "DatasetItem",
    "DisconnectedNode",
    "Document",
    "DuplicateNode",
    "EvalReport",
    "ExecutionTrace",
    "HttpBackend",
    "HttpRetriever",
    "LexicalRetriever",
    "Mode",
    "MultipleSinks",
    "NodeId",
    "NodeResult",
    "PlanError",
    "PlanNode",
    "PlanParseResult",
    "PromptBundle",
    "Purpose",
    "ReasoningDag",
    "RetrievalError",
    "RetrievalSet",
    "ROOT_ID",
    "RunConfig",
    "RunRecord",
    "ScriptedBackend",
    "ScriptedRetriever",
    "SimpleQuery",
    "TagResolution",
    "UnparseableSyntax",
    "accuracy_contains",
    "build_dag",
    "build_report",
    "context_cost",
    "dag_from_json",
    "dag_to_json",
    "depth_histogram",
    "format_report",
    "generate_plan",
    "generate_with_retry",
    "gold_chunks",
    "info_gain_curve",
    "ingest_corpus",
    "latency_model",
    "layers",
    "load_dataset",
    "load_scripted_backend",
    "materialize_subquery",
    "node_depths",
    "normalize_record",
    "normalized_record_bytes",
    "parse_plan_text",
    "parse_subquery_list",
    "prompt_text",
    "reasoning_depth",
    "record_depth",
    "render_plan_tuples",
    "retrieval_pr",
    "run_pipeline",
    "run_plan",
    "__version__",
]
