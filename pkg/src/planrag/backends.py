"""Generation services and prompt construction.

All system prompts live as text assets under prompts/ and are loaded
verbatim; builders only fill the per-call user content.  Two backends speak
the same ``generate(bundle) -> Completion`` interface: an HTTP client for
OpenAI-style chat-completions endpoints and a deterministic scripted backend
for tests and offline runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Protocol, Sequence

import httpx

from .errors import (
    BackendError,
    BackendTimeout,
    BackendUnavailable,
    JudgeUnparseable,
    MalformedGeneration,
    RateLimited,
    ScriptedResponseMissing,
)
from .textutils import estimate_tokens, strip_code_fences


class Purpose(Enum):
    PLAN = "Plan"
    TAG_REPLACE = "TagReplace"
    ANSWER = "Answer"
    VANILLA_LLM = "VanillaLLM"
    VANILLA_RAG = "VanillaRAG"
    COT = "CoT"
    QD_SPLIT = "QDSplit"
    QD_ANSWER = "QDAnswer"
    IG_JUDGE = "IGJudge"


_PROMPT_FILES = {
    Purpose.PLAN: "plan.txt",
    Purpose.TAG_REPLACE: "tag_replace.txt",
    Purpose.ANSWER: "answer.txt",
    Purpose.VANILLA_LLM: "vanilla_llm.txt",
    Purpose.VANILLA_RAG: "vanilla_rag.txt",
    Purpose.COT: "cot_rag.txt",
    Purpose.QD_SPLIT: "qd_split.txt",
    Purpose.QD_ANSWER: "qd_answer.txt",
    Purpose.IG_JUDGE: "ig_judge.txt",
}


@lru_cache(maxsize=None)
def prompt_text(purpose: Purpose) -> str:
    """Verbatim system prompt for a purpose, loaded from the catalog."""
    name = _PROMPT_FILES[purpose]
    return resources.files(__package__).joinpath("prompts", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptBundle:
    purpose: Purpose
    system: str
    user: str
    role_tag_wrapping: bool = False
    temperature: float = 0.0


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int
    latency: float


class Backend(Protocol):
    def generate(self, bundle: PromptBundle) -> Completion: ...


def _check_bundle(bundle: PromptBundle):
    if not bundle.user.strip():
        raise ValueError("refusing to generate from an empty user prompt")


# --- prompt builders --------------------------------------------------------


def _bundle(purpose: Purpose, user: str, **kwargs) -> PromptBundle:
    return PromptBundle(purpose=purpose, system=prompt_text(purpose), user=user, **kwargs)


def render_retrievals(docs: Sequence[str]) -> str:
    """Documents as a list of one-element lists, matching the prompt examples."""
    return json.dumps([[d] for d in docs], ensure_ascii=False)


def _render_known(known_answers: Sequence[tuple[str, str]]) -> str:
    return "\n".join(f"Q={q} A={a}" for q, a in known_answers)


def build_plan_prompt(query: str) -> PromptBundle:
    return _bundle(Purpose.PLAN, f"Query: {query}")


def build_tag_replace_prompt(
    node_template: str, parent_qas: Sequence[tuple[str, str, str]]
) -> PromptBundle:
    """node_template is the labeled line ("Q2.1: ... <A1.1> ..."); parent_qas
    holds (label, question, answer) triples with labels like "Q1.1"."""
    lines = [f"Query: {node_template}"]
    for label, question, answer in parent_qas:
        lines.append(f"{label}: {question}")
        lines.append(f"A{label[1:]}: {answer}")
    lines.append("Output: ")
    return _bundle(Purpose.TAG_REPLACE, "\n".join(lines))


def _answer_user(
    question: str,
    retrievals: Sequence[str],
    known_answers: Sequence[tuple[str, str]],
) -> str:
    lines = [f"Query: {question}", f"Retrievals: {render_retrievals(retrievals)}"]
    if known_answers:
        lines.append(f"Known answers: {_render_known(known_answers)}")
    lines.append("Generation: ")
    return "\n".join(lines)


def build_answer_prompt(
    question: str,
    retrievals: Sequence[str] = (),
    known_answers: Sequence[tuple[str, str]] = (),
) -> PromptBundle:
    return _bundle(Purpose.ANSWER, _answer_user(question, retrievals, known_answers))


def build_vanilla_llm_prompt(query: str) -> PromptBundle:
    return _bundle(Purpose.VANILLA_LLM, f"Query: {query}")


def build_vanilla_rag_prompt(query: str, retrievals: Sequence[str]) -> PromptBundle:
    user = f"Query: {query}\nRetrievals: {render_retrievals(retrievals)}\nGeneration: "
    return _bundle(Purpose.VANILLA_RAG, user)


def build_cot_rag_prompt(query: str, retrievals: Sequence[str]) -> PromptBundle:
    user = f"Query: {query}\nRetrievals: {render_retrievals(retrievals)}\nGeneration: "
    return _bundle(Purpose.COT, user)


def build_qd_split_prompt(query: str) -> PromptBundle:
    return _bundle(Purpose.QD_SPLIT, f"Query: {query}\nSubqueries: ")


def build_qd_answer_prompt(
    question: str,
    retrievals: Sequence[str] = (),
    known_answers: Sequence[tuple[str, str]] = (),
) -> PromptBundle:
    return _bundle(Purpose.QD_ANSWER, _answer_user(question, retrievals, known_answers))


def build_ig_judge_prompt(main_query: str, subquery_lines: Sequence[str]) -> PromptBundle:
    user = (
        f"Main Query: {main_query}\n"
        f"Subqueries: [{', '.join(subquery_lines)}]\n"
        "Information Gain: "
    )
    return _bundle(Purpose.IG_JUDGE, user)


def build_baseline_prompt(
    mode: str,
    query: str,
    retrievals: Sequence[str] = (),
    known_answers: Sequence[tuple[str, str]] = (),
) -> PromptBundle:
    """Dispatch on a baseline mode name."""
    name = mode.replace("-", "").replace("_", "").lower()
    if name == "vanillallm":
        return build_vanilla_llm_prompt(query)
    if name == "vanillarag":
        return build_vanilla_rag_prompt(query, retrievals)
    if name == "cotrag":
        return build_cot_rag_prompt(query, retrievals)
    if name == "qdsplit":
        return build_qd_split_prompt(query)
    if name == "qdanswer":
        return build_qd_answer_prompt(query, retrievals, known_answers)
    raise ValueError(f"unknown baseline mode: {mode!r}")


# --- completion post-processing ---------------------------------------------


def extract_json_response(raw: str, required_key: str = "Response") -> str:
    """Pull ``required_key`` out of the first JSON object found in a completion.

    Tolerates code fences and prose around the object.  Non-string values are
    rendered back to JSON text.
    """
    if not raw or not raw.strip():
        raise MalformedGeneration(raw or "")
    text = strip_code_fences(raw)
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
        except ValueError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict) and required_key in obj:
            value = obj[required_key]
            return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)
        idx = text.find("{", idx + 1)
    raise MalformedGeneration(raw)


_SCORE_RE = re.compile(r"-?\d+(?:\.\d+)?")


def parse_ig_score(raw: str) -> int:
    """Integer score out of a judge completion.

    The judge prompt advertises a 1-10 range but its own examples include a 0
    for an unhelpful decomposition, so 0..10 is accepted.
    """
    m = _SCORE_RE.search(strip_code_fences(raw or ""))
    if not m:
        raise JudgeUnparseable(raw or "")
    value = float(m.group(0))
    if value != int(value) or not 0 <= value <= 10:
        raise JudgeUnparseable(raw)
    return int(value)


# --- retry wrapper ----------------------------------------------------------


def generate_with_retry(
    backend: Backend,
    bundle: PromptBundle,
    retries: int = 1,
    base_delay: float = 0.5,
) -> tuple[Completion, int]:
    """Call the backend, retrying transient failures with exponential backoff.

    Returns (completion, number of retries actually spent).
    """
    attempt = 0
    while True:
        try:
            return backend.generate(bundle), attempt
        except BackendError as err:
            if not getattr(err, "retryable", False) or attempt >= retries:
                raise
            delay = getattr(err, "retry_after", None) or base_delay * (2**attempt)
            time.sleep(delay)
            attempt += 1


# --- scripted backend --------------------------------------------------------


def _user_key(user_text: str) -> str:
    return hashlib.sha256(user_text.encode("utf-8")).hexdigest()


def _as_purpose(purpose: "Purpose | str | None") -> Purpose | None:
    if purpose is None or isinstance(purpose, Purpose):
        return purpose
    return Purpose(purpose)


class _Script:
    """A fixed response, or an ordered sequence consumed one call at a time."""

    def __init__(self, response):
        if isinstance(response, str):
            self.fixed = response
            self.sequence = None
        else:
            self.fixed = None
            self.sequence = list(response)
        self.cursor = 0

    def next(self, purpose: str, user_head: str) -> str:
        if self.fixed is not None:
            return self.fixed
        if self.cursor >= len(self.sequence):
            raise ScriptedResponseMissing(purpose, user_head)
        out = self.sequence[self.cursor]
        self.cursor += 1
        return out


class ScriptedBackend:
    """Deterministic generation for tests and offline runs.

    Resolution order per call: exact (purpose, user-content hash) entry,
    then substring rules in registration order, then the purpose default.
    The cursor state of ordered scripts is guarded by a lock; the configured
    delay is slept outside it, so concurrent calls overlap, and is reported
    verbatim as the completion's latency.
    """

    def __init__(self, delay: float = 0.0):
        self.delay = delay
        self._exact: dict[tuple[Purpose, str], _Script] = {}
        self._contains: list[tuple[Purpose | None, str, _Script]] = []
        self._defaults: dict[Purpose, _Script] = {}
        self._lock = threading.Lock()
        self.calls: list[PromptBundle] = []

    def add_exact(self, purpose: Purpose | str, user_text: str, response) -> "ScriptedBackend":
        self._exact[(_as_purpose(purpose), _user_key(user_text))] = _Script(response)
        return self

    def add_contains(self, substring: str, response, purpose: Purpose | str | None = None) -> "ScriptedBackend":
        self._contains.append((_as_purpose(purpose), substring, _Script(response)))
        return self

    def set_default(self, purpose: Purpose | str, response) -> "ScriptedBackend":
        self._defaults[_as_purpose(purpose)] = _Script(response)
        return self

    def calls_for(self, purpose: Purpose | str) -> list[PromptBundle]:
        wanted = _as_purpose(purpose)
        with self._lock:
            return [b for b in self.calls if b.purpose is wanted]

    def _resolve(self, bundle: PromptBundle) -> str:
        head = bundle.user[:60]
        script = self._exact.get((bundle.purpose, _user_key(bundle.user)))
        if script is not None:
            return script.next(bundle.purpose.value, head)
        for purpose, substring, rule in self._contains:
            if purpose is not None and purpose is not bundle.purpose:
                continue
            if substring in bundle.user:
                return rule.next(bundle.purpose.value, head)
        script = self._defaults.get(bundle.purpose)
        if script is not None:
            return script.next(bundle.purpose.value, head)
        raise ScriptedResponseMissing(bundle.purpose.value, head)

    def generate(self, bundle: PromptBundle) -> Completion:
        _check_bundle(bundle)
        with self._lock:
            self.calls.append(bundle)
            text = self._resolve(bundle)
        if self.delay:
            time.sleep(self.delay)
        return Completion(
            text=text,
            input_tokens=estimate_tokens(bundle.system) + estimate_tokens(bundle.user),
            output_tokens=estimate_tokens(text),
            latency=self.delay,
        )


def load_scripted_backend(path) -> ScriptedBackend:
    """Build a ScriptedBackend from a JSON script file.

    Schema: {delay?, exact?: [{purpose, user, response}],
             contains?: [{purpose?, substring, response}],
             defaults?: {purpose: response}} where response is a string or an
    ordered list of strings.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    backend = ScriptedBackend(delay=float(doc.get("delay", 0.0)))
    for row in doc.get("exact", []):
        backend.add_exact(Purpose(row["purpose"]), row["user"], row["response"])
    for row in doc.get("contains", []):
        purpose = Purpose(row["purpose"]) if row.get("purpose") else None
        backend.add_contains(row["substring"], row["response"], purpose)
    for name, response in doc.get("defaults", {}).items():
        backend.set_default(Purpose(name), response)
    return backend


# --- HTTP backend ------------------------------------------------------------


class HttpBackend:
    """OpenAI-compatible chat-completions client.

    ``role_tag_wrapping`` folds the system prompt into a single [INST]-style
    user message for model families served that way.  A custom transport can
    be injected for testing.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, env=os.environ, **kwargs) -> "HttpBackend":
        endpoint = env.get("PLANRAG_LLM_ENDPOINT")
        if not endpoint:
            raise BackendUnavailable("PLANRAG_LLM_ENDPOINT is not set", retryable=False)
        return cls(
            endpoint,
            model=env.get("PLANRAG_LLM_MODEL", "default"),
            api_key=env.get("PLANRAG_LLM_KEY"),
            **kwargs,
        )

    def _messages(self, bundle: PromptBundle) -> list[dict]:
        if bundle.role_tag_wrapping:
            content = f"[INST] <<SYS>>\n{bundle.system}\n<</SYS>>\n\n{bundle.user} [/INST]"
            return [{"role": "user", "content": content}]
        return [
            {"role": "system", "content": bundle.system},
            {"role": "user", "content": bundle.user},
        ]

    def generate(self, bundle: PromptBundle) -> Completion:
        _check_bundle(bundle)
        payload = {
            "model": self.model,
            "messages": self._messages(bundle),
            "temperature": bundle.temperature,
        }
        t0 = time.perf_counter()
        try:
            response = self._client.post(self.endpoint, json=payload)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(str(exc)) from exc
        latency = time.perf_counter() - t0
        if response.status_code == 429:
            retry_after = float(response.headers.get("Retry-After", 1.0))
            raise RateLimited(retry_after)
        if response.status_code >= 500:
            raise BackendUnavailable(f"server error {response.status_code}")
        if response.status_code >= 400:
            raise BackendUnavailable(
                f"request rejected ({response.status_code}): {response.text[:120]}",
                retryable=False,
            )
        doc = response.json()
        text = doc["choices"][0]["message"]["content"]
        usage = doc.get("usage") or {}
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        if input_tokens is None:
            input_tokens = estimate_tokens(bundle.system) + estimate_tokens(bundle.user)
        if output_tokens is None:
            output_tokens = estimate_tokens(text)
        return Completion(text, input_tokens, output_tokens, latency)
