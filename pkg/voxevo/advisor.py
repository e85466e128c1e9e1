"""Per-generation hyperparameter supervision.

An advisor reads the trailing window of generation reports and proposes the
next generation's GA hyperparameters. Sources: a deterministic scripted policy,
a chat-completion HTTP endpoint, or a replay of a previous run's audit log.
Every path ends in a clamped ``HyperParams``; failures fall back to the
current parameters.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol
import json
import logging
import os
import re
import threading

import requests
from dotenv import load_dotenv
from pydantic import BaseModel, Field, model_validator
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from .errors import ConfigError, ParseError
from .models import HYPERPARAM_RANGES, MULTIPLIER_KEYS, GenerationReport, HyperParams

load_dotenv()

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "voxevo-advisor/1"
API_KEY_ENV = "VOXEVO_LLM_KEY"
REQUIRED_KEYS = tuple(HYPERPARAM_RANGES)

LOW_DIVERSITY = 0.05
STAGNATION_EPS = 1e-6


class AdvisorMode(str, Enum):
    OFF = "off"
    SCRIPTED = "scripted"
    LLM = "llm"
    REPLAY = "replay"


class AdvisorSource(str, Enum):
    LLM = "llm"
    SCRIPTED = "scripted"
    FALLBACK = "fallback-previous"


class AdvisorSettings(BaseModel):
    mode: AdvisorMode = AdvisorMode.OFF
    endpoint: Optional[str] = None
    model: str = "gpt-4-turbo"
    temperature: float = 0.7
    timeout: float = Field(default=30.0, gt=0)
    retries: int = Field(default=2, ge=0)
    backoff_seconds: float = Field(default=1.0, ge=0)
    audit_log: str = "advisor_audit.jsonl"
    replay_log: Optional[str] = None
    allow_material_multipliers: bool = False


class AdvisorRequest(BaseModel):
    window: List[GenerationReport]
    current_params: HyperParams
    generation: int = 0
    schema_version: str = SCHEMA_VERSION

    @model_validator(mode="after")
    def _window_shape(self):
        if not 1 <= len(self.window) <= 3:
            raise ValueError(f"window must hold 1 to 3 reports, got {len(self.window)}")
        indices = [r.generation for r in self.window]
        if indices != list(range(indices[0], indices[0] + len(indices))):
            raise ValueError(f"window generations are not consecutive: {indices}")
        return self


class AdvisorReply(BaseModel):
    params: HyperParams
    rationale: str = ""
    source: AdvisorSource


class Advisor(Protocol):
    def advise(self, request: AdvisorRequest) -> AdvisorReply:
        ...


ROLE_PREAMBLE = (
    "You supervise a genetic algorithm that co-designs the body and control of voxel soft robots. "
    "Fitness is the horizontal distance (m) a robot travels; diversity is the mean pairwise fraction "
    "of voxels whose material differs across the population. Propose hyperparameters that keep "
    "diversity up and speed up fitness gains."
)
SYSTEM_MESSAGE = "Answer with a single JSON object and nothing else."

_TABLE_COLUMNS = ("generation", "mutation_rate", "mutation_scale", "crossover_rate", "elite_fraction",
                  "best", "mean", "std", "diversity")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def build_prompt(request: AdvisorRequest, allow_multipliers: bool = False) -> str:
    lines = [
        ROLE_PREAMBLE,
        "",
        f"Schema: {request.schema_version}. Statistics of the last {len(request.window)} generation(s), oldest first:",
        "",
        "| " + " | ".join(_TABLE_COLUMNS) + " |",
        "|" + "---|" * len(_TABLE_COLUMNS),
    ]
    for report in request.window:
        row = report.to_row()
        cells = [str(report.generation)] + [_fmt(row[c]) for c in _TABLE_COLUMNS[1:]]
        lines.append("| " + " | ".join(cells) + " |")

    current = request.current_params
    lines += [
        "",
        "Current hyperparameters: " + ", ".join(f"{k}={_fmt(getattr(current, k))}" for k in REQUIRED_KEYS),
        "Allowed ranges: " + ", ".join(f"{k} in [{lo:g}, {hi:g}]" for k, (lo, hi) in HYPERPARAM_RANGES.items()),
        "",
        "Reply with a single JSON object with exactly the keys "
        + ", ".join(f'"{k}"' for k in REQUIRED_KEYS) + ", each a number.",
    ]
    if allow_multipliers:
        lines.append(
            'You may add "material_multipliers": an object mapping any of '
            + ", ".join(f'"{k}"' for k in MULTIPLIER_KEYS)
            + " to a stiffness scale factor in [0.1, 10]."
        )
    return "\n".join(lines) + "\n"


def _first_json_object(text: str) -> Dict[str, Any]:
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ParseError("reply contains no JSON object")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def parse_reply(text: str, allow_multipliers: bool = False) -> HyperParams:
    data = _first_json_object(text)
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise ParseError(f"reply is missing {missing}")
    bad = [k for k in REQUIRED_KEYS if not _is_number(data[k])]
    if bad:
        raise ParseError(f"non-numeric values for {bad}")

    fields: Dict[str, Any] = {k: data[k] for k in REQUIRED_KEYS}
    multipliers = data.get("material_multipliers")
    if allow_multipliers and isinstance(multipliers, dict):
        accepted = {k: v for k, v in multipliers.items() if k in MULTIPLIER_KEYS and _is_number(v)}
        if accepted:
            fields["material_multipliers"] = accepted
    try:
        return HyperParams(**fields)
    except ValueError as e:
        raise ParseError(f"invalid hyperparameters: {e}") from e


def scripted_advisor(request: AdvisorRequest) -> AdvisorReply:
    """Raise mutation when diversity collapses, raise crossover when fitness stalls"""
    current = request.current_params
    updates: Dict[str, float] = {}
    reasons = []

    latest = request.window[-1]
    if latest.diversity < LOW_DIVERSITY:
        updates["mutation_rate"] = current.mutation_rate * 1.5
        updates["mutation_scale"] = current.mutation_scale * 1.5
        reasons.append(f"diversity {latest.diversity:.4f} < {LOW_DIVERSITY}")

    if len(request.window) > 1:
        improvement = request.window[-1].best_fitness - request.window[0].best_fitness
        if improvement < STAGNATION_EPS:
            updates["crossover_rate"] = current.crossover_rate * 1.25
            reasons.append(f"best fitness flat over {len(request.window)} generations")

    params = HyperParams(**{**current.model_dump(), **updates})
    return AdvisorReply(params=params, rationale="; ".join(reasons) or "no rule fired",
                        source=AdvisorSource.SCRIPTED)


class AuditLog:
    """JSON-lines record of every advisor exchange"""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()

    def record(self, entry: Dict[str, Any]) -> None:
        if self.path is None:
            return
        line = json.dumps(entry, sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    def record_outcome(self, request: AdvisorRequest, reply: AdvisorReply) -> None:
        self.record({
            "generation": request.generation,
            "final": True,
            "source": reply.source.value,
            "params": reply.params.model_dump(),
        })


class ScriptedAdvisor:
    def __init__(self, audit: Optional[AuditLog] = None):
        self.audit = audit or AuditLog(None)

    def advise(self, request: AdvisorRequest) -> AdvisorReply:
        reply = scripted_advisor(request)
        self.audit.record_outcome(request, reply)
        return reply


class _TransportError(Exception):
    pass


class LlmAdvisor:
    """Chat-completion client; retries transport and parse failures with exponential backoff"""

    def __init__(self, settings: AdvisorSettings, audit: Optional[AuditLog] = None,
                 session: Optional[requests.Session] = None, api_key: Optional[str] = None):
        if not settings.endpoint:
            raise ConfigError("advisor.endpoint", "required when advisor mode is llm")
        self.settings = settings
        self.audit = audit or AuditLog(None)
        self.session = session or requests.Session()
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            logger.warning(f"{API_KEY_ENV} is not set; calling {settings.endpoint} without credentials")

    def _payload(self, prompt: str) -> Dict[str, Any]:
        return {
            "model": self.settings.model,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.settings.temperature,
        }

    def _exchange(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.session.post(self.settings.endpoint, json=self._payload(prompt),
                                         headers=headers, timeout=self.settings.timeout)
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except requests.RequestException as e:
            raise _TransportError(str(e)) from e
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise ParseError(f"unexpected response body: {e}") from e

    def advise(self, request: AdvisorRequest) -> AdvisorReply:
        prompt = build_prompt(request, self.settings.allow_material_multipliers)
        attempt = 0

        def attempt_once() -> AdvisorReply:
            nonlocal attempt
            attempt += 1
            raw: Optional[str] = None
            try:
                raw = self._exchange(prompt)
                params = parse_reply(raw, self.settings.allow_material_multipliers)
            except (_TransportError, ParseError) as e:
                self.audit.record({"generation": request.generation, "attempt": attempt, "prompt": prompt,
                                   "raw_reply": raw, "outcome": f"error: {e}"})
                logger.warning(f"Advisor attempt {attempt} failed: {e}")
                raise
            self.audit.record({"generation": request.generation, "attempt": attempt, "prompt": prompt,
                               "raw_reply": raw, "outcome": "accepted"})
            return AdvisorReply(params=params, rationale=raw, source=AdvisorSource.LLM)

        retrying = Retrying(
            stop=stop_after_attempt(self.settings.retries + 1),
            wait=wait_exponential(multiplier=self.settings.backoff_seconds, min=0, max=60),
            retry=retry_if_exception_type((_TransportError, ParseError)),
            reraise=True,
        )
        try:
            reply = retrying(attempt_once)
        except (_TransportError, ParseError, RetryError) as e:
            logger.warning(f"Advisor gave up after {attempt} attempt(s), keeping current parameters: {e}")
            reply = AdvisorReply(params=request.current_params.model_copy(), rationale=str(e),
                                 source=AdvisorSource.FALLBACK)
        self.audit.record_outcome(request, reply)
        return reply


class ReplayAdvisor:
    """Replays the final outcome recorded for each generation in an audit log"""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.outcomes: Dict[int, Dict[str, Any]] = {}
        with open(self.path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ConfigError("advisor.replay_log", f"line {number} is not JSON: {e}") from e
                if entry.get("final"):
                    self.outcomes[int(entry["generation"])] = entry
        logger.info(f"Loaded {len(self.outcomes)} advisor outcome(s) from {self.path}")

    def advise(self, request: AdvisorRequest) -> AdvisorReply:
        entry = self.outcomes.get(request.generation)
        if entry is None:
            return AdvisorReply(params=request.current_params.model_copy(), rationale="generation not in replay log",
                                source=AdvisorSource.FALLBACK)
        return AdvisorReply(params=HyperParams(**entry["params"]), rationale="replayed",
                            source=AdvisorSource(entry["source"]))


def make_advisor(settings: AdvisorSettings, run_dir: Optional[Path] = None,
                 session: Optional[requests.Session] = None) -> Optional[Advisor]:
    audit = AuditLog(Path(run_dir) / settings.audit_log if run_dir is not None else None)
    if settings.mode == AdvisorMode.OFF:
        return None
    if settings.mode == AdvisorMode.SCRIPTED:
        return ScriptedAdvisor(audit)
    if settings.mode == AdvisorMode.LLM:
        return LlmAdvisor(settings, audit, session=session)
    if not settings.replay_log:
        raise ConfigError("advisor.replay_log", "required when advisor mode is replay")
    return ReplayAdvisor(Path(settings.replay_log))
