"""Run configuration: one YAML (or JSON) file, secrets from environment variables."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .errors import SearchGrpoError
from .grouping import DEFAULT_CLUSTER_MODE, DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_K_MIN
from .policies import DEFAULT_API_KEY_ENV, RemoteChatPolicy, load_scripted_policy
from .retrieval import DEFAULT_K, DEFAULT_N, RemoteRetriever, build_index, iter_corpus
from .rewards import DEFAULT_ALPHA, DEFAULT_GAMMA
from .rollout import DEFAULT_BUDGET, DEFAULT_G, Limits, Mode
from .textmetrics import DEFAULT_CUTOFFS


class ConfigError(SearchGrpoError):
    pass


@dataclass
class RunConfig:
    corpus: Optional[str] = None
    questions: Optional[str] = None
    mode: str = Mode.STANDARD.value
    G: int = DEFAULT_G
    N: int = DEFAULT_N
    K: int = DEFAULT_K
    budget: int = DEFAULT_BUDGET
    delta: float = DEFAULT_DELTA
    k_min: int = DEFAULT_K_MIN
    gamma: float = DEFAULT_GAMMA
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    cutoffs: list[int] = field(default_factory=lambda: list(DEFAULT_CUTOFFS))
    cluster_mode: str = DEFAULT_CLUSTER_MODE
    # {"kind": "builtin"} or {"kind": "remote", "url": ...}
    retriever: dict = field(default_factory=lambda: {"kind": "builtin"})
    # {"scripted": path} or {"endpoint": url, "model": name, "temperature": 1.0}
    main_policy: dict = field(default_factory=dict)
    ranker_policy: Optional[dict] = None
    workers: int = 1
    seed: int = 0
    batch_index: int = 0

    def validate(self) -> "RunConfig":
        problems = []
        if not self.N >= self.K >= 1:
            problems.append(f"need N >= K >= 1 (N={self.N}, K={self.K})")
        if not 0.0 < self.delta <= 1.0:
            problems.append(f"delta must lie in (0, 1] (delta={self.delta})")
        if self.k_min < 1:
            problems.append(f"k_min must be >= 1 (k_min={self.k_min})")
        if self.budget < 1:
            problems.append(f"budget must be >= 1 (budget={self.budget})")
        if self.G < 1:
            problems.append(f"G must be >= 1 (G={self.G})")
        if not 0.0 < self.epsilon < 1.0:
            problems.append(f"epsilon must lie in (0, 1) (epsilon={self.epsilon})")
        if not self.cutoffs or any(int(c) < 1 for c in self.cutoffs):
            problems.append(f"cutoffs must be non-empty positive integers ({self.cutoffs})")
        if self.workers < 1:
            problems.append(f"workers must be >= 1 (workers={self.workers})")
        if self.cluster_mode not in ("answer", "query"):
            problems.append(f"cluster_mode must be 'answer' or 'query' ({self.cluster_mode!r})")
        try:
            mode = Mode(self.mode)
        except ValueError:
            problems.append(f"unknown mode {self.mode!r}")
        else:
            if mode in (Mode.RANKER, Mode.FIXED_RANKER) and not self.ranker_policy:
                problems.append(f"mode {self.mode!r} needs ranker_policy")
        if self.retriever.get("kind", "builtin") not in ("builtin", "remote"):
            problems.append(f"retriever.kind must be builtin or remote ({self.retriever})")
        if self.retriever.get("kind") == "remote" and not self.retriever.get("url"):
            problems.append("remote retriever needs retriever.url")
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))
        return self

    @property
    def limits(self) -> Limits:
        return Limits(self.budget, self.N, self.K)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Read a config file; relative paths inside it resolve against the file's directory."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    base = path.parent
    for key in ("corpus", "questions"):
        if raw.get(key):
            raw[key] = str((base / raw[key]).resolve())
    for key in ("main_policy", "ranker_policy"):
        pol = raw.get(key)
        if isinstance(pol, dict) and pol.get("scripted"):
            pol["scripted"] = str((base / pol["scripted"]).resolve())
    try:
        cfg = RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg.validate()


def make_policy(settings: Optional[dict], role: str):
    if not settings:
        return None
    if settings.get("scripted"):
        return load_scripted_policy(settings["scripted"])
    if settings.get("endpoint") and settings.get("model"):
        return RemoteChatPolicy(
            endpoint=settings["endpoint"],
            model=settings["model"],
            temperature=float(settings.get("temperature", 1.0)),
            max_tokens=settings.get("max_tokens"),
            api_key_env=settings.get("api_key_env", DEFAULT_API_KEY_ENV),
            timeout=float(settings.get("timeout", 120.0)),
            max_retries=int(settings.get("max_retries", 3)),
        )
    raise ConfigError(f"{role} policy needs either 'scripted' or 'endpoint' + 'model': {settings}")


def make_retriever(cfg: RunConfig):
    if cfg.retriever.get("kind", "builtin") == "remote":
        return RemoteRetriever(cfg.retriever["url"], timeout=float(cfg.retriever.get("timeout", 30.0)),
                               max_retries=int(cfg.retriever.get("max_retries", 3)))
    if not cfg.corpus:
        raise ConfigError("builtin retriever needs 'corpus'")
    return build_index(iter_corpus(cfg.corpus))
