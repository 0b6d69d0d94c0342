"""Next-token logit providers.

Any object with a ``vocab`` attribute and a ``next_logits(ctx)`` method is a
model. Two are shipped: :class:`ScriptedModel`, a rule table used as a
deterministic stand-in for a real MLLM, and :class:`RemoteModel`, an HTTP
client for an inference server speaking the ``/v1/logits`` protocol.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from .core import logit_vector
from .errors import (
    ConfigError,
    LengthMismatch,
    ModelError,
    NonFiniteError,
    ProtocolError,
    TransportError,
    VocabMismatch,
)
from .shuffle import permutation_from_seed, shuffle_patches

PIVOT_OPEN = "<RPivot>"
PIVOT_CLOSE = "</RPivot>"
UNK = "<unk>"
EOS = "<eos>"
SPECIAL_TOKENS = (UNK, EOS, PIVOT_OPEN, PIVOT_CLOSE)

_TOKEN_RE = re.compile(r"</?RPivot>|\w+|[^\w\s]")
_NO_SPACE_BEFORE = set(".,;:!?)]}%'")
_NO_SPACE_AFTER = set("([{")


class Vocabulary:
    """Ordered, duplicate-free token list; a token's position is its id."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if len(tokens) < 2:
            raise VocabMismatch("vocabulary needs at least 2 tokens")
        index = {}
        for i, tok in enumerate(tokens):
            if not isinstance(tok, str) or not tok or tok != tok.strip():
                raise VocabMismatch(f"invalid token at line {i}: {tok!r}")
            if tok in index:
                raise VocabMismatch(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        for special in (PIVOT_OPEN, PIVOT_CLOSE):
            if special not in index:
                raise VocabMismatch(f"vocabulary is missing special token {special}")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._index = index

    @classmethod
    def with_specials(cls, words: Sequence[str]) -> "Vocabulary":
        """Vocabulary made of the special tokens followed by ``words``."""
        seen = list(SPECIAL_TOKENS)
        for w in words:
            if w not in seen:
                seen.append(w)
        return cls(seen)

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabMismatch(f"token {token!r} not in vocabulary") from None

    def get(self, token: str) -> Optional[int]:
        return self._index.get(token)

    @property
    def unk_id(self) -> Optional[int]:
        return self._index.get(UNK)

    @property
    def eos_id(self) -> Optional[int]:
        return self._index.get(EOS)

    def tokenize(self, text: str) -> list[int]:
        """Split on whitespace and punctuation; unknown words map to ``<unk>``."""
        ids = []
        for piece in _TOKEN_RE.findall(text):
            tid = self._index.get(piece)
            if tid is None:
                if self.unk_id is None:
                    raise VocabMismatch(f"unknown word {piece!r} and no {UNK} token")
                tid = self.unk_id
            ids.append(tid)
        return ids

    def detokenize(self, ids: Sequence[int], skip_special: bool = True) -> str:
        out: list[str] = []
        for i in ids:
            tok = self.tokens[i]
            if skip_special and tok in (EOS, UNK):
                continue
            if out and tok[0] not in _NO_SPACE_BEFORE and out[-1][-1] not in _NO_SPACE_AFTER:
                out.append(" ")
            out.append(tok)
        return "".join(out)


@dataclass(frozen=True)
class GenerationContext:
    """Prompt and generated token ids, plus an optional patch grid.

    ``shuffle_seed`` records which seed produced the patch order when the
    image has been shuffled; it is ``None`` on the standard pathway.
    """

    prompt_tokens: tuple[int, ...]
    generated_tokens: tuple[int, ...] = ()
    image: Optional[np.ndarray] = None
    shuffle_seed: Optional[int] = None

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.prompt_tokens + self.generated_tokens

    def append(self, token: int) -> "GenerationContext":
        return GenerationContext(
            self.prompt_tokens, self.generated_tokens + (int(token),), self.image, self.shuffle_seed
        )

    def with_image(self, image: Optional[np.ndarray], shuffle_seed: Optional[int] = None) -> "GenerationContext":
        return GenerationContext(self.prompt_tokens, self.generated_tokens, image, shuffle_seed)


def make_context(vocab: Vocabulary, prompt: str, image: Optional[np.ndarray] = None) -> GenerationContext:
    return GenerationContext(prompt_tokens=tuple(vocab.tokenize(prompt)), image=image)


def check_context(vocab: Vocabulary, ctx: GenerationContext) -> None:
    toks = ctx.tokens
    if toks and (min(toks) < 0 or max(toks) >= len(vocab)):
        bad = next(t for t in toks if not 0 <= t < len(vocab))
        raise VocabMismatch(f"token id {bad} outside vocabulary of size {len(vocab)}")


class LogitModel(Protocol):
    vocab: Vocabulary

    def next_logits(self, ctx: GenerationContext) -> np.ndarray: ...


def next_logits(model: LogitModel, ctx: GenerationContext) -> np.ndarray:
    """Query ``model`` once and validate the returned vector."""
    check_context(model.vocab, ctx)
    return _query(model, ctx)


def _query(model: LogitModel, ctx: GenerationContext) -> np.ndarray:
    raw = model.next_logits(ctx)
    try:
        out = logit_vector(raw)
    except (LengthMismatch, NonFiniteError) as exc:
        raise ModelError(str(exc)) from exc
    if out.shape[0] != len(model.vocab):
        raise ModelError(f"model returned {out.shape[0]} logits for vocabulary of {len(model.vocab)}")
    return out


def dual_pathway_logits(
    model: LogitModel,
    ctx: GenerationContext,
    shuffle_seed: int,
    shuffled_image: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Standard logits and conflict-pathway logits (patch-shuffled image).

    Text-only contexts are queried twice unchanged. Callers decoding many
    steps of one sample may pass the already shuffled grid.
    """
    # Both pathways share the token sequence, so it is checked once.
    check_context(model.vocab, ctx)
    l_std = _query(model, ctx)
    if ctx.image is None:
        return l_std, _query(model, ctx)
    if shuffled_image is None:
        shuffled_image = shuffled_view(ctx.image, shuffle_seed)
    return l_std, _query(model, ctx.with_image(shuffled_image, shuffle_seed=shuffle_seed))


def shuffled_view(image: np.ndarray, shuffle_seed: int) -> np.ndarray:
    return shuffle_patches(image, permutation_from_seed(image.shape[0], shuffle_seed))


# -- scripted model -----------------------------------------------------------

IMAGE_CONDITIONS = ("any", "none", "present", "ordered", "shuffled")


def patches_ordered(grid: np.ndarray) -> bool:
    """True when patch rows are in non-decreasing lexicographic order."""
    if grid.shape[0] < 2:
        return True
    step = grid[1:] - grid[:-1]
    # Sign of the first non-zero column decides each pair; all-zero rows
    # point at column 0, whose step is 0 and therefore passes.
    first = (step != 0).argmax(axis=1)
    return bool((step[np.arange(step.shape[0]), first] >= 0).all())


@dataclass(frozen=True)
class ScriptedRule:
    suffix: tuple[int, ...]
    logits: np.ndarray
    image: str = "any"

    def matches(self, ctx: GenerationContext) -> bool:
        toks = ctx.tokens
        if len(self.suffix) > len(toks):
            return False
        if self.suffix and toks[len(toks) - len(self.suffix):] != self.suffix:
            return False
        return self.image_ok(ctx.image)

    def image_ok(self, image: Optional[np.ndarray], ordered: Optional[bool] = None) -> bool:
        """Check the image condition; ``ordered`` may carry a precomputed order test."""
        if self.image == "any":
            return True
        if self.image == "none":
            return image is None
        if image is None:
            return False
        if self.image == "present":
            return True
        if ordered is None:
            ordered = patches_ordered(image)
        return ordered if self.image == "ordered" else not ordered


LogitSpec = Union[Sequence[float], Mapping[str, float]]


@dataclass(frozen=True)
class ScriptedModelSpec:
    vocab: Vocabulary
    default: np.ndarray
    rules: tuple[ScriptedRule, ...] = ()


def _dense(vocab: Vocabulary, spec, fill: float = 0.0) -> np.ndarray:
    if isinstance(spec, Mapping):
        arr = np.full(len(vocab), float(fill))
        for tok, value in spec.items():
            arr[vocab.id(tok)] = float(value)
        spec = arr
    vec = logit_vector(spec)
    if vec.shape[0] != len(vocab):
        raise ConfigError(f"rule logits have length {vec.shape[0]}, vocabulary has {len(vocab)}")
    return vec


class ScriptedModel:
    """Rule-table model: the first rule whose pattern matches the context wins.

    A rule matches when the context's token sequence ends with ``suffix`` and
    the image satisfies the rule's image condition (``any``, ``none``,
    ``present``, ``ordered`` or ``shuffled``; "ordered" means the patch rows
    are lexicographically sorted).
    """

    def __init__(self, spec: ScriptedModelSpec):
        self.spec = spec
        self.vocab = spec.vocab
        # Rule positions indexed by their exact suffix, grouped by suffix
        # length, so a lookup costs one dict probe per distinct length.
        self._by_suffix: dict[int, dict[tuple[int, ...], list[int]]] = {}
        for i, rule in enumerate(spec.rules):
            self._by_suffix.setdefault(len(rule.suffix), {}).setdefault(rule.suffix, []).append(i)
        self._lengths = sorted(self._by_suffix)

    def next_logits(self, ctx: GenerationContext) -> np.ndarray:
        toks = ctx.tokens
        n = len(toks)
        candidates: list[int] = []
        for length in self._lengths:
            if length > n:
                break
            hit = self._by_suffix[length].get(toks[n - length:])
            if hit:
                candidates.extend(hit)
        if len(candidates) > 1:
            candidates.sort()
        rules = self.spec.rules
        image = ctx.image
        ordered = None
        for i in candidates:
            rule = rules[i]
            if rule.image in ("ordered", "shuffled") and image is not None and ordered is None:
                ordered = patches_ordered(image)
            if rule.image_ok(image, ordered):
                return rule.logits
        return self.spec.default

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "ScriptedModel":
        if "vocab" in data:
            vocab = Vocabulary(data["vocab"])
        elif "vocab_file" in data:
            p = Path(data["vocab_file"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            vocab = Vocabulary.from_file(p)
        else:
            raise ConfigError("scripted model spec needs 'vocab' or 'vocab_file'")
        fill = float(data.get("fill", 0.0))
        default = _dense(vocab, data.get("default", [fill] * len(vocab)), fill)
        rules = []
        for i, r in enumerate(data.get("rules", [])):
            image = r.get("image", "any")
            if image not in IMAGE_CONDITIONS:
                raise ConfigError(f"rule {i}: image condition must be one of {IMAGE_CONDITIONS}")
            suffix = tuple(vocab.id(t) for t in r.get("suffix", []))
            rules.append(ScriptedRule(suffix=suffix, logits=_dense(vocab, r["logits"], fill), image=image))
        return cls(ScriptedModelSpec(vocab=vocab, default=default, rules=tuple(rules)))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedModel":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def to_dict(self) -> dict:
        toks = self.vocab.tokens
        return {
            "vocab": list(toks),
            "default": self.spec.default.tolist(),
            "rules": [
                {"suffix": [toks[t] for t in r.suffix], "image": r.image, "logits": r.logits.tolist()}
                for r in self.spec.rules
            ],
        }


# -- remote model -------------------------------------------------------------


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    timeout_ms: int = 30_000
    retries: int = 2

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be > 0")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")


def wire_payload(ctx: GenerationContext) -> dict:
    return {
        "tokens": list(ctx.tokens),
        "patches": None if ctx.image is None else ctx.image.tolist(),
        "shuffle_seed": ctx.shuffle_seed,
    }


def parse_logits_response(body, vocab_size: int) -> np.ndarray:
    if not isinstance(body, dict) or not isinstance(body.get("logits"), list):
        raise ProtocolError("response must be a JSON object with a 'logits' array")
    values = body["logits"]
    if len(values) != vocab_size:
        raise ProtocolError(f"expected {vocab_size} logits, got {len(values)}")
    try:
        arr = np.array(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise ProtocolError("logits must be numbers") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ProtocolError("logits contain non-finite values")
    arr.setflags(write=False)
    return arr


def remote_next_logits(
    ep: RemoteEndpoint, ctx: GenerationContext, vocab_size: int, client: httpx.Client | None = None
) -> np.ndarray:
    """POST the context to ``{base_url}/v1/logits`` and parse the logit array.

    Connection failures and timeouts are retried ``ep.retries`` times; HTTP
    error statuses and malformed bodies are not.
    """
    own = client is None
    if own:
        client = httpx.Client(timeout=ep.timeout_ms / 1000)
    url = ep.base_url.rstrip("/") + "/v1/logits"
    try:
        last = None
        for _ in range(ep.retries + 1):
            try:
                resp = client.post(url, json=wire_payload(ctx))
                break
            except httpx.TransportError as exc:
                last = exc
        else:
            raise TransportError(f"{url}: {last}") from last
    finally:
        if own:
            client.close()
    if resp.status_code >= 400:
        raise ModelError(f"{url} returned HTTP {resp.status_code}: {resp.text[:500]}")
    try:
        body = resp.json()
    except ValueError:
        raise ProtocolError(f"{url} returned a non-JSON body") from None
    return parse_logits_response(body, vocab_size)


class RemoteModel:
    """Model served over HTTP; connections are pooled by one shared client."""

    def __init__(self, endpoint: RemoteEndpoint, vocab: Vocabulary):
        self.endpoint = endpoint
        self.vocab = vocab
        self._client = httpx.Client(timeout=endpoint.timeout_ms / 1000)

    def next_logits(self, ctx: GenerationContext) -> np.ndarray:
        return remote_next_logits(self.endpoint, ctx, len(self.vocab), client=self._client)

    def close(self) -> None:
        self._client.close()


class CountingModel:
    """Wraps a model and counts ``next_logits`` calls (thread-safe)."""

    def __init__(self, inner: LogitModel):
        self.inner = inner
        self.vocab = inner.vocab
        self.calls = 0
        self._lock = threading.Lock()

    def next_logits(self, ctx: GenerationContext) -> np.ndarray:
        with self._lock:
            self.calls += 1
        return self.inner.next_logits(ctx)

    def reset(self) -> None:
        with self._lock:
            self.calls = 0
