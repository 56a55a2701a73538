"""Concrete generator/evaluator backends: an HTTP completion client and offline stubs."""
from __future__ import annotations

import os
import random
import threading
from typing import Sequence

import httpx

from alpo import codec
from alpo.errors import BackendError, ConfigError, ResponseFormatError
from alpo.sampling import Evaluator, Generator, SamplingParams

API_KEY_ENV = "ALPO_API_KEY"


class CompletionClient:
    """Minimal client for a JSON completion endpoint.

    Request body: ``{model, prompt, temperature, top_k, top_p, n, max_tokens, seed?}``.
    Response body: ``{choices: [{text}, ...]}``. The bearer token comes from
    ``ALPO_API_KEY``. A semaphore caps concurrent in-flight requests.
    """

    def __init__(self, url: str, model: str, *, timeout: float = 60.0, max_in_flight: int = 8,
                 api_key: str | None = None, transport: httpx.BaseTransport | None = None):
        if not url:
            raise ConfigError("backend URL is not configured")
        self.url = url
        self.model = model
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))

    def complete(self, prompt: str, *, temperature: float, top_k: int, top_p: float, n: int,
                 max_tokens: int, seed: int | None = None) -> list[str]:
        body = {
            "model": self.model,
            "prompt": prompt,
            "temperature": temperature,
            "top_k": top_k,
            "top_p": top_p,
            "n": n,
            "max_tokens": max_tokens,
        }
        if seed is not None:
            body["seed"] = seed
        with self._slots:
            try:
                resp = self._http.post(self.url, json=body)
                resp.raise_for_status()
                payload = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                raise BackendError(f"{self.url}: {exc}") from exc
        try:
            return [str(choice["text"]) for choice in payload["choices"]]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from exc

    def close(self):
        self._http.close()


class HttpGenerator(Generator):
    def __init__(self, client: CompletionClient):
        self.client = client

    def sample(self, prefix, params, count, seed=None):
        texts = self.client.complete(
            prefix,
            temperature=params.temperature,
            top_k=params.top_k,
            top_p=params.top_p,
            n=count,
            max_tokens=params.max_new_tokens,
            seed=seed,
        )
        if len(texts) != count:
            raise BackendError(f"asked for {count} completions, got {len(texts)}")
        return texts


class HttpEvaluator(Evaluator):
    """Judge model driven through the scoring prompt; all candidates go in one call."""

    def __init__(self, client: CompletionClient, direction=("zh", "en"), dimension="vividness",
                 params: SamplingParams | None = None):
        self.client = client
        self.direction = tuple(direction)
        self.dimension = dimension
        self.params = params or SamplingParams(temperature=1.0, top_k=1, top_p=1.0, max_new_tokens=512)

    def score(self, line, candidates, before=(), after=()):
        spec = codec.EvalPromptSpec(
            line_under_eval=line,
            candidates=list(candidates),
            context_before=before,
            context_after=after,
            dimension=self.dimension,
            direction=self.direction,
        )
        text = self.client.complete(
            codec.render_eval_prompt(spec),
            temperature=self.params.temperature,
            top_k=self.params.top_k,
            top_p=self.params.top_p,
            n=1,
            max_tokens=self.params.max_new_tokens,
        )[0]
        return codec.parse_eval_scores(text, spec.labels)


# --- offline stubs -------------------------------------------------------------

class DictionaryGenerator(Generator):
    """Translate word by word through a synonym dictionary, picking synonyms at random.

    Unknown words pass through unchanged. With probability ``drop_rate`` a
    word is omitted, which adds length variety. For a continuation prefix
    (ending in ``"\\n<i>."``) one line is produced; for a bare prompt a whole
    numbered response is produced. Output depends only on the seed, the
    prefix and the per-call seed.
    """

    def __init__(self, lexicon: dict[str, Sequence[str]], seed: int = 0, drop_rate: float = 0.1):
        self.lexicon = {k: list(v) for k, v in lexicon.items()}
        self.seed = seed
        self.drop_rate = drop_rate

    def _translate(self, source: str, rng: random.Random) -> str:
        words = []
        for w in source.split():
            if len(words) and rng.random() < self.drop_rate:
                continue
            options = self.lexicon.get(w)
            words.append(rng.choice(options) if options else w)
        return " ".join(words) or source

    def sample(self, prefix, params, count, seed=None):
        rng = random.Random(f"{self.seed}:{seed}:{prefix}")
        try:
            idx, source = codec.pending_line(prefix)
        except ResponseFormatError:
            sources = codec.source_lines(prefix)
            return [
                codec.numbered([self._translate(sources[i], rng) for i in sorted(sources)])
                for _ in range(count)
            ]
        if source is None:
            raise BackendError(f"prompt has no source line {idx}")
        return [self._translate(source, rng) for _ in range(count)]


class LengthEvaluator(Evaluator):
    """Scores a candidate by its character length, capped at 100."""

    def __init__(self, scale: float = 1.0):
        self.scale = scale

    def score(self, line, candidates, before=(), after=()):
        return [min(100, int(len(c) * self.scale)) for c in candidates]


class EchoGenerator(Generator):
    """Returns the last line of the prompt; an identity translator for round-trip checks."""

    def sample(self, prefix, params, count, seed=None):
        return [prefix.rsplit("\n", 1)[-1]] * count
