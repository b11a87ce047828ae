"""A tabular softmax policy over action tokens.

The policy emits token sequences such as::

    click_element_by_index index= 2 | done text= "ok" success= true <eos>

which :func:`decode` turns into the raw JSON response format, so rollouts are
scored by the same parser and reward code as real model output.

Logits are ``W @ phi(obs, history)`` where ``phi`` is a sparse one-hot feature
map: (observation, previous token), (observation, position), and a bias.
An optional grammar masks tokens that cannot follow the history; the
distribution is then the softmax restricted to the allowed set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..actions import TOOL_SCHEMAS

__all__ = [
    "ToyPolicy",
    "ActionGrammar",
    "UnknownToken",
    "DisallowedToken",
    "SEP",
    "EOS",
    "build_vocab",
    "encode_actions",
    "slot_values_from",
    "decode",
    "token_logprob",
    "sample_group",
    "Sample",
]

SEP = "|"
EOS = "<eos>"


class UnknownToken(KeyError):
    pass


class DisallowedToken(ValueError):
    pass


def _is_key(tok: str) -> bool:
    return tok.endswith("=") and tok[:-1].isidentifier()


def _value_kind(tok: str) -> str | None:
    try:
        v = json.loads(tok)
    except ValueError:
        return None
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "num"
    if isinstance(v, str):
        return "str"
    return None


_KIND_FOR_SCHEMA = {
    "string": "str",
    "boolean": "bool",
    "non-negative integer": "int",
    "optional non-negative integer": "int",
    "positive number": "num",
}


def _required_keys(tool: str) -> list[tuple[str, str]]:
    from ..actions import _REQUIRED  # schema sentinel

    return [(k, kind) for k, kind, default in TOOL_SCHEMAS[tool] if default is _REQUIRED]


class ActionGrammar:
    """Finite-state constraint: ``TOOL (KEY VALUE)* ( | TOOL ... )* <eos>``.

    Keys are emitted in schema order for the required arguments only, so they
    are forced tokens. With ``type_mask`` the value slot only admits tokens of
    the argument's type; without it any value token may appear there and the
    decoded response can fail validation. ``slot_values`` further narrows a
    string slot ``(tool, key)`` to the listed literal tokens.
    """

    def __init__(
        self,
        vocab: Sequence[str],
        max_actions: int = 4,
        type_mask: bool = True,
        slot_values: dict[tuple[str, str], Sequence[str]] | None = None,
    ):
        self.vocab = list(vocab)
        self.ids = {t: i for i, t in enumerate(self.vocab)}
        self.max_actions = max_actions
        self.type_mask = type_mask
        self.slot_values = {k: sorted(v) for k, v in (slot_values or {}).items()}
        self._slot_mask = {}
        for slot, values in self.slot_values.items():
            m = np.zeros(len(self.vocab), bool)
            for v in values:
                if v not in self.ids:
                    raise UnknownToken(v)
                m[self.ids[v]] = True
            self._slot_mask[slot] = m
        V = len(self.vocab)
        self.tools = [t for t in self.vocab if t in TOOL_SCHEMAS]
        self._tool_mask = np.zeros(V, bool)
        self._tool_mask[[self.ids[t] for t in self.tools]] = True
        self._value_mask = {}
        all_values = np.zeros(V, bool)
        for t in self.vocab:
            kind = _value_kind(t)
            if kind is not None:
                all_values[self.ids[t]] = True
                self._value_mask.setdefault(kind, np.zeros(V, bool))[self.ids[t]] = True
        self._all_values = all_values
        self._end_mask = np.zeros(V, bool)
        for t in (SEP, EOS):
            if t in self.ids:
                self._end_mask[self.ids[t]] = True
        self._eos_only = np.zeros(V, bool)
        self._eos_only[self.ids[EOS]] = True
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _one(self, tok: str) -> np.ndarray:
        m = np.zeros(len(self.vocab), bool)
        m[self.ids[tok]] = True
        return m

    def allowed(self, history: Sequence[int]) -> np.ndarray:
        key = tuple(history)
        if key not in self._cache:
            self._cache[key] = self._allowed(history)
        return self._cache[key]

    def _allowed(self, history: Sequence[int]) -> np.ndarray:
        n_actions = 0
        pending: list[tuple[str, str]] = []
        expect = "tool"
        value_kind = None
        tool = slot = None
        for tid in history:
            tok = self.vocab[tid]
            if expect == "tool":
                n_actions += 1
                tool = tok
                pending = _required_keys(tok)
                expect = "key" if pending else "end"
            elif expect == "key":
                value_kind = _KIND_FOR_SCHEMA.get(pending[0][1])
                slot = (tool, pending[0][0])
                pending = pending[1:]
                expect = "value"
            elif expect == "value":
                expect = "key" if pending else "end"
            elif expect == "end":
                if tok == EOS:
                    return np.zeros(len(self.vocab), bool)
                expect = "tool"
        if expect == "tool":
            return self._tool_mask
        if expect == "key":
            return self._one(pending[0][0] + "=")
        if expect == "value":
            if slot in self._slot_mask:
                return self._slot_mask[slot]
            if self.type_mask and value_kind in self._value_mask:
                return self._value_mask[value_kind]
            return self._all_values
        if n_actions >= self.max_actions:
            return self._eos_only
        return self._end_mask


def build_vocab(actions: Iterable, extra_tools: Iterable[str] = (), max_int: int = 3) -> list[str]:
    """Vocabulary covering ``actions`` (required arguments only) plus extras."""
    tools, keys, values = [], [], []
    for t in list(extra_tools):
        tools.append(t)
    for a in actions:
        tools.append(a.name)
        for k, _ in _required_keys(a.name):
            keys.append(k + "=")
            values.append(json.dumps(a[k], ensure_ascii=False))
    for t in list(tools):
        keys.extend(k + "=" for k, _ in _required_keys(t))
    values.extend(str(i) for i in range(max_int + 1))
    values.extend(["true", "false"])
    out = list(dict.fromkeys(tools)) + list(dict.fromkeys(keys)) + list(dict.fromkeys(values))
    return out + [SEP, EOS]


def slot_values_from(actions: Iterable) -> dict[tuple[str, str], list[str]]:
    """String literals seen per ``(tool, key)`` slot."""
    out: dict[tuple[str, str], set[str]] = {}
    for a in actions:
        for k, kind in _required_keys(a.name):
            if kind == "string":
                out.setdefault((a.name, k), set()).add(json.dumps(a[k], ensure_ascii=False))
    return {k: sorted(v) for k, v in sorted(out.items())}


def encode_actions(actions: Sequence, vocab: Sequence[str]) -> list[int]:
    ids = {t: i for i, t in enumerate(vocab)}
    toks: list[str] = []
    for j, a in enumerate(actions):
        if j:
            toks.append(SEP)
        toks.append(a.name)
        for k, _ in _required_keys(a.name):
            toks += [k + "=", json.dumps(a[k], ensure_ascii=False)]
    toks.append(EOS)
    try:
        return [ids[t] for t in toks]
    except KeyError as exc:
        raise UnknownToken(exc.args[0]) from None


def decode(tokens: Sequence[int], vocab: Sequence[str], note: str = "") -> str:
    """Render a token sequence as a raw response string.

    The prose fields are fixed templates; only the action list is learned.
    """
    actions: list[dict] = []
    current: dict | None = None
    key = None
    for tid in tokens:
        tok = vocab[tid]
        if tok == EOS:
            break
        if tok == SEP:
            current = None
            continue
        if current is None and tok in TOOL_SCHEMAS:
            current = {}
            actions.append({tok: current})
            continue
        if current is None:
            current = {}
            actions.append({tok: current})
            continue
        if _is_key(tok):
            key = tok[:-1]
            continue
        if key is not None:
            try:
                current[key] = json.loads(tok)
            except ValueError:
                current[key] = tok
            key = None
        else:
            current[tok] = None
    body = {
        "think": f"Policy rollout. {note}".strip(),
        "evaluation_previous_goal": "Unknown - toy policy",
        "memory": "toy policy",
        "next_goal": "Execute the planned tools.",
        "action": actions,
    }
    return json.dumps(body, ensure_ascii=False)


@dataclass
class Sample:
    tokens: list[int]
    truncated: bool
    logp: list[float]


class ToyPolicy:
    """Softmax policy with parameters ``W`` of shape ``(V, F)``."""

    def __init__(
        self,
        vocab: Sequence[str],
        n_obs: int = 1,
        max_pos: int = 24,
        W: np.ndarray | None = None,
        grammar: ActionGrammar | None = None,
    ):
        self.vocab = list(vocab)
        self.ids = {t: i for i, t in enumerate(self.vocab)}
        if EOS not in self.ids:
            raise ValueError("vocabulary needs an end-of-sequence token")
        self.n_obs = n_obs
        self.max_pos = max_pos
        V = len(self.vocab)
        self.n_features = n_obs * (V + 1) + n_obs * max_pos + 1
        self.W = np.zeros((V, self.n_features)) if W is None else np.array(W, dtype=float)
        if self.W.shape != (V, self.n_features):
            raise ValueError(f"W has shape {self.W.shape}, expected {(V, self.n_features)}")
        self.grammar = grammar

    @property
    def V(self) -> int:
        return len(self.vocab)

    def copy(self, W: np.ndarray | None = None) -> ToyPolicy:
        return ToyPolicy(self.vocab, self.n_obs, self.max_pos, self.W.copy() if W is None else W, self.grammar)

    def active(self, obs: int, history: Sequence[int]) -> tuple[int, int, int]:
        """Column indices of the three unit features."""
        if not 0 <= obs < self.n_obs:
            raise ValueError(f"observation {obs} outside 0..{self.n_obs - 1}")
        prev = history[-1] if history else self.V
        pos = min(len(history), self.max_pos - 1)
        return (
            obs * (self.V + 1) + prev,
            self.n_obs * (self.V + 1) + obs * self.max_pos + pos,
            self.n_features - 1,
        )

    def features(self, obs: int, history: Sequence[int]) -> np.ndarray:
        phi = np.zeros(self.n_features)
        phi[list(self.active(obs, history))] = 1.0
        return phi

    def mask(self, history: Sequence[int]) -> np.ndarray | None:
        return None if self.grammar is None else self.grammar.allowed(history)

    def log_probs(self, obs: int, history: Sequence[int]) -> np.ndarray:
        a, b, c = self.active(obs, history)
        logits = self.W[:, a] + self.W[:, b] + self.W[:, c]
        m = self.mask(history)
        if m is not None:
            if not m.any():
                raise DisallowedToken("sequence already ended")
            logits = np.where(m, logits, -np.inf)
        top = logits.max()
        z = logits - top
        return z - np.log(np.exp(z).sum())

    def ids_of(self, sequence: Sequence[str | int]) -> list[int]:
        out = []
        for t in sequence:
            if isinstance(t, (int, np.integer)):
                if not 0 <= t < self.V:
                    raise UnknownToken(t)
                out.append(int(t))
            elif t in self.ids:
                out.append(self.ids[t])
            else:
                raise UnknownToken(t)
        return out

    def sample(self, obs: int, rng: np.random.Generator, max_len: int | None = None) -> Sample:
        max_len = max_len or self.max_pos
        eos = self.ids[EOS]
        toks: list[int] = []
        logp: list[float] = []
        while len(toks) < max_len:
            lp = self.log_probs(obs, toks)
            p = np.exp(lp)
            tok = int(rng.choice(self.V, p=p / p.sum()))
            toks.append(tok)
            logp.append(float(lp[tok]))
            if tok == eos:
                return Sample(toks, False, logp)
        return Sample(toks, True, logp)


def token_logprob(policy: ToyPolicy, observation: int, sequence: Sequence[str | int]) -> np.ndarray:
    """Per-token log-probabilities of ``sequence`` under ``policy``."""
    ids = policy.ids_of(sequence)
    out = np.empty(len(ids))
    for t, tok in enumerate(ids):
        lp = policy.log_probs(observation, ids[:t])
        if not np.isfinite(lp[tok]):
            raise DisallowedToken(f"token {policy.vocab[tok]!r} not allowed at position {t}")
        out[t] = lp[tok]
    return out


def sample_group(policy: ToyPolicy, observation: int, G: int, seed, max_len: int | None = None) -> list[Sample]:
    """``G`` i.i.d. ancestral samples; identical ``seed`` gives identical samples."""
    rng = np.random.default_rng(seed)
    return [policy.sample(observation, rng, max_len) for _ in range(G)]
