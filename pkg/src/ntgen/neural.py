"""Feed-forward neural language model over cluster ids.

Architecture: the three previous tokens are looked up in an embedding
matrix C (|V| x m), concatenated, and mapped by one linear layer (W, b) to
|V| logits followed by a softmax.  Training minimises the mean negative
log-likelihood of the next token with RMSProp on shuffled minibatches.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyModelError, VocabularyError
from .sequences import END, GLOBAL, IP_PAIR, START, ActivitySequence, _token_lists, token_name


@dataclass(frozen=True)
class NeuralHyper:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7
    embedding_dim: int = 64
    context: int = 3


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(params: dict[str, np.ndarray], ctx: np.ndarray, targets: np.ndarray
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean NLL of ``targets`` given context index rows, and its gradients."""
    C, W, b = params["C"], params["W"], params["b"]
    B, n = ctx.shape
    m = C.shape[1]
    emb = C[ctx].reshape(B, n * m)
    probs = _softmax(emb @ W + b)
    loss = float(-np.mean(np.log(probs[np.arange(B), targets])))
    dlogits = probs
    dlogits[np.arange(B), targets] -= 1.0
    dlogits /= B
    dC = np.zeros_like(C)
    np.add.at(dC, ctx.ravel(), (dlogits @ W.T).reshape(B * n, m))
    return loss, {"C": dC, "W": emb.T @ dlogits, "b": dlogits.sum(axis=0)}


@dataclass
class NeuralLM:
    vocab: list[int]
    params: dict[str, np.ndarray]
    hyper: NeuralHyper
    seed: int
    start_prob: np.ndarray
    aggregation: str | None = None
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def context_len(self) -> int:
        return self.hyper.context

    def index(self, tok: int) -> int:
        try:
            return self._index[tok]
        except KeyError:
            raise VocabularyError(f"token {token_name(tok)} is not in the model vocabulary") from None

    def encode_context(self, context: Sequence[int]) -> list[int]:
        n = self.hyper.context
        ctx = [START] * max(0, n - len(context)) + list(context)[-n:]
        return [self.index(t) for t in ctx]

    def predict_next(self, context: Sequence[int]) -> np.ndarray:
        ctx = np.array([self.encode_context(context)])
        C, W, b = self.params["C"], self.params["W"], self.params["b"]
        return _softmax(C[ctx].reshape(1, -1) @ W + b)[0]

    def perplexity(self, seqs: Iterable) -> float:
        ctx, tgt = training_pairs(seqs, self.vocab, self.hyper.context)
        loss, _ = loss_and_grads(self.params, ctx, tgt)
        return math.exp(loss)

    def to_json(self) -> dict:
        return {
            "kind": "NEURAL",
            "aggregation": self.aggregation,
            "vocab": self.vocab,
            "m": self.hyper.embedding_dim,
            "context": self.hyper.context,
            "C": self.params["C"].tolist(),
            "W": self.params["W"].tolist(),
            "b": self.params["b"].tolist(),
            "seed": self.seed,
            "hyperparameters": asdict(self.hyper),
            "start_prob": self.start_prob.tolist(),
            "epoch_losses": self.epoch_losses,
        }

    @classmethod
    def from_json(cls, d: dict) -> NeuralLM:
        params = {k: np.array(d[k], dtype=np.float64) for k in ("C", "W", "b")}
        return cls(d["vocab"], params, NeuralHyper(**d["hyperparameters"]), d["seed"],
                   np.array(d["start_prob"]), d.get("aggregation"), d.get("epoch_losses", []))


def training_pairs(seqs: Iterable, vocab: Sequence[int], context: int = 3
                   ) -> tuple[np.ndarray, np.ndarray]:
    """(context, target) index arrays; contexts are front-padded with START."""
    lists, agg = _token_lists(seqs)
    index = {t: i for i, t in enumerate(vocab)}
    ctx_rows, targets = [], []
    for toks in lists:
        if agg == IP_PAIR or (toks and toks[0] == START):
            padded = [START] * (context - 1) + toks
            first = context  # START itself is never a target
        else:
            padded = [START] * context + toks
            first = context
        for j in range(first, len(padded)):
            try:
                ctx_rows.append([index[t] for t in padded[j - context:j]])
                targets.append(index[padded[j]])
            except KeyError as exc:
                raise VocabularyError(f"token {exc.args[0]} is not in the vocabulary") from None
    return (np.array(ctx_rows, dtype=np.int64).reshape(-1, context),
            np.array(targets, dtype=np.int64))


def init_params(V: int, m: int, context: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    limit = math.sqrt(6.0 / (context * m + V))
    return {
        "C": rng.uniform(-0.05, 0.05, size=(V, m)),
        "W": rng.uniform(-limit, limit, size=(context * m, V)),
        "b": np.zeros(V),
    }


def fit_neural_lm(seqs: Sequence, hyper: NeuralHyper | None = None, seed: int = 0) -> NeuralLM:
    hyper = hyper or NeuralHyper()
    seqs = list(seqs)
    lists, agg = _token_lists(seqs)
    vocab = sorted({t for toks in lists for t in toks} | {START})
    ctx, tgt = training_pairs(seqs, vocab, hyper.context)
    if len(tgt) == 0:
        raise EmptyModelError("no (context, target) pairs to train on")
    rng = np.random.default_rng(seed)
    params = init_params(len(vocab), hyper.embedding_dim, hyper.context, rng)
    cache = {k: np.zeros_like(v) for k, v in params.items()}
    losses = []
    T = len(tgt)
    for _epoch in range(hyper.epochs):
        order = rng.permutation(T)
        batch_losses, batch_sizes = [], []
        for lo in range(0, T, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            loss, grads = loss_and_grads(params, ctx[idx], tgt[idx])
            for k, g in grads.items():
                cache[k] = hyper.rho * cache[k] + (1 - hyper.rho) * g * g
                params[k] -= hyper.learning_rate * g / (np.sqrt(cache[k]) + hyper.epsilon)
            batch_losses.append(loss)
            batch_sizes.append(len(idx))
        losses.append(float(np.average(batch_losses, weights=batch_sizes)))

    # first-cluster distribution used to seed global generation
    start = np.zeros(len(vocab))
    index = {t: i for i, t in enumerate(vocab)}
    for toks in lists:
        if agg == GLOBAL:
            for t in toks:
                start[index[t]] += 1
        else:
            real = [t for t in toks if t not in (START, END)]
            if real:
                start[index[real[0]]] += 1
    if start.sum() == 0:
        start[index[START]] = 1.0
    start /= start.sum()
    return NeuralLM(vocab, params, hyper, seed, start, agg, losses)
