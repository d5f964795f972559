"""Estimator-style front end so the pipeline composes with fit/predict
tooling: hyperparameters in __init__, get_params/set_params, fitted state
on trailing-underscore attributes."""

from __future__ import annotations

import inspect

from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .data import ExamplePair, tokenize_text
from .evaluation import bleu4_corpus
from .graphs import template_interpret
from .parser import SqlParseError, parse
from .training import TrainConfig, train


def check_sql_list(X) -> list[str]:
    """Validate a list of SQL strings; raises ValueError naming the first
    offending index."""
    if isinstance(X, str):
        raise ValueError("X must be a sequence of SQL strings, not a single string")
    X = list(X)
    if not X:
        raise ValueError("X is empty")
    for i, sql in enumerate(X):
        if not isinstance(sql, str):
            raise ValueError(f"X[{i}] is not a string")
        try:
            parse(sql)
        except SqlParseError as exc:
            raise ValueError(f"X[{i}] does not parse: {exc}") from exc
    return X


def check_paired_text(X, y) -> tuple[list[str], list[str]]:
    X = check_sql_list(X)
    y = list(y)
    if len(X) != len(y):
        raise ValueError(f"X and y length mismatch: {len(X)} vs {len(y)}")
    for i, text in enumerate(y):
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"y[{i}] must be a non-empty string")
    return X, y


class _ParamsMixin:
    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class SqlToTextGenerator(_ParamsMixin):
    """Trainable SQL-to-text generator.

    Parameters mirror the training configuration: graph-encoder sizes
    (word_dim, hidden, hop_size), the graph-embedding method
    ("pooling" or "supernode"), optimizer settings and decoding options.

    After ``fit(X, y)`` the trained model lives on ``model_`` and
    ``checkpoint_``; ``predict`` returns one generated interpretation per
    query and ``score`` is corpus BLEU-4 in [0, 1].
    """

    def __init__(
        self,
        word_dim: int = 300,
        hidden: int = 300,
        hop_size: int = 6,
        ge_method: str = "pooling",
        share_direction_weights: bool = False,
        undirected: bool = False,
        attention: str = "additive",
        lr: float = 0.001,
        batch_size: int = 30,
        dropout: float = 0.5,
        clip_norm: float = 20.0,
        epochs: int = 20,
        patience: int = 5,
        min_freq: int = 1,
        seed: int = 0,
        beam_size: int = 5,
        max_decode_len: int = 60,
        length_norm_alpha: float = 0.0,
        precision: str = "float32",
        pretrained_vectors: str | None = None,
    ):
        self.word_dim = word_dim
        self.hidden = hidden
        self.hop_size = hop_size
        self.ge_method = ge_method
        self.share_direction_weights = share_direction_weights
        self.undirected = undirected
        self.attention = attention
        self.lr = lr
        self.batch_size = batch_size
        self.dropout = dropout
        self.clip_norm = clip_norm
        self.epochs = epochs
        self.patience = patience
        self.min_freq = min_freq
        self.seed = seed
        self.beam_size = beam_size
        self.max_decode_len = max_decode_len
        self.length_norm_alpha = length_norm_alpha
        self.precision = precision
        self.pretrained_vectors = pretrained_vectors

    def _train_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, X, y, dev_X=None, dev_y=None) -> "SqlToTextGenerator":
        X, y = check_paired_text(X, y)
        pairs = [ExamplePair(sql, tokenize_text(text)) for sql, text in zip(X, y)]
        dev_pairs: list[ExamplePair] = []
        if dev_X is not None and dev_y is not None:
            dev_X, dev_y = check_paired_text(dev_X, dev_y)
            dev_pairs = [ExamplePair(s, tokenize_text(t)) for s, t in zip(dev_X, dev_y)]
        result = train(self._train_config(), pairs, dev_pairs)
        self.model_ = result.model
        self.checkpoint_ = result.checkpoint
        self.metrics_ = result.metrics
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise RuntimeError("this SqlToTextGenerator instance is not fitted yet")

    def predict(self, X) -> list[str]:
        self._require_fitted()
        X = check_sql_list(X)
        return [" ".join(self.model_.generate(sql, beam_size=self.beam_size)) for sql in X]

    def score(self, X, y) -> float:
        self._require_fitted()
        X, y = check_paired_text(X, y)
        hyps = [h.split() for h in self.predict(X)]
        refs = [list(tokenize_text(t)) for t in y]
        return bleu4_corpus(hyps, refs).corpus_bleu4

    def save(self, path) -> None:
        self._require_fitted()
        save_checkpoint(path, self.checkpoint_)

    @classmethod
    def from_checkpoint(cls, path) -> "SqlToTextGenerator":
        ckpt = load_checkpoint(path)
        known = set(cls._param_names())
        est = cls(**{k: v for k, v in ckpt.config.items() if k in known})
        est.model_ = restore_model(ckpt)
        est.checkpoint_ = ckpt
        est.metrics_ = []
        return est


class TemplateInterpreter(_ParamsMixin):
    """Rule-based baseline with the same predict surface; fit is a no-op."""

    def __init__(self):
        pass

    def fit(self, X=None, y=None) -> "TemplateInterpreter":
        return self

    def predict(self, X) -> list[str]:
        X = check_sql_list(X)
        return [template_interpret(parse(sql)) for sql in X]

    def score(self, X, y) -> float:
        X, y = check_paired_text(X, y)
        hyps = [h.split() for h in self.predict(X)]
        refs = [list(tokenize_text(t)) for t in y]
        return bleu4_corpus(hyps, refs).corpus_bleu4
