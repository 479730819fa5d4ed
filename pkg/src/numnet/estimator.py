"""scikit-learn style estimator wrapping the reader network."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from numnet import diffcore as dc
from numnet._validation import check_corpus, check_positive
from numnet.answer import Prediction, decode
from numnet.exceptions import CheckpointError, ContractError, OptimizerError
from numnet.metrics import MetricReport, evaluate
from numnet.model import Instance, ModelConfig, Vocabulary, forward, init_params, instance_loss, make_instance
from numnet.textnum import Corpus, trim

logger = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.8
    beta2: float = 0.999
    eps: float = 1e-7
    weight_decay: float = 1e-7
    clip_norm: float = 5.0
    ema_decay: float = 0.9999
    batch_size: int = 16
    epochs: int = 40
    train_passage_limit: int = 400
    train_question_limit: int = 50
    predict_passage_limit: int = 1000
    predict_question_limit: int = 100
    seed: int = 42
    eval_with_ema: bool = True
    dtype: str = "float32"


MODEL_FIELDS = tuple(f.name for f in fields(ModelConfig) if f.name != "vocab_size")
TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig))


class NumNet(BaseEstimator):
    """Numerically-aware reader with ``fit`` / ``predict`` / ``score``.

    Every constructor argument is a model or training hyperparameter; see
    :class:`~numnet.model.ModelConfig` and :class:`TrainConfig` for the
    meaning and defaults. ``fit`` accepts a :class:`~numnet.textnum.Corpus`
    (or a list of examples); ``predict`` returns one
    :class:`~numnet.answer.Prediction` per example.

    With ``warm_start=True`` a second ``fit`` call resumes at the next
    untrained epoch instead of reinitializing.
    """

    def __init__(
        self,
        hidden_dim=128,
        reasoning_steps=3,
        embed_dim=64,
        head_hidden=0,
        include_question_numbers=True,
        enable_greater_edges=True,
        enable_lower_equal_edges=True,
        use_gnn=True,
        passage_preferred=True,
        append_hundred=True,
        max_nonzero_signs=3,
        max_span_len=8,
        lr=5e-4,
        beta1=0.8,
        beta2=0.999,
        eps=1e-7,
        weight_decay=1e-7,
        clip_norm=5.0,
        ema_decay=0.9999,
        batch_size=16,
        epochs=40,
        train_passage_limit=400,
        train_question_limit=50,
        predict_passage_limit=1000,
        predict_question_limit=100,
        seed=42,
        eval_with_ema=True,
        dtype="float32",
        warm_start=False,
    ):
        self.hidden_dim = hidden_dim
        self.reasoning_steps = reasoning_steps
        self.embed_dim = embed_dim
        self.head_hidden = head_hidden
        self.include_question_numbers = include_question_numbers
        self.enable_greater_edges = enable_greater_edges
        self.enable_lower_equal_edges = enable_lower_equal_edges
        self.use_gnn = use_gnn
        self.passage_preferred = passage_preferred
        self.append_hundred = append_hundred
        self.max_nonzero_signs = max_nonzero_signs
        self.max_span_len = max_span_len
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.ema_decay = ema_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.train_passage_limit = train_passage_limit
        self.train_question_limit = train_question_limit
        self.predict_passage_limit = predict_passage_limit
        self.predict_question_limit = predict_question_limit
        self.seed = seed
        self.eval_with_ema = eval_with_ema
        self.dtype = dtype
        self.warm_start = warm_start

    # -- configuration -----------------------------------------------------

    def model_config(self, vocab_size: int | None = None) -> ModelConfig:
        kw = {name: getattr(self, name) for name in MODEL_FIELDS}
        if vocab_size is None:
            vocab_size = len(self.vocab_) if hasattr(self, "vocab_") else 0
        return ModelConfig(vocab_size=vocab_size, **kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in TRAIN_FIELDS})

    def _validate_params(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        for name in ("lr", "clip_norm", "batch_size", "train_passage_limit", "train_question_limit",
                     "predict_passage_limit", "predict_question_limit"):
            check_positive(name, getattr(self, name))
        check_positive("epochs", self.epochs, allow_zero=True)
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")

    # -- training ----------------------------------------------------------

    def _instances(self, corpus: Corpus, with_supervision: bool) -> list[Instance]:
        if with_supervision:
            limits = (self.train_passage_limit, self.train_question_limit)
        else:
            limits = (self.predict_passage_limit, self.predict_question_limit)
        config = self.config_
        return [
            make_instance(trim(ex, *limits), self.vocab_, config, with_supervision)
            for ex in corpus.examples
        ]

    def _initialize(self, corpus: Corpus):
        self.vocab_ = Vocabulary.build(corpus.examples)
        self.config_ = self.model_config(len(self.vocab_))
        self.params_ = init_params(self.config_, self.seed, _DTYPES[self.dtype])
        self.epoch_ = 0
        self.history_ = []

    def fit(self, X, y=None, dev=None, checkpoint_path=None, on_epoch_end: Callable | None = None):
        """Train for ``epochs`` epochs (minus any already completed under warm start).

        ``y`` is ignored; gold answers travel with the examples. When
        ``checkpoint_path`` is given a checkpoint is written after every
        epoch (and once before training when no epoch runs).
        """
        self._validate_params()
        corpus = check_corpus(X)
        if not (self.warm_start and hasattr(self, "params_")):
            self._initialize(corpus)
        self.config_ = self.model_config(len(self.vocab_))
        instances = [i for i in self._instances(corpus, True) if not i.supervision.is_empty()]
        skipped = len(corpus) - len(instances)
        if skipped:
            logger.info("skipping %d examples without derivable supervision", skipped)
        if not instances:
            raise ContractError("no trainable example: no gold answer could be matched to a candidate")
        self.n_trainable_ = len(instances)

        if self.epoch_ >= self.epochs and checkpoint_path is not None:
            self.save(checkpoint_path)
        cfg = self.train_config()
        while self.epoch_ < self.epochs:
            epoch = self.epoch_
            order = dc.rng(self.seed, dc.SHUFFLE_STREAM, epoch).permutation(len(instances))
            losses = []
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [instances[i] for i in order[start:start + cfg.batch_size]]
                losses.append(self._train_batch(batch, cfg, epoch, b))
            self.epoch_ = epoch + 1
            record = {"epoch": self.epoch_, "loss": float(np.mean(losses))}
            if dev is not None:
                report = self.evaluate(dev)
                record.update(dev_em=report.em, dev_f1=report.f1)
            self.history_.append(record)
            logger.info("epoch %(epoch)d loss %(loss).6f", record)
            if checkpoint_path is not None:
                self.save(checkpoint_path)
            if on_epoch_end is not None:
                on_epoch_end(self, record)
        return self

    def _train_batch(self, batch, cfg: TrainConfig, epoch: int, index: int) -> float:
        params = self.params_
        total = sum(instance_loss(inst, params, self.config_) for inst in batch) / len(batch)
        value = total.item()
        if not math.isfinite(value):
            raise OptimizerError(f"non-finite loss in epoch {epoch + 1}, batch {index}")
        grads = dc.clip_gradients(dc.backward(total, params), cfg.clip_norm)
        dc.adam_step(params, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
        dc.ema_update(params, cfg.ema_decay)
        return value

    # -- inference ---------------------------------------------------------

    def _use_ema(self) -> bool:
        return bool(self.eval_with_ema and self.params_.shadow)

    def predict(self, X) -> list[Prediction]:
        check_is_fitted(self, "params_")
        corpus = check_corpus(X)
        instances = self._instances(corpus, False)
        answer_cfg = self.config_.answer_config()
        use_ema = self._use_ema()
        if use_ema:
            dc.ema_swap_in(self.params_)
        try:
            with torch.no_grad():
                return [decode(forward(inst, self.params_, self.config_), inst.example, answer_cfg)
                        for inst in instances]
        finally:
            if use_ema:
                dc.ema_swap_out(self.params_)

    def predict_records(self, X) -> list[dict]:
        corpus = check_corpus(X)
        return [p.to_record(ex.query_id) for p, ex in zip(self.predict(corpus), corpus.examples)]

    def evaluate(self, X) -> MetricReport:
        corpus = check_corpus(X)
        return evaluate(self.predict_records(corpus), corpus)

    def score(self, X, y=None) -> float:
        """Exact match over ``X``."""
        return self.evaluate(X).em

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        meta = {
            "estimator": self.get_params(),
            "vocab": self.vocab_.words,
            "epoch": self.epoch_,
            "history": self.history_,
        }
        dc.save_checkpoint(path, self.params_, meta, dtype=self.dtype)

    @classmethod
    def load(cls, path, **overrides) -> "NumNet":
        """Restore an estimator; ``overrides`` may change non-shape settings
        such as ``epochs`` or ``eval_with_ema``."""
        store, meta = dc.load_checkpoint(path)
        try:
            est = cls(**meta["estimator"])
        except (KeyError, TypeError) as err:
            raise CheckpointError(f"{path}: checkpoint metadata is incompatible") from err
        shape_fields = {"hidden_dim", "embed_dim", "head_hidden"}
        clash = sorted(k for k in overrides if k in shape_fields and overrides[k] != getattr(est, k))
        if clash:
            raise CheckpointError(f"{path}: checkpoint shapes do not match requested {', '.join(clash)}")
        est.set_params(**overrides)
        est.vocab_ = Vocabulary(meta["vocab"])
        est.config_ = est.model_config(len(est.vocab_))
        expected = init_params(est.config_, est.seed, torch.float64)
        for name, p in expected.items():
            if name not in store or tuple(store[name].shape) != tuple(p.shape):
                raise CheckpointError(f"{path}: parameter {name!r} missing or mis-shaped")
        est.params_ = store if store.dtype == _DTYPES[est.dtype] else store.to(_DTYPES[est.dtype])
        est.epoch_ = int(meta["epoch"])
        est.history_ = list(meta.get("history", []))
        return est
