"""Training loop, activation annealing schedules and experiment reports."""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .codec import RVQUANT, VQUANT, QuantConfig
from .exceptions import ConfigError, NumericError
from .network import accuracy, train_step
from .rng import RngStream

FULL_PRECISION = "F"


@dataclass(frozen=True)
class Phase:
    epochs: int
    config: QuantConfig = None

    @property
    def label(self):
        return FULL_PRECISION if self.config is None else self.config.label


def parse_phase_token(token):
    """``"F"`` -> full precision, ``"3:2"`` -> 3 bits / 2% rvquant.

    An optional third field selects the codec: ``"3:2:v"`` is vquant with a
    ReLU mask, ``"3:2:rv"`` is the default rvquant.
    """
    tok = token.strip()
    if tok.upper() == FULL_PRECISION:
        return None
    parts = tok.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"bad schedule token {token!r}")
    try:
        bits = int(parts[0])
        ratio = float(parts[1].rstrip("%")) / 100.0
    except ValueError:
        raise ConfigError(f"bad schedule token {token!r}") from None
    mode = RVQUANT
    if len(parts) == 3:
        mode = {"v": VQUANT, "vquant": VQUANT, "rv": RVQUANT, "rvquant": RVQUANT}.get(parts[2].lower())
        if mode is None:
            raise ConfigError(f"bad schedule token {token!r}: unknown codec {parts[2]!r}")
    try:
        return QuantConfig(bits, ratio, mode, "nonnegative")
    except ConfigError as exc:
        raise ConfigError(f"bad schedule token {token!r}: {exc}") from None


@dataclass(frozen=True)
class AnnealSchedule:
    """Contiguous training phases, each with its activation storage config."""

    phases: tuple

    def __post_init__(self):
        if not self.phases:
            raise ConfigError("schedule needs at least one phase")
        if any(p.epochs < 1 for p in self.phases):
            raise ConfigError("every phase needs at least one epoch")

    @classmethod
    def parse(cls, text, epochs):
        """Split ``epochs`` into equal phases, remainder to the last one.

        ``"F,3:2,2:0"`` over 30 epochs gives three 10-epoch phases.
        """
        tokens = [t for t in text.split(",")]
        if not tokens or any(not t.strip() for t in tokens):
            raise ConfigError(f"empty token in schedule {text!r}")
        configs = [parse_phase_token(t) for t in tokens]
        if epochs < len(configs):
            raise ConfigError(f"{epochs} epochs cannot cover {len(configs)} phases")
        base = epochs // len(configs)
        spans = [base] * len(configs)
        spans[-1] += epochs - base * len(configs)
        return cls(tuple(Phase(e, c) for e, c in zip(spans, configs)))

    @classmethod
    def constant(cls, config, epochs):
        return cls((Phase(epochs, config),))

    @property
    def epochs(self):
        return sum(p.epochs for p in self.phases)

    @property
    def notation(self):
        return ",".join(p.label for p in self.phases)

    def phase_of(self, epoch):
        """0-based phase index for 0-based ``epoch``."""
        end = 0
        for i, p in enumerate(self.phases):
            end += p.epochs
            if epoch < end:
                return i
        raise ConfigError(f"epoch {epoch} beyond schedule of {end} epochs")


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings.  ``lr_decay`` multiplies the learning rate at every phase boundary."""

    learning_rate: float
    batch_size: int
    epochs: int
    seed: int
    schedule: AnnealSchedule
    lr_decay: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.schedule.epochs != self.epochs:
            raise ConfigError(f"schedule covers {self.schedule.epochs} epochs, config has {self.epochs}")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "schedule": self.schedule.notation,
            "lr_decay": self.lr_decay,
        }


REPORT_FIELDS = [
    "epoch",
    "phase",
    "phase_label",
    "learning_rate",
    "loss",
    "acc",
    "eval_acc",
    "bits",
    "large_ratio",
    "mode",
    "stored_bytes",
    "full_bytes",
]


class ExperimentReport:
    """Per-epoch records plus run metadata; serialises to JSON and CSV."""

    def __init__(self, config=None, status="ok"):
        self.config = config or {}
        self.records = []
        self.status = status

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def to_dict(self):
        return {"status": self.status, "config": self.config, "records": self.records}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rec in self.records:
            writer.writerow({k: ("" if rec[k] is None else rec[k]) for k in REPORT_FIELDS})
        return buf.getvalue()


def train(net, X, y, config, eval_data=None):
    """Train ``net`` with mini-batch SGD under the annealing schedule.

    Returns ``(trained_net, report)``.  On divergence a :class:`NumericError`
    is raised whose ``report`` attribute holds the epochs completed so far.
    """
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    report = ExperimentReport(config.to_dict())
    shuffle = RngStream(config.seed).spawn(1)
    n = len(X)
    for epoch in range(config.epochs):
        phase = config.schedule.phase_of(epoch)
        cfg = config.schedule.phases[phase].config
        lr = config.learning_rate * config.lr_decay**phase
        order = shuffle.permutation(n)
        losses = []
        stored = full = 0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                net, loss, caches = train_step(net, X[idx], y[idx], cfg, lr)
                losses.append(loss)
                if start == 0:
                    stored, full = caches.stored_bytes, caches.full_bytes
        except NumericError as exc:
            report.status = "diverged"
            exc.report = report
            raise
        report.records.append(
            {
                "epoch": epoch + 1,
                "phase": phase,
                "phase_label": config.schedule.phases[phase].label,
                "learning_rate": lr,
                "loss": float(np.mean(losses)),
                "acc": accuracy(net, X, y),
                "eval_acc": accuracy(net, *eval_data) if eval_data is not None else None,
                "bits": cfg.bits if cfg else 32,
                "large_ratio": cfg.large_ratio if cfg else 0.0,
                "mode": cfg.mode if cfg else "full",
                "stored_bytes": stored,
                "full_bytes": full,
            }
        )
    return net, report
