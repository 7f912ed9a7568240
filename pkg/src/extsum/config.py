"""Run configuration: hyperparameters, validation, key=value file parsing."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from extsum.errors import PipelineError


@dataclass
class RunConfig:
    word_dim: int = 150
    sent_dim: int = 300
    hidden_dim: int = 750
    kernel_widths: tuple = (1, 2, 3, 4, 5, 6, 7)
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    batch_size: int = 20
    dropout: float = 0.5
    init_range: float = 0.05
    noise_k: int = 20
    top_k: int = 3
    epochs: int = 20
    min_count: int = 1
    max_sentences: int = 30
    max_words: int = 50
    beam_width: int = 5
    max_summary_len: int = 30
    clip_norm: float = 5.0
    oov_k: int = 10
    oov_tau: float = 0.6
    attention_feedback: bool = False
    seed: int = 13

    def __post_init__(self):
        self.kernel_widths = tuple(int(c) for c in self.kernel_widths)
        self.validate()

    def validate(self):
        positive_ints = ["word_dim", "sent_dim", "hidden_dim", "batch_size",
                         "noise_k", "top_k", "epochs", "min_count",
                         "max_sentences", "max_words", "beam_width",
                         "max_summary_len", "oov_k"]
        for name in positive_ints:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise PipelineError("parse-error",
                                    f"config {name}={v!r}: positive integer required")
        if not self.kernel_widths or any(c < 1 for c in self.kernel_widths):
            raise PipelineError("parse-error",
                                f"kernel_widths {self.kernel_widths}: widths >= 1")
        if not 0.0 < self.lr < 1.0:
            raise PipelineError("parse-error", f"lr {self.lr} outside (0,1)")
        for name in ["beta1", "beta2"]:
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise PipelineError("parse-error", f"{name}={v} outside [0,1)")
        if not 0.0 <= self.dropout < 1.0:
            raise PipelineError("parse-error",
                                f"dropout {self.dropout} outside [0,1)")
        if self.init_range <= 0 or self.clip_norm <= 0 or self.oov_tau < 0:
            raise PipelineError("parse-error", "scale parameters must be positive")
        if not isinstance(self.attention_feedback, bool):
            raise PipelineError("parse-error",
                                f"attention_feedback={self.attention_feedback!r}")

    @property
    def max_kernel_width(self) -> int:
        return max(self.kernel_widths)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise PipelineError("parse-error", f"unknown config key {name!r}")
    raw = raw.strip()
    try:
        if name == "kernel_widths":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if _FIELD_TYPES[name] in ("bool", bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if _FIELD_TYPES[name] in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise PipelineError("parse-error", f"config {name}={raw!r} unparseable")


def load_config(path: str | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """key=value lines (# comments allowed); overrides win over the file."""
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise PipelineError("parse-error",
                                        f"{path}:{lineno}: expected key=value")
                key, raw = line.split("=", 1)
                values[key.strip()] = _parse_value(key.strip(), raw)
    for item in overrides or []:
        if "=" not in item:
            raise PipelineError("parse-error", f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    return RunConfig(**values)
