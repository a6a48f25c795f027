from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class Net1dConfig:
    """Architecture hyperparameters of the Net1D beat classifier.

    ``ratio`` scales every stage's channel count (``int(filters * ratio)``);
    at the default 1.0 it has no effect.
    """

    in_channels: int = 1
    base_filters: int = 32
    ratio: float = 1.0
    filter_list: tuple[int, ...] = (16, 32, 32, 40, 40, 64, 64)
    block_list: tuple[int, ...] = (2, 2, 2, 2, 2, 2, 2)
    kernel_size: int = 8
    stride: int = 1
    groups_width: int = 4
    n_classes: int = 2
    dropout_rate: float = 0.5
    se_reduction: int = 2
    beat_length: int = 200

    def __post_init__(self) -> None:
        object.__setattr__(self, "filter_list", tuple(int(v) for v in self.filter_list))
        object.__setattr__(self, "block_list", tuple(int(v) for v in self.block_list))
        self.validate()

    def validate(self) -> None:
        if len(self.filter_list) != len(self.block_list):
            raise ValueError("filter_list and block_list must have the same length")
        if self.n_classes != 2:
            raise ValueError("n_classes must be 2")
        if self.in_channels < 1 or self.base_filters < 1:
            raise ValueError("in_channels and base_filters must be positive")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.groups_width < 1:
            raise ValueError("groups_width must be >= 1")
        for c in (self.base_filters, *self.filter_list):
            if c % self.groups_width:
                raise ValueError(f"channel count {c} not divisible by groups_width {self.groups_width}")
            if c % self.se_reduction:
                raise ValueError(f"channel count {c} not divisible by se_reduction {self.se_reduction}")
        if any(b < 1 for b in self.block_list):
            raise ValueError("every stage needs at least one block")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.se_reduction < 1:
            raise ValueError("se_reduction must be >= 1")
        if self.beat_length < 1:
            raise ValueError("beat_length must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_list"] = list(self.filter_list)
        d["block_list"] = list(self.block_list)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Net1dConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown Net1dConfig keys: {sorted(unknown)}")
        return cls(**d)


def reduced_config(**overrides) -> Net1dConfig:
    """Small two-stage network used for gradient checks and desk-scale runs."""
    kw = dict(
        base_filters=4,
        filter_list=(4, 4),
        block_list=(1, 1),
        beat_length=16,
    )
    kw.update(overrides)
    return Net1dConfig(**kw)


def stage_lengths(config: Net1dConfig, length: int | None = None) -> list[int]:
    """Temporal length after the stem and after each stage.

    Every stage's first block max-pools with window 2 after right
    zero-padding odd inputs by one sample, i.e. ``ceil(T / 2)``.
    """
    t = config.beat_length if length is None else length
    out = [t]
    for _ in config.filter_list:
        t = (t + 1) // 2
        out.append(t)
    return out
