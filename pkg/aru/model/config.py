import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any, Optional

from aru.adaptive import AruConfig, AruStateMismatchError
from aru.data.data import Head

logger = logging.getLogger(__name__)

#: rnn units | decoder hidden sizes
PRESETS: dict[str, tuple[int, tuple[int, int, int]]] = {
    "small": (8, (8, 6, 6)),
    "medium": (16, (16, 15, 10)),
    "large": (50, (32, 20, 15)),
}


@dataclass(frozen=True)
class CategoricalFeature:
    name: str
    cardinality: int
    embedding_dim: int

    def __post_init__(self) -> None:
        if self.cardinality < 1 or self.embedding_dim < 1:
            raise ValueError(
                f"categorical feature {self.name} needs a positive cardinality and embedding dim, "
                f"got {self.cardinality} and {self.embedding_dim}"
            )


@dataclass(frozen=True)
class FeatureSchema:
    """The model inputs of every time step, in the order they are concatenated:
    embedding rows of each categorical feature, then the continuous features."""

    categorical: tuple[CategoricalFeature, ...] = ()
    continuous: tuple[str, ...] = ()

    @staticmethod
    def build(
        cardinalities: Mapping[str, int],
        continuous: Iterable[str],
        max_embedding_dim: int = 4,
        embedding_dims: Optional[Mapping[str, int]] = None,
    ) -> "FeatureSchema":
        """
        :param cardinalities: categorical feature name to vocabulary size, in input order
        :param continuous:
        :param max_embedding_dim: cap on the default ``ceil(cardinality / 2)``
        :param embedding_dims: per feature overrides of the default
        :return:
        """
        embedding_dims = embedding_dims or {}
        return FeatureSchema(
            categorical=tuple(
                CategoricalFeature(
                    name=name,
                    cardinality=card,
                    embedding_dim=embedding_dims.get(
                        name, min(max_embedding_dim, math.ceil(card / 2))
                    ),
                )
                for name, card in cardinalities.items()
            ),
            continuous=tuple(continuous),
        )

    @property
    def categorical_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.categorical)

    @property
    def embedding_width(self) -> int:
        return sum(f.embedding_dim for f in self.categorical)

    @property
    def input_width(self) -> int:
        """Dv, the width of the embedded input vector of one time step."""
        return self.embedding_width + len(self.continuous)

    def to_dict(self) -> dict[str, Any]:
        return {
            "categorical": [
                {"name": f.name, "cardinality": f.cardinality, "embedding_dim": f.embedding_dim}
                for f in self.categorical
            ],
            "continuous": list(self.continuous),
        }

    @staticmethod
    def from_dict(record: Mapping[str, Any]) -> "FeatureSchema":
        return FeatureSchema(
            categorical=tuple(CategoricalFeature(**f) for f in record["categorical"]),
            continuous=tuple(record["continuous"]),
        )


@dataclass(frozen=True)
class ModelConfig:
    rnn_units: int
    hidden_sizes: tuple[int, ...]
    encoder_length: int
    horizon: int
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    head: Head = Head.BASELINE
    ff2_sizes: tuple[int, ...] = (10, 10)
    aru: Optional[AruConfig] = None
    #: ARU-Direct emits sigma = sqrt(max(a, floor))
    direct_variance_floor: float = 1e-3

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))
        object.__setattr__(self, "ff2_sizes", tuple(int(s) for s in self.ff2_sizes))
        if len(self.hidden_sizes) != 3:
            raise ValueError(
                f"the decoder has exactly three layers, got hidden_sizes={self.hidden_sizes}"
            )
        if len(self.ff2_sizes) != 2:
            raise ValueError(f"FF2 has exactly two layers, got ff2_sizes={self.ff2_sizes}")
        for name, value in (
            ("rnn_units", self.rnn_units),
            ("encoder_length", self.encoder_length),
            ("horizon", self.horizon),
            *((f"hidden_sizes[{i}]", s) for i, s in enumerate(self.hidden_sizes)),
            *((f"ff2_sizes[{i}]", s) for i, s in enumerate(self.ff2_sizes)),
        ):
            if value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if self.head is not Head.BASELINE:
            if self.aru is None:
                raise ValueError(f"the {self.head.name} head requires an ARU configuration")
            if self.aru.feature_dim != self.hidden_size:
                raise AruStateMismatchError(
                    f"ARU feature_dim {self.aru.feature_dim} does not match the decoder output "
                    f"width {self.hidden_size}"
                )
        if not self.direct_variance_floor > 0.0:
            raise ValueError("direct_variance_floor must be > 0")

    @property
    def hidden_size(self) -> int:
        """H, the decoder output width."""
        return self.hidden_sizes[2]

    @property
    def uses_aru(self) -> bool:
        return self.head is not Head.BASELINE

    @property
    def n_banks(self) -> int:
        return 0 if self.aru is None else self.aru.n_banks

    @staticmethod
    def from_preset(
        preset: str,
        encoder_length: int,
        horizon: int,
        schema: FeatureSchema,
        head: Head = Head.BASELINE,
        aging_factors: Iterable[float] = (1.0,),
        ridge: float = 1.0,
        resymmetrize_every: int = 1000,
        rnn_units: Optional[int] = None,
        hidden_sizes: Optional[Iterable[int]] = None,
        **kwargs: Any,
    ) -> "ModelConfig":
        """A preset architecture, optionally with its encoder or decoder widths replaced.

        :raises ValueError: for an unknown preset
        """
        try:
            preset_units, preset_sizes = PRESETS[preset.lower()]
        except KeyError:
            raise ValueError(
                f"unknown model preset {preset}. Choose from {list(PRESETS)}"
            ) from None
        units = preset_units if rnn_units is None else rnn_units
        sizes = tuple(preset_sizes if hidden_sizes is None else hidden_sizes)
        aru = (
            AruConfig(
                feature_dim=sizes[-1],
                aging_factors=tuple(aging_factors),
                ridge=ridge,
                resymmetrize_every=resymmetrize_every,
            )
            if head is not Head.BASELINE
            else None
        )
        return ModelConfig(
            rnn_units=units,
            hidden_sizes=sizes,
            encoder_length=encoder_length,
            horizon=horizon,
            schema=schema,
            head=head,
            aru=aru,
            **kwargs,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "rnn_units": self.rnn_units,
            "hidden_sizes": list(self.hidden_sizes),
            "encoder_length": self.encoder_length,
            "horizon": self.horizon,
            "schema": self.schema.to_dict(),
            "head": self.head.name,
            "ff2_sizes": list(self.ff2_sizes),
            "aru": None if self.aru is None else self.aru.to_dict(),
            "direct_variance_floor": self.direct_variance_floor,
        }

    @staticmethod
    def from_dict(record: Mapping[str, Any]) -> "ModelConfig":
        return ModelConfig(
            rnn_units=record["rnn_units"],
            hidden_sizes=tuple(record["hidden_sizes"]),
            encoder_length=record["encoder_length"],
            horizon=record["horizon"],
            schema=FeatureSchema.from_dict(record["schema"]),
            head=Head[record["head"]],
            ff2_sizes=tuple(record["ff2_sizes"]),
            aru=None if record["aru"] is None else AruConfig(**record["aru"]),
            direct_variance_floor=record["direct_variance_floor"],
        )
