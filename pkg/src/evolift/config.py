"""Training configuration and its flat TOML file form."""

import sys
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError, ContractError
from .model import ModelConfig
from .objectives import LossWeights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class TrainConfig:
    # data
    skeleton: str = "h36m17"
    train_path: str = ""
    eval_path: str = ""
    checkpoint_path: str = ""
    n_frames: int = 9
    # architecture
    blocks: int = 2
    heads: int = 2
    d_s: int = 32
    d_p: int = 16
    d_o: int = 16
    loops: int = 2
    max_frames: int = 243
    share_rr_weights: bool = True
    use_spr: bool = True
    use_recursion: bool = True
    # objective
    lambda_v: float = 0.2
    lambda_a: float = 0.2
    lambda_p: float = 0.1
    coord_mode: str = "norm"
    deep_supervision: bool = False
    # optimisation
    lr0: float = 0.001
    epochs: int = 300
    batch_size: int = 1
    seed: int = 0
    dropout: float = 0.0
    flip_augment: bool = True

    def __post_init__(self):
        if self.n_frames < 1 or self.n_frames % 2 != 1:
            raise ConfigError(f"n_frames must be odd and positive, got {self.n_frames}")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.loops < 1:
            raise ConfigError("loops must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.n_frames > self.max_frames:
            raise ConfigError("n_frames exceeds max_frames")
        # width/head divisibility and the loss weights are checked by these constructors
        self.model_config(n_joints=1)
        try:
            self.loss_weights()
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, n_joints):
        return ModelConfig(
            n_joints=n_joints,
            max_frames=self.max_frames,
            d_s=self.d_s,
            d_p=self.d_p,
            d_o=self.d_o,
            heads=self.heads,
            blocks=self.blocks,
            loops=self.loops,
            dropout=self.dropout,
            share_rr_weights=self.share_rr_weights,
        )

    def loss_weights(self):
        return LossWeights(self.lambda_v, self.lambda_a, self.lambda_p, self.coord_mode)

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, overrides):
        known = {f.name: f.type for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            clean[key] = _coerce(key, value, type(getattr(self, key)))
        return replace(self, **clean)

    @classmethod
    def from_dict(cls, data):
        return cls().with_overrides(data)

    def to_toml(self):
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, str):
                text = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
            else:
                text = repr(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_toml())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def _coerce(key, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "1", "yes", "false", "0", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {kind.__name__}") from None
