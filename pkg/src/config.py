"""
This module handles run configuration: loading settings from a YAML file (optionally on
top of a named preset), validating every key against a typed schema, applying
`section.key=value` overrides, building the per-module configuration objects, and writing
the effective configuration next to every output for provenance.
"""

import logging
import types
import typing
from collections.abc import Iterable, Mapping
from dataclasses import asdict
from pathlib import Path
from typing import Any, ClassVar

import yaml

from decode import DecodeConfig
from errors import ConfigError
from losses import LossWeights
from model import ModelConfig
from train import TrainConfig

# Default configuration file, looked up in the working directory.
CONFIG_FILE = "config.yaml"

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"

PRESETS = {
    name: PRESET_DIR / f"{name}.yaml"
    for name in (
        "ar_desk",
        "cmlm_desk",
        "ctc_desk",
        "ctc_cmlm_desk",
        "orthros_cmlm_desk",
        "orthros_ctc_desk",
        "mt_desk",
        "paper_scale",
    )
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


class RunConfig:
    """
    Merged view of the model, train, loss and decode settings. Only explicitly set keys
    are stored; everything else takes the dataclass defaults when the module
    configurations are built.
    """

    _config_types: ClassVar[dict[str, dict[str, Any]]] = {
        "model": {
            "vocab_size": int,
            "src_vocab_size": int,
            "frame_dim": int,
            "encoder_kind": str,
            "n_enc_blocks": int,
            "n_dec_blocks": int,
            "n_ar_blocks": int,
            "n_text_blocks": int,
            "d_model": int,
            "d_ff": int,
            "n_heads": int,
            "conv_kernel": int,
            "max_target_len": int,
            "dropout": float,
            "use_cmlm_decoder": bool,
            "use_ctc_head": bool,
            "use_length_predictor": bool,
            "use_text_encoder": bool,
            "use_relative_pe": bool | None,
            "share_ar_embedding": bool,
        },
        "train": {
            "epochs": int,
            "batch_size": int,
            "lr_constant": float,
            "warmup_steps": int,
            "adam_beta1": float,
            "adam_beta2": float,
            "adam_eps": float,
            "clip_norm": float,
            "seed": int,
            "objective": str,
            "n_avg": int,
            "prefetch": int,
        },
        "loss": {
            "length": float,
            "ar": float,
            "mt": float,
            "ctc": float,
            "n_masks": int,
            "label_smoothing": float,
            "p_thres": float,
        },
        "decode": {
            "algorithm": str,
            "iterations": int,
            "length_beam": int,
            "beam_size": int,
            "p_thres": float,
            "dedup": bool,
            "update_all": bool,
            "rescore": bool,
            "max_len": int,
        },
    }

    def __init__(self, values: Mapping | None = None):
        self.log_level = "INFO"
        self.sections: dict[str, dict[str, Any]] = {section: {} for section in self._config_types}
        if values:
            self.update(values)

    def _convert(self, section: str, key: str, value: Any) -> Any:
        """
        Validates and converts one value to the type declared in the schema.

        Raises:
            ConfigError: If the key is unknown or the value cannot be converted.
        """
        if key not in self._config_types[section]:
            raise ConfigError(f"Unknown config key '{section}.{key}'.")
        expected = self._config_types[section][key]
        optional = isinstance(expected, types.UnionType) and type(None) in typing.get_args(expected)
        if optional:
            if value is None or str(value).lower() in ("null", "none", "auto"):
                return None
            expected = next(t for t in typing.get_args(expected) if t is not type(None))

        # Special handling for boolean values.
        if expected is bool:
            text = str(value).lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ConfigError(f"Value '{value}' for '{section}.{key}' is not a boolean.")
        if expected is int and (isinstance(value, bool) or (isinstance(value, float) and not value.is_integer())):
            raise ConfigError(f"Value '{value}' for '{section}.{key}' is not an integer.")
        try:
            return expected(value)
        except (ValueError, TypeError) as e:
            raise ConfigError(
                f"Value '{value}' for '{section}.{key}' could not be converted to {expected.__name__}: {e}"
            ) from e

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in self._config_types:
            raise ConfigError(f"Unknown config section '{section}'; expected one of {list(self._config_types)}.")
        self.sections[section][key] = self._convert(section, key, value)

    def update(self, data: Mapping) -> None:
        """Merges a nested mapping {section: {key: value}, "log_level": str} into the configuration."""
        for section, entries in data.items():
            if section == "log_level":
                self.log_level = str(entries)
                continue
            if section not in self._config_types:
                raise ConfigError(f"Unknown config section '{section}'.")
            if entries is None:
                continue
            if not isinstance(entries, Mapping):
                raise ConfigError(f"Config section '{section}' must be a mapping.")
            for key, value in entries.items():
                self.set(section, key, value)

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        """
        Applies `section.key=value` overrides; values are parsed as YAML scalars.

        Raises:
            ConfigError: If an override is malformed or names an unknown key.
        """
        for override in overrides:
            name, sep, raw = override.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"Override '{override}' is not of the form section.key=value.")
            try:
                value = yaml.safe_load(raw) if raw.strip() else raw
            except yaml.YAMLError as e:
                raise ConfigError(f"Override '{override}' has an unparsable value: {e}") from e
            self.set(section, key.strip(), value)

    @classmethod
    def load(
        cls,
        path: str | Path | None = None,
        overrides: Iterable[str] = (),
        preset: str | None = None,
    ) -> "RunConfig":
        """
        Builds a configuration from (in increasing priority) the defaults, a preset, a YAML
        file and overrides, then validates it.

        Raises:
            ConfigError: On unknown presets, unreadable files or schema violations.
        """
        run_config = cls()
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"Unknown preset '{preset}'; expected one of {sorted(PRESETS)}.")
            run_config.update(_read_yaml(PRESETS[preset]))
            logging.info(f"Loaded preset '{preset}'.")
        if path is not None:
            run_config.update(_read_yaml(path))
            logging.info(f"Configuration loaded from {path}.")
        run_config.apply_overrides(overrides)
        run_config.validate()
        return run_config

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.sections["model"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.sections["train"])

    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.sections["loss"])

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(**self.sections["decode"])

    def validate(self) -> None:
        """Builds every module configuration so that all invariants are checked before any work starts."""
        self.model_config()
        self.train_config()
        self.loss_weights()
        self.decode_config()

    def to_dict(self) -> dict:
        return {
            "log_level": self.log_level,
            "model": self.model_config().to_dict(),
            "train": asdict(self.train_config()),
            "loss": asdict(self.loss_weights()),
            "decode": asdict(self.decode_config()),
        }

    def dump(self, path: str | Path) -> None:
        """Writes the effective merged configuration as YAML."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


def _read_yaml(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Configuration file {path} not found.") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Error loading configuration file {path}: {e}") from e
    if data is None:
        logging.info(f"Configuration file {path} is empty.")
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"Configuration file {path} must contain a mapping of sections.")
    return dict(data)
