"""
Run configuration for advbench.

Settings resolve in three layers: DEFAULT_SETTINGS, then an optional
flat HCL config file (``key = value`` lines), then explicit command-line
flags. Environment variables are never consulted.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

from ..errors import ConfigError, MissingFieldError
from .defaults import ATTACK_METHODS, DEFAULT_SETTINGS, LIST_SETTINGS, SEED_OFFSETS, SWEEP_KINDS

logger = logging.getLogger(__name__)


class RunConfig:
    """
    Resolved settings of one CLI run.

    Values are coerced to the type of their default on every set(), so a
    RunConfig only ever holds well-typed values. Domain checks that depend
    on the subcommand happen in validate().
    """

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        """
        Args:
            values: Settings layered over DEFAULT_SETTINGS
        """
        self._settings: Dict[str, Any] = {
            key: list(value) if isinstance(value, list) else value
            for key, value in DEFAULT_SETTINGS.items()
        }
        for key, value in (values or {}).items():
            self.set(key, value)

    @classmethod
    def resolve(
        cls,
        config_file: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Build a config from defaults, a config file and flag overrides.

        Args:
            config_file: Optional path to a flat HCL settings file
            overrides: Flag values; None entries are ignored

        Returns:
            Resolved RunConfig

        Raises:
            ConfigError: If the file is unreadable, malformed or holds an
                unknown or ill-typed key
        """
        config = cls()
        if config_file:
            for key, value in cls.load_file(config_file).items():
                config.set(key, value)
            logger.info(f"Loaded settings from {config_file}")
        for key, value in (overrides or {}).items():
            if value is not None:
                config.set(key, value)
        return config

    @staticmethod
    def load_file(path: Union[str, Path]) -> Dict[str, Any]:
        """
        Parse a flat HCL settings file.

        Single-element lists are unwrapped (hcl2 wraps scalar values in
        lists).

        Raises:
            ConfigError: If the file is missing or cannot be parsed
        """
        import hcl2

        try:
            with open(path, "r") as f:
                parsed = hcl2.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except Exception as e:
            raise ConfigError(f"Failed to parse config file {path}: {e}")

        return {key: RunConfig._unwrap(value) for key, value in parsed.items()}

    @staticmethod
    def _unwrap(value: Any) -> Any:
        """Unwrap a value that may be wrapped in a single-element list by hcl2."""
        if isinstance(value, list) and len(value) == 1:
            value = value[0]
        # newer hcl2 releases keep the quotes of string literals
        if isinstance(value, str) and len(value) >= 2 and value[0] == value[-1] == '"':
            return value[1:-1]
        if isinstance(value, list):
            return [RunConfig._unwrap(item) if isinstance(item, str) else item for item in value]
        return value

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a setting value.

        Args:
            key: Setting name
            default: Returned when the key is unknown

        Returns:
            Setting value or default
        """
        return self._settings.get(key, default)

    def set(self, key: str, value: Any):
        """
        Set a setting value, coerced to the type of its default.

        Raises:
            ConfigError: For an unknown key or a value of the wrong type
        """
        if key not in DEFAULT_SETTINGS:
            raise ConfigError(f"Unknown setting '{key}'")
        self._settings[key] = self._coerce(key, value)

    @staticmethod
    def _coerce(key: str, value: Any) -> Any:
        if key in LIST_SETTINGS:
            if isinstance(value, str):
                value = [part.strip() for part in value.split(",") if part.strip()]
            elif not isinstance(value, (list, tuple)):
                value = [value]
            return [RunConfig._coerce_scalar(key, item, LIST_SETTINGS[key]) for item in value]
        return RunConfig._coerce_scalar(key, value, type(DEFAULT_SETTINGS[key]))

    @staticmethod
    def _coerce_scalar(key: str, value: Any, kind: type) -> Any:
        try:
            if kind is bool:
                if isinstance(value, str) and value.lower() in ("true", "false"):
                    return value.lower() == "true"
                if isinstance(value, bool):
                    return value
                raise ValueError("expected true or false")
            if kind is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise ValueError("expected an integer")
                return int(float(value))
            if kind is float:
                if isinstance(value, bool):
                    raise ValueError("expected a number")
                return float(value)
            if isinstance(value, (list, dict)):
                raise ValueError("expected a single value")
            return str(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid value {value!r} for '{key}': {e}")

    def validate(self, required: Iterable[str] = ()) -> None:
        """
        Check required settings and value domains.

        Args:
            required: Settings the current subcommand cannot run without

        Raises:
            MissingFieldError: If a required setting is empty
            ConfigError: If a value is outside its domain; the message
                names the setting
        """
        for key in required:
            if self._settings[key] in ("", []):
                raise MissingFieldError(key)

        s = self._settings
        checks = [
            ("seed", s["seed"] >= 0, "must be >= 0"),
            ("jobs", s["jobs"] >= 1, "must be >= 1"),
            ("n", s["n"] >= 1, "must be >= 1"),
            ("epochs", s["epochs"] >= 0, "must be >= 0"),
            ("lr", s["lr"] > 0, "must be > 0"),
            ("batch", s["batch"] >= 1, "must be >= 1"),
            ("adv_eps", s["adv_eps"] >= 0, "must be >= 0"),
            ("adv_frac", 0.0 <= s["adv_frac"] <= 1.0, "must be in [0, 1]"),
            ("eps", s["eps"] >= 0, "must be >= 0"),
            ("iters", s["iters"] >= 1, "must be >= 1"),
            ("mu", s["mu"] >= 0, "must be >= 0"),
            ("beta1", 0.0 < s["beta1"] < 1.0, "must be in (0, 1)"),
            ("beta2", 0.0 < s["beta2"] < 1.0, "must be in (0, 1)"),
            ("delta", s["delta"] > 0, "must be > 0"),
            ("format", s["format"] in ("csv", "json"), "must be csv or json"),
            ("kind", s["kind"] in SWEEP_KINDS, f"must be one of {SWEEP_KINDS}"),
            ("k", s["k"] >= 1, "must be >= 1"),
            ("count", s["count"] >= 1, "must be >= 1"),
            ("ensemble_weights", all(w >= 0 for w in s["ensemble_weights"]), "must be >= 0"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(f"Setting '{key}' {message}, got {s[key]!r}")

        for key in ("attacks", "sweep_attacks"):
            unknown = [m for m in s[key] if m not in ATTACK_METHODS + ["clean"]]
            if unknown:
                raise ConfigError(f"Setting '{key}' names unknown methods {unknown}")
        weights = s["ensemble_weights"]
        if weights and len(s["sources"]) != len(weights):
            raise ConfigError(
                f"Setting 'ensemble_weights' has {len(weights)} entries "
                f"for {len(s['sources'])} sources"
            )

    def seed_for(self, purpose: str) -> int:
        """Derived seed: the top-level seed plus the purpose's fixed offset."""
        if purpose not in SEED_OFFSETS:
            raise ConfigError(f"Unknown seed purpose '{purpose}'")
        return self._settings["seed"] + SEED_OFFSETS[purpose]

    def attack_config(self):
        """
        The AttackConfig these settings describe.

        Raises:
            ConfigError: If the attack settings violate AttackConfig's invariants
        """
        from ..core.attacks import AttackConfig

        s = self._settings
        return AttackConfig(
            epsilon=s["eps"],
            iterations=s["iters"],
            momentum_decay=s["mu"],
            beta1=s["beta1"],
            beta2=s["beta2"],
            delta=s["delta"],
        )

    def as_dict(self) -> Dict[str, Any]:
        return {key: list(v) if isinstance(v, list) else v for key, v in self._settings.items()}

    def echo(self) -> Dict[str, str]:
        """Settings as "config.<key>" metadata entries for output artifacts."""
        return {f"config.{key}": self._format_value(value) for key, value in sorted(self._settings.items())}

    def dump(self) -> str:
        """Render every setting as a sorted ``key = value`` HCL line."""
        return "\n".join(
            f"{key} = {self._format_value(value)}" for key, value in sorted(self._settings.items())
        )

    @staticmethod
    def _format_value(value: Any) -> str:
        """Format a Python value as an HCL literal."""
        if isinstance(value, bool):
            return "true" if value else "false"
        elif isinstance(value, (int, float)):
            return repr(value)
        elif isinstance(value, str):
            escaped = value.replace("\\", "\\\\").replace('"', '\\"')
            return f'"{escaped}"'
        else:
            return json.dumps(value)
