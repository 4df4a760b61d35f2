"""Campaign configuration: defaults, validation, and flat config-file parsing.

The config file is a flat ``key = value`` text format (``#`` comments), so
benchmark configurations can be checked in and reproduced; command-line
flags override file values.  Lists are comma separated.  Integer values
accept hex (``0xDEADBEEF``) so constants can be written the way the target
checks them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .sched import SCHEDULER_NAMES

# AFL-flavoured interesting constants: boundary values plus powers of two.
INTERESTING_DEFAULT = (
    0, 1, -1, 2, 4, 8, 16, 32, 64, 100, 127, -128, 128, 255, 256, 512,
    1024, 4096, 32767, -32768, 65535, 65536, 100663045, -100663046,
    2147483647, -2147483648, 4294967295,
)

MUTATOR_WEIGHTS_DEFAULT = {
    "bit_flip": 0.10,
    "byte_flip": 0.05,
    "arith": 0.30,
    "interesting": 0.25,
    "delete": 0.08,
    "duplicate": 0.07,
    "splice": 0.15,
}


class ConfigError(Exception):
    pass


@dataclass
class CampaignConfig:
    scheduler: str = "prescient"
    budget: int = 100_000
    rng_seed: int = 0
    cooldown_multiplier: float = 10.0
    mutator_weights: dict[str, float] = field(
        default_factory=lambda: dict(MUTATOR_WEIGHTS_DEFAULT)
    )
    interesting_extra: list[int] = field(default_factory=list)
    mutation_stack_max: int = 4
    max_input_len: int = 256
    fuel: int = 50_000
    stop_on_crash: bool = False
    # Paths; all optional, campaigns run fully in memory without them.
    cfg_path: str | None = None
    corpus_dir: str | None = None
    crashes_dir: str | None = None
    stats_path: str | None = None

    def validate(self) -> None:
        if self.scheduler not in SCHEDULER_NAMES:
            raise ConfigError(
                f"unknown scheduler {self.scheduler!r}; "
                f"expected one of {', '.join(sorted(SCHEDULER_NAMES))}"
            )
        for name, value in (
            ("budget", self.budget),
            ("cooldown_multiplier", self.cooldown_multiplier),
            ("mutation_stack_max", self.mutation_stack_max),
            ("max_input_len", self.max_input_len),
            ("fuel", self.fuel),
        ):
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be non-negative")
        for op, w in self.mutator_weights.items():
            if op not in MUTATOR_WEIGHTS_DEFAULT:
                raise ConfigError(f"unknown mutator {op!r}")
            if w < 0:
                raise ConfigError(f"mutator weight for {op!r} must be >= 0")
        if sum(self.mutator_weights.values()) <= 0:
            raise ConfigError("mutator weights sum to zero")

    def interesting_table(self) -> list[int]:
        table = list(INTERESTING_DEFAULT)
        for v in self.interesting_extra:
            if v not in table:
                table.append(v)
        return table


_INT_FIELDS = {"budget", "rng_seed", "mutation_stack_max", "max_input_len", "fuel"}
_FLOAT_FIELDS = {"cooldown_multiplier"}
_BOOL_FIELDS = {"stop_on_crash"}
_PATH_FIELDS = {"cfg_path", "corpus_dir", "crashes_dir", "stats_path"}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into a config-override dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _INT_FIELDS:
            out[key] = int(value, 0)
        elif key in _FLOAT_FIELDS:
            out[key] = float(value)
        elif key in _BOOL_FIELDS:
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif key == "interesting_extra":
            out[key] = [int(v.strip(), 0) for v in value.split(",") if v.strip()]
        elif key == "scheduler" or key in _PATH_FIELDS:
            out[key] = value
        elif key.startswith("mutator_weight_"):
            out.setdefault("mutator_weights", dict(MUTATOR_WEIGHTS_DEFAULT))
            out["mutator_weights"][key[len("mutator_weight_"):]] = float(value)
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> CampaignConfig:
    """Build a config from defaults, an optional file, and explicit overrides."""
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    known = {f.name for f in fields(CampaignConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    config = CampaignConfig(**values)
    config.validate()
    return config
