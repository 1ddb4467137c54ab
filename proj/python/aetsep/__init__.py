"""Time-domain source separation with adaptive front ends."""

import json

from ._core import (
    AetsepError,
    ConfigError,
    DegenerateCorrelationError,
    InputTooShortError,
    IoError,
    NumericError,
    SeparationModel,
    ShapeError,
    analyze,
    bss_eval,
    config_keys,
    default_spec_text,
    evaluate_rows,
    loss_and_grad,
    stoi,
    synth_toy_corpus,
    synthesize,
    variants,
)

__all__ = [
    "AetsepError",
    "ConfigError",
    "DegenerateCorrelationError",
    "InputTooShortError",
    "IoError",
    "NumericError",
    "SeparationModel",
    "ShapeError",
    "analyze",
    "bss_eval",
    "config_keys",
    "config_text",
    "default_spec_text",
    "spec_text",
    "evaluate_rows",
    "loss_and_grad",
    "stoi",
    "synth_toy_corpus",
    "synthesize",
    "train",
    "variants",
]


def config_text(**overrides):
    """Renders keyword overrides as "key = value" config lines."""
    lines = []
    for key, value in overrides.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def spec_text(variant, **overrides):
    """Architecture text for `variant` with keyword overrides on the defaults."""
    fields = dict(
        line.split("=", 1) for line in default_spec_text(variant).splitlines() if line
    )
    for key, value in overrides.items():
        if key not in fields:
            raise ConfigError(f"unknown architecture key '{key}'")
        if isinstance(value, bool):
            value = int(value)
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        fields[key] = str(value)
    return "".join(f"{k}={v}\n" for k, v in fields.items())


def train(**overrides):
    """Trains with the given config overrides and returns the report dict."""
    from ._core import train_json

    return json.loads(train_json(config_text(**overrides)))
