"""Key=value run configuration files and reproducibility manifests."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import ConfigError

CONFIG_ENV = "HEOG_CONFIG"


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load_config(path: str | os.PathLike | None) -> dict[str, str]:
    """Read a config file, or the file named by ``HEOG_CONFIG`` when ``path`` is None.

    A manifest JSON is accepted too; its ``config`` block is replayed.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
        if path is None:
            return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: {e}") from None
        cfg = data.get("config", data)
        return {k: _flatten(v) for k, v in cfg.items()}
    return parse_config_text(text, str(p))


def _flatten(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seed, inputs: dict, outputs) -> Path:
    """Record what ran and checksum every output file (paths relative to the manifest)."""
    path = Path(path)
    base = path.parent
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "seed": seed,
        "inputs": {k: str(v) for k, v in sorted(inputs.items())},
        "outputs": {
            (str(p.relative_to(base)) if p.is_relative_to(base) else str(p)): sha256_file(p)
            for p in sorted(Path(o) for o in outputs)
        },
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path
