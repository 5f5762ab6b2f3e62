"""Run configuration, output records and the on-disk result cache."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .errors import ConfigInvalid, CorruptRecord

CACHE_ENV = "SCHOTTKY_ZETA_CACHE"

# keys that change how a run executes but never what it writes
EXECUTION_KEYS = ("threads", "out")

DEFAULTS: dict[str, Any] = {
    "group": "symmetric:p=2",
    "threads": 1,
    "out": "out",
    "operator": {"K": 40, "K_refined": 16, "M": None, "refine_above": 10.0},
    "pressure": {"K": 40, "n_orbit": 10, "sigmas": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]},
    "dim": {"tol": 1e-12},
    "lengths": {"n_max": 6},
    "cover": {"h": [0.0625, 0.0078125, 0.0009765625, 0.0001220703125]},
    "zeta": {"re": 2.0, "im": 0.0, "method": "det", "q_max": 12, "word_cutoff": 12},
    "grid": {"rect": [0.0, 1.0, 0.0, 10.0], "spacing": [0.1, 0.1], "n": 1},
    "scan": {"rect": [-0.4, 0.4, 0.5, 10.0], "tol": 1e-10},
    "count": {"sigmas": None, "Ts": [5.0, 10.0, 15.0, 20.0]},
    "tau": {"nu": None, "n_grid": 21},
    "weyl": {"sigmas": None, "Ts": [5.0, 10.0, 15.0, 20.0]},
}

_NUM = (int, float)


def _is_num(x) -> bool:
    return isinstance(x, _NUM) and not isinstance(x, bool)


def _num_list(n=None, allow_none=False):
    def check(v, path):
        if v is None and allow_none:
            return
        if not isinstance(v, list) or not all(_is_num(x) for x in v):
            raise ConfigInvalid("expected a list of numbers", path)
        if n is not None and len(v) != n:
            raise ConfigInvalid(f"expected {n} numbers", path)
    return check


def _typed(*types, allow_none=False, positive=False):
    def check(v, path):
        if v is None and allow_none:
            return
        if types == _NUM:
            ok = _is_num(v)
        else:
            ok = isinstance(v, types) and not (isinstance(v, bool) and bool not in types)
        if not ok:
            raise ConfigInvalid(f"expected {'/'.join(t.__name__ for t in types)}, got {v!r}", path)
        if positive and v <= 0:
            raise ConfigInvalid(f"must be positive, got {v!r}", path)
    return check


def _choice(*options):
    def check(v, path):
        if v not in options:
            raise ConfigInvalid(f"expected one of {options}, got {v!r}", path)
    return check


SCHEMA: dict[str, Any] = {
    "group": _typed(str),
    "threads": _typed(int, positive=True),
    "out": _typed(str),
    "operator": {"K": _typed(int, positive=True), "K_refined": _typed(int, positive=True),
                 "M": _typed(int, allow_none=True, positive=True), "refine_above": _typed(*_NUM)},
    "pressure": {"K": _typed(int, positive=True), "n_orbit": _typed(int, positive=True), "sigmas": _num_list()},
    "dim": {"tol": _typed(*_NUM, positive=True)},
    "lengths": {"n_max": _typed(int, positive=True)},
    "cover": {"h": _num_list()},
    "zeta": {"re": _typed(*_NUM), "im": _typed(*_NUM), "method": _choice("det", "trace", "euler"),
             "q_max": _typed(int, positive=True), "word_cutoff": _typed(int, positive=True)},
    "grid": {"rect": _num_list(4), "spacing": _num_list(2), "n": _typed(int, positive=True)},
    "scan": {"rect": _num_list(4), "tol": _typed(*_NUM, positive=True)},
    "count": {"sigmas": _num_list(allow_none=True), "Ts": _num_list()},
    "tau": {"nu": _typed(*_NUM, allow_none=True, positive=True), "n_grid": _typed(int, positive=True)},
    "weyl": {"sigmas": _num_list(allow_none=True), "Ts": _num_list()},
}


def _validate(data: dict, schema: dict, prefix: str = "") -> None:
    if not isinstance(data, dict):
        raise ConfigInvalid("expected an object", prefix or "<root>")
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ConfigInvalid("unknown key", path)
        rule = schema[key]
        if isinstance(rule, dict):
            _validate(value, rule, path)
        else:
            rule(value, path)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class RunConfig:
    """Merged configuration: defaults, then command-line flags, then the config file."""

    data: dict

    @classmethod
    def build(cls, flags: dict | None = None, file_data: dict | None = None) -> "RunConfig":
        flags, file_data = flags or {}, file_data or {}
        _validate(flags, SCHEMA)
        _validate(file_data, SCHEMA)
        return cls(_merge(_merge(DEFAULTS, flags), file_data))

    @classmethod
    def from_file(cls, path, flags: dict | None = None) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config ({exc})", "<file>") from exc
        return cls.build(flags, data)

    def __getitem__(self, key):
        return self.data[key]

    def canonical(self) -> str:
        return canonical_json(self.data)

    def run_key(self, subcommand: str) -> str:
        """SHA-256 over the subcommand and every key that can affect outputs."""
        payload = {k: v for k, v in self.data.items() if k not in EXECUTION_KEYS}
        return hashlib.sha256(canonical_json({"subcommand": subcommand, "config": payload}).encode()).hexdigest()


@dataclass
class RunRecord:
    config_hash: str
    subcommand: str
    tool_version: str
    outputs: dict[str, str]
    wall_time: float
    config: dict = field(default_factory=dict)
    cached: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "schottky_zeta"


class RunCache:
    """One directory per run key holding ``record.json`` and the output files."""

    def __init__(self, root: Path | None = None):
        self.root = Path(root) if root is not None else cache_dir()

    def entry(self, key: str) -> Path:
        return self.root / key

    def lookup(self, key: str) -> RunRecord | None:
        """Stored record for ``key``, verified against its file hashes.

        Raises :class:`CorruptRecord` (after evicting the entry) when a file
        is missing or its contents no longer match the manifest.
        """
        d = self.entry(key)
        rec_path = d / "record.json"
        if not rec_path.is_file():
            return None
        try:
            rec = RunRecord.from_json(rec_path.read_text())
        except (json.JSONDecodeError, TypeError) as exc:
            self.evict(key)
            raise CorruptRecord(f"unreadable record for {key}") from exc
        for name, digest in rec.outputs.items():
            f = d / name
            if not f.is_file() or sha256_file(f) != digest:
                self.evict(key)
                raise CorruptRecord(f"{name} does not match its recorded hash")
        return rec

    def store(self, key: str, record: RunRecord, files: dict[str, Path]) -> None:
        d = self.entry(key)
        tmp = d.with_name(d.name + ".tmp")
        shutil.rmtree(tmp, ignore_errors=True)
        tmp.mkdir(parents=True)
        for name, src in files.items():
            shutil.copyfile(src, tmp / name)
        (tmp / "record.json").write_text(record.to_json())
        shutil.rmtree(d, ignore_errors=True)
        tmp.rename(d)

    def restore(self, key: str, record: RunRecord, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        for name in record.outputs:
            shutil.copyfile(self.entry(key) / name, out / name)

    def evict(self, key: str) -> None:
        shutil.rmtree(self.entry(key), ignore_errors=True)


def cache_lookup(config: RunConfig, subcommand: str, cache: RunCache | None = None) -> RunRecord | None:
    """Prior record for an identical configuration, or ``None`` on a miss."""
    return (cache or RunCache()).lookup(config.run_key(subcommand))


def tool_version() -> str:
    return __version__
