import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, TypeVar

import pydra
from loguru import logger
from tabulate import tabulate
from tqdm import tqdm

from distrack.errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")

ConfigT = TypeVar("ConfigT", bound=pydra.Config)


def setup_logging(level: str = "INFO", command: str = "distrack"):
    logger.remove()
    logger.configure(extra={"command": command})
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level}</level> | "
        "{extra[command]} | "
        "<level>{message}</level>",
        level=level,
    )


@contextmanager
def timer(name: str, enable: bool = True, min_ms: float | None = None):
    if not enable:
        yield
        return

    start = time.perf_counter()
    yield
    ms = (time.perf_counter() - start) * 1000

    if min_ms is None or ms > min_ms:
        logger.debug(f"timer {name}: {ms:.2f}ms")


PROGRESS_ENABLED = True


def set_progress(enabled: bool):
    global PROGRESS_ENABLED
    PROGRESS_ENABLED = enabled


def progress(items, desc: str | None = None, disable: bool = False, **kwargs):
    # keep stderr clean for machine-readable output when not on a terminal
    disable = disable or not PROGRESS_ENABLED or not sys.stderr.isatty()
    return tqdm(items, desc=desc, disable=disable, **kwargs)


def std(lst):
    mean = sum(lst) / len(lst)
    return (sum((x - mean) ** 2 for x in lst) / len(lst)) ** 0.5


def median(lst):
    sorted_lst = sorted(lst)
    if len(sorted_lst) % 2 == 1:
        return sorted_lst[len(sorted_lst) // 2]
    else:
        return (
            sorted_lst[len(sorted_lst) // 2 - 1] + sorted_lst[len(sorted_lst) // 2]
        ) / 2


@dataclass
class TimeResult:
    times: list[float]
    warmup_times: list[float]

    def mean(self):
        return sum(self.times) / len(self.times)

    def std(self):
        return std(self.times)

    def median(self):
        return median(self.times)

    def row(self, name: str):
        return [name, self.mean(), self.std(), self.median(), min(self.times), max(self.times)]

    def fancy_table(self, name: str = "time"):
        return tabulate(
            [self.row(name)],
            headers=["Metric", "Mean", "Std", "Median", "Min", "Max"],
            tablefmt="github",
        )


def timed(
    fn: Callable[[], object],
    num_iters: int = 3,
    num_warmup: int = 0,
    between_fn: Callable[[], object] | None = None,
    prog: bool = False,
) -> TimeResult:
    """
    Wall-clock timing in seconds. `between_fn` runs outside the timed region
    before every iteration, e.g. to regenerate inputs.
    """
    warmup_times = []
    times = []
    for itr in tqdm(range(num_iters + num_warmup), desc="Timing", disable=not prog):
        if between_fn is not None:
            between_fn()

        start = time.perf_counter()
        fn()
        elapsed = time.perf_counter() - start

        if itr >= num_warmup:
            times.append(elapsed)
        else:
            warmup_times.append(elapsed)

    return TimeResult(times=times, warmup_times=warmup_times)


def resolve_threads(threads: int) -> int:
    if threads == 0:
        return os.cpu_count() or 1
    return threads


def parallelize(
    fn: Callable[[T], R],
    items: Sequence[T],
    num_workers: int = 1,
    desc: str | None = None,
) -> list[R]:
    """
    Ordered map over items. Threads only: the heavy lifting happens in
    numpy/scipy kernels, and results stay in input order so the output is
    identical for any worker count.
    """
    num_workers = resolve_threads(num_workers)
    assert num_workers >= 1

    if num_workers == 1 or len(items) <= 1:
        return [fn(item) for item in progress(items, desc=desc)]

    with ThreadPoolExecutor(max_workers=num_workers) as executor:
        futures = [executor.submit(fn, item) for item in items]
        # raise any exceptions immediately, in order
        return [future.result() for future in progress(futures, desc=desc)]


def atomic_write_bytes(path: Path | str, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: Path | str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def config_fields(config: pydra.Config) -> list[str]:
    names: list[str] = []
    for klass in reversed(type(config).__mro__):
        if klass is pydra.Config or not issubclass(klass, pydra.Config):
            continue
        for name in vars(klass).get("__annotations__", {}):
            if name not in names:
                names.append(name)

    for name, value in vars(config).items():
        if isinstance(value, pydra.Config) and name not in names:
            names.append(name)

    return names


def config_to_dict(config: pydra.Config) -> dict:
    out = {}
    for name in config_fields(config):
        value = getattr(config, name)
        if isinstance(value, pydra.Config):
            value = config_to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[name] = value
    return out


def config_hash(config: pydra.Config) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def apply_config_dict(config: pydra.Config, data: dict, prefix: str = ""):
    fields = config_fields(config)
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{prefix}{key}'")

        current = getattr(config, key)
        if isinstance(current, pydra.Config):
            if not isinstance(value, dict):
                raise ConfigError(f"'{prefix}{key}' must be an object")
            apply_config_dict(current, value, prefix=f"{prefix}{key}.")
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"'{prefix}{key}' must be a list")
            setattr(config, key, tuple(float(v) for v in value))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"'{prefix}{key}' must be a boolean")
            setattr(config, key, value)
        elif isinstance(current, float) and isinstance(value, (int, float)):
            setattr(config, key, float(value))
        elif isinstance(current, int) and not isinstance(value, int):
            raise ConfigError(f"'{prefix}{key}' must be an integer")
        else:
            setattr(config, key, value)


def load_config(
    cls: type[ConfigT],
    path: Path | str | None = None,
    overrides: dict | None = None,
) -> ConfigT:
    """
    Build a config from defaults, then a JSON file whose keys mirror the
    field names, then explicit overrides (None values are skipped).
    """
    config = cls()

    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        apply_config_dict(config, data)

    if overrides:
        apply_config_dict(config, {k: v for k, v in overrides.items() if v is not None})

    config.finalize()
    return config
