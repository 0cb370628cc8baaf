"""
Run directories and artifact readers/writers.

Every writer goes through a temporary file in the destination directory and
renames it into place, so a failed command leaves no partial output.
"""
import logging
import os
import tempfile
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np
import orjson
import pandas as pd
import tomli_w
from PIL import Image
from pydantic import BaseModel

from classes import GraspEntry, HandModel, TrajectoryPair
from constants import ARTIFACT_FILES, CLI_MESSAGES, RUNTIME_ERRORS
from errors import ConfigError, GraspBankError

logger = logging.getLogger(__name__)

JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def atomic_write_text(path, text: str):
    return atomic_write_bytes(path, text.encode('utf-8'))


def _record(item):
    if isinstance(item, BaseModel):
        return item.model_dump(mode='json')
    return item


def dumps(item):
    return orjson.dumps(_record(item), option=JSON_OPTIONS)


def write_jsonl(path, records):
    data = b''.join(dumps(record) + b'\n' for record in records)
    return atomic_write_bytes(path, data)


def read_jsonl(path, model=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(CLI_MESSAGES['MISSING_FILE'].format(path=path))
    records = []
    with path.open('rb') as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            data = orjson.loads(line)
            records.append(model.model_validate(data) if model is not None else data)
    return records


def write_csv(path, rows, columns=None):
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    return atomic_write_text(path, df.to_csv(index=False))


def read_csv(path):
    return pd.read_csv(path)


def write_pgm(path, image):
    """Grayscale image in [0, 1] as an 8-bit binary PGM."""
    pixels = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    os.close(fd)
    try:
        Image.fromarray(pixels).save(tmp, format='PPM')
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def read_pgm(path):
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / 255.0


# ============================================================================
# TYPED ARTIFACTS
# ============================================================================

def write_config(run_dir, config):
    return atomic_write_bytes(Path(run_dir) / ARTIFACT_FILES['config'],
                              orjson.dumps(config.model_dump(mode='json'), option=JSON_OPTIONS | orjson.OPT_INDENT_2))


def save_grasp_bank(path, bank):
    return write_jsonl(path, bank)


def load_grasp_bank(path):
    bank = read_jsonl(path, GraspEntry)
    if not bank:
        raise GraspBankError(RUNTIME_ERRORS['EMPTY_BANK'].format(path=path))
    return bank


def save_trajectory_pairs(path, pairs):
    return write_jsonl(path, pairs)


def load_trajectory_pairs(path):
    return read_jsonl(path, TrajectoryPair)


def write_hand_toml(path, model: HandModel, section='hand'):
    """Write the hand model as the ``[hand]`` table of a TOML config file."""
    payload = {section: model.model_dump(mode='json')}
    return atomic_write_text(path, tomli_w.dumps(payload))


def read_hand_toml(path, section='hand'):
    path = Path(path)
    if not path.exists():
        raise ConfigError(CLI_MESSAGES['MISSING_FILE'].format(path=path))
    with path.open('rb') as handle:
        data = tomllib.load(handle)
    return HandModel.model_validate(data.get(section, data))


# ============================================================================
# RUN DIRECTORIES
# ============================================================================

def prepare_run_dir(config, command):
    """Fresh directory ``<out>/<name>-<command>-s<seed>``, suffixed when it already exists."""
    root = Path(config.out)
    base = f"{config.name}-{command}-s{config.seed}"
    run_dir = root / base
    suffix = 1
    while run_dir.exists() and any(run_dir.iterdir()):
        run_dir = root / f"{base}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir
