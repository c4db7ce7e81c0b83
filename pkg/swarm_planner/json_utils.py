import json
import os
from typing import Any

import numpy as np


def to_jsonable(data: Any) -> Any:
    """
    Converts numpy containers and scalars into plain Python values.

    Args:
        data (Any): Nested dicts, lists, tuples, numpy arrays or scalars.

    Returns:
        Any: The same structure made only of JSON-serialisable values.
    """
    if isinstance(data, dict):
        return {str(k): to_jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_jsonable(v) for v in data]
    if isinstance(data, np.ndarray):
        return to_jsonable(data.tolist())
    if isinstance(data, np.bool_):
        return bool(data)
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return float(data)
    return data


def write_json_file(data: Any, filepath: str) -> None:
    """
    Writes data as an indented JSON file.

    Floats are written with Python's shortest round-trip representation, so
    reading the file back restores every value bit for bit.

    Args:
        data (Any): The data to be written; numpy values are converted.
        filepath (str): Destination path. Parent directories are created.

    Raises:
        ValueError: If `filepath` is empty.
    """
    if not filepath:
        raise ValueError("file path must not be empty.")

    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    content = json.dumps(to_jsonable(data), indent=4)
    with open(filepath, "w", encoding="utf-8") as file:
        file.write(content)
        file.write("\n")


def read_json_file(filepath: str) -> Any:
    """
    Reads a JSON file and returns its content.

    Args:
        filepath (str): The path of the file to be read.

    Returns:
        Any: The decoded JSON document.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the content is not valid JSON; the message carries
            `path:line:column`.
    """
    if not filepath:
        raise ValueError("file path must not be empty.")

    with open(filepath, "r", encoding="utf-8") as file:
        content = file.read()
    try:
        return json.loads(content)
    except json.JSONDecodeError as e:
        raise ValueError(f"{filepath}:{e.lineno}:{e.colno}: {e.msg}") from e
