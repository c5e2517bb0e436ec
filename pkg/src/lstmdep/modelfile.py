"""Model files: a UTF-8 key/value header followed by raw little-endian float64 tensors.

Layout::

    lstmdep-model
    version: 1
    kind: "graph"
    encoder: {...}
    hyperparameters: {...}
    vocabulary: {...}
    tensor: arc_W1 100 500
    ...
    end

then the tensor values, in header order, with no separators.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .graph_parser import GraphParser
from .transition_parser import TransitionParser
from .treebank import Vocabulary

MAGIC = "lstmdep-model"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _dump(value) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def model_bytes(parser) -> bytes:
    lines = [MAGIC, f"version: {VERSION}", f"kind: {_dump(parser.kind)}",
             f"encoder: {_dump(parser.encoder_config.to_dict())}",
             f"hyperparameters: {_dump(parser.hyperparameters())}",
             f"vocabulary: {_dump(parser.vocab.to_dict())}"]
    payload = []
    for name, value in parser.store.values.items():
        lines.append("tensor: " + " ".join([name] + [str(d) for d in value.shape]))
        payload.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(payload)


def save_model(parser, path) -> None:
    Path(path).write_bytes(model_bytes(parser))


def build_parser(kind: str, vocab: Vocabulary, encoder_config: EncoderConfig, hyper: dict):
    if kind == "transition":
        return TransitionParser(vocab, encoder_config, **hyper)
    if kind == "graph":
        return GraphParser(vocab, encoder_config, **hyper)
    raise ModelFileError(f"unknown parser kind {kind!r}")


def load_model(path):
    data = Path(path).read_bytes()
    header = {}
    tensors = []
    pos = 0
    first = True
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise ModelFileError(f"{path}: header is not terminated")
        line = data[pos:end].decode("utf-8")
        pos = end + 1
        if first:
            if line != MAGIC:
                raise ModelFileError(f"{path}: not a model file")
            first = False
            continue
        if line == "end":
            break
        key, _, value = line.partition(": ")
        if key == "tensor":
            name, *dims = value.split(" ")
            tensors.append((name, tuple(int(d) for d in dims)))
        else:
            header[key] = value
    version = int(header.get("version", -1))
    if version != VERSION:
        raise ModelFileError(f"{path}: model format version {version}, this build reads version {VERSION}")
    try:
        kind = json.loads(header["kind"])
        config = EncoderConfig(**json.loads(header["encoder"]))
        hyper = json.loads(header["hyperparameters"])
        vocab = Vocabulary.from_dict(json.loads(header["vocabulary"]))
    except KeyError as e:
        raise ModelFileError(f"{path}: header misses {e.args[0]!r}") from None
    parser = build_parser(kind, vocab, config, hyper)
    # shapes are fixed by the header; init only to learn the expected layout
    parser.init_params(np.random.default_rng(0))
    expected = {name: value.shape for name, value in parser.store.values.items()}
    listed = dict(tensors)
    for name, shape in expected.items():
        if name not in listed:
            raise ModelFileError(f"{path}: missing tensor {name!r}")
        if listed[name] != shape:
            raise ModelFileError(f"{path}: tensor {name!r} has shape {listed[name]}, expected {shape}")
    for name, shape in tensors:
        if name not in expected:
            raise ModelFileError(f"{path}: unexpected tensor {name!r}")
        size = int(np.prod(shape)) * 8
        chunk = data[pos:pos + size]
        if len(chunk) != size:
            raise ModelFileError(f"{path}: truncated, missing data for tensor {name!r}")
        parser.store.values[name][...] = np.frombuffer(chunk, dtype="<f8").reshape(shape)
        pos += size
    if pos != len(data):
        raise ModelFileError(f"{path}: {len(data) - pos} trailing bytes after the last tensor")
    return parser
