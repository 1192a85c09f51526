"""Run manifests and report files.

Report payloads never contain timestamps; those live only in the manifest,
so rerunning a command with the same inputs reproduces the payload bytes.
"""

import datetime
import json
import os
from importlib import resources

from . import __version__


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    def __init__(self, command, config, seed):
        self.command = command
        self.config = config
        self.seed = seed
        self.started = _now()
        self.finished = None
        self.outputs = []

    def write_text(self, path, text):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.outputs.append(path)
        return path

    def to_dict(self):
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": __version__,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
        }

    def finish(self, directory):
        self.finished = _now()
        path = os.path.join(directory, "manifest.json")
        with open(path, "w") as fh:
            fh.write(dumps(self.to_dict()))
        return path


def load_schema(name):
    """JSON schema shipped with the package, e.g. ``load_schema("manifest")``."""
    text = resources.files("vquant").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)
