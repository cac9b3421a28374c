"""Reference external scorer plugin for the u3e engine.

Speaks the engine's line-delimited JSON protocol on stdin/stdout and serves
either fixed scores (protocol conformance stub) or a faithful reimplementation
of the engine's linear checkpoint scorer loaded from its JSON checkpoint
files. The plugin is intentionally independent of the engine's code: it
consumes only the documented checkpoint file format and wire protocol, which
is also what an adapter wrapping a real pretrained model would do.
"""

__version__ = "0.1.0"

from .model import FixedModel, MirrorModel, load_checkpoint_file
from .server import serve

__all__ = ["FixedModel", "MirrorModel", "load_checkpoint_file", "serve"]
