import hashlib
import json

__version__ = "0.1.0"


def stable_hash(obj, n=12):
    """Short sha256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:n]
