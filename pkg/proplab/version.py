from importlib import metadata

try:
    __version__ = metadata.version("proplab")
except metadata.PackageNotFoundError:
    __version__ = "unknown"
