# app/core/manifest.py

"""
Run manifests: config echo, config hash, version and timing for every CLI run.
"""

import hashlib
import subprocess
from pathlib import Path
from typing import Any, Dict, List, Optional

import orjson

from app.core.config import get_settings
from app.core.logging_config import cli_logger

MANIFEST_NAME = "manifest.json"


def config_hash(config_data: Dict[str, Any]) -> str:
    """SHA-256 of the canonical (sorted-key) JSON encoding of a config."""
    normalized = orjson.dumps(config_data, option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(normalized).hexdigest()


def version_string() -> str:
    """`git describe` when run from a checkout, the package version otherwise."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parents[2],
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{get_settings().VERSION}"


def write_manifest(
    out_dir: Path,
    config_data: Dict[str, Any],
    artifacts: List[str],
    wall_time: float,
    master_seed: int,
    status: str = "ok",
    error: Optional[str] = None,
) -> Path:
    manifest = {
        "config": config_data,
        "config_sha256": config_hash(config_data),
        "version": version_string(),
        "wall_time_s": round(wall_time, 6),
        "master_seed": master_seed,
        "artifacts": sorted(artifacts),
        "status": status,
    }
    if error:
        manifest["error"] = error
    path = Path(out_dir) / MANIFEST_NAME
    path.write_bytes(orjson.dumps(manifest, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
    cli_logger.info(f"[MANIFEST] wrote {path} kind={config_data.get('kind')} hash={manifest['config_sha256'][:16]}")
    return path


def read_manifest(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return orjson.loads(path.read_bytes())
