# app/config.py
import os
from dataclasses import dataclass

from dotenv import load_dotenv

from app.errors import ConfigError

# Loads variables from a local .env file into environment variables (dev only).
load_dotenv()


@dataclass(frozen=True)
class Settings:
    # App config
    app_env: str
    log_level: str

    # Runner config
    threads: int
    out_dir: str


def _positive_int(name: str, default: str) -> int:
    raw = os.getenv(name, default).strip()
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name}={raw!r} is not an integer") from None
    if value < 1:
        raise ConfigError(f"{name}={value} must be >= 1")
    return value


def get_settings() -> Settings:
    """
    Reads env vars and returns a Settings object.
    """
    return Settings(
        app_env=os.getenv("APP_ENV", "local"),
        log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
        threads=_positive_int("SPOTFLOW_THREADS", "1"),
        out_dir=os.getenv("SPOTFLOW_OUT_DIR", "out"),
    )
