# app/core/config.py

import os
from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
import logging

logger = logging.getLogger(__name__)

# Load environment variables
dotenv_path = os.path.join(os.path.dirname(__file__), '..', '..', '.env')
loaded = load_dotenv(dotenv_path=dotenv_path)

if loaded:
    logger.info(".env file loaded successfully.")
else:
    logger.debug(".env file not found or not loaded, using process environment.")


class Settings(BaseSettings):
    """
    Process-level settings loaded from environment variables.
    Experiment parameters live in ExperimentConfig, not here.
    """
    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    # --- Project Settings ---
    PROJECT_NAME: str = "bilinear-sde-lab"
    VERSION: str = "0.4.0"
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")

    # --- Output Settings ---
    OUTPUT_DIR: str = os.getenv("BILINEAR_OUTPUT_DIR", "runs")
    LOG_DIR: str = os.getenv("BILINEAR_LOG_DIR", "logs")

    # --- Worker Pool Settings ---
    DEFAULT_THREADS: int = int(os.getenv("BILINEAR_THREADS", str(os.cpu_count() or 1)))
    # Paths per batch; fixed partition, independent of the thread count.
    ENSEMBLE_BATCH_SIZE: int = int(os.getenv("BILINEAR_BATCH_SIZE", "256"))
    NOISE_BLOCK_STEPS: int = 256

    # --- Numerical Tolerances ---
    TOL_ALG: float = 1e-12
    CENTER_TOL_REL: float = 1e-7
    CENTER_TOL_ABS: float = 1e-12
    ZERO_TOL_REL: float = 1e-12

    # --- Seeding ---
    DEFAULT_MASTER_SEED: int = int(os.getenv("BILINEAR_MASTER_SEED", "20240901"))


@lru_cache()
def get_settings() -> Settings:
    """
    Returns a cached instance of the Settings class.
    """
    settings_instance = Settings()
    logger.debug(f"Settings instance loaded. Project: {settings_instance.PROJECT_NAME}, output: {settings_instance.OUTPUT_DIR}")
    return settings_instance


settings = get_settings()
