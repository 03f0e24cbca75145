from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
import os


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="BFF_", env_file=".env", extra="ignore")

    app_name: str = "bff"
    log_level: str = "INFO"
    log_file: str = "bff.log"

    # Execution settings
    threads: int = os.cpu_count() or 1
    checkpoint: bool = True

    # Numerical guards
    cg_threshold: int = 50_000
    max_edges: int = 1_000_000


@lru_cache()
def get_settings() -> Settings:
    return Settings()
