from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    SEED: Optional[int] = None

    GAUSSIANIZE_C: float = 1.0
    GAUSSIANIZE_TV_EXPONENT: int = 3
    GAUSSIANIZE_BIAS_CAP: float = 0.45
    BIAS_FLOOR_EXPONENT: int = 8

    SIGNIFICANCE: float = 0.01
    VERIFY_REPETITIONS: int = 10

    SAFETY_FACTOR: float = 0.5
    POISSON_TAIL_EXPONENT: int = 6

    Q_CAP: int = 10**6
    ENUMERATION_CAP: int = 10**8
    GRAM_CELL_CAP: int = 10**7

    PLANNER_BRUTE_FORCE_CAP: int = 10**6
    PLANNER_MAX_BUDGET_EXPONENT: int = 40

    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="",
        extra="ignore",
    )


settings = Settings()
