"""Configuration management for the FPS pipeline."""
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    # Runtime
    fps_threads: int = 0
    fps_default_seed: int = 0
    fps_dtype: str = "float32"

    # Logging
    fps_log_level: str = "INFO"
    fps_log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Test Configuration
    run_integration: bool = False

    class Config:
        env_file = ".env"
        case_sensitive = False


# Global settings instance
settings = Settings()
