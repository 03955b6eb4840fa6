from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="DISTHEAT_",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "distheat"
    VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Execution
    THREADS: int = 1
    GRAM_CACHE_LIMIT: int = 2000  # cache Gram matrices up to this many columns

    # Outputs
    MATRIX_FLOAT_FORMAT: str = "%.17g"


settings = Settings()
