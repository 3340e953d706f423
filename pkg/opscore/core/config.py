import os
from dotenv import load_dotenv

load_dotenv()


class Settings:
    # Parallelism
    OPSCORE_THREADS = max(1, int(os.getenv("OPSCORE_THREADS", "1")))

    # Logging
    LOG_DIR = os.getenv("OPSCORE_LOG_DIR", "logs")
    LOG_LEVEL = os.getenv("OPSCORE_LOG_LEVEL", "INFO").upper()

    # Reproducibility
    DEFAULT_SEED = int(os.getenv("OPSCORE_SEED", "20240101"))

    # Output
    OUTPUT_DIR = os.getenv("OPSCORE_OUTPUT_DIR", "results")

    @property
    def threads(self) -> int:
        """Worker cap, re-read so a changed environment takes effect between runs."""
        return max(1, int(os.getenv("OPSCORE_THREADS", str(self.OPSCORE_THREADS))))


settings = Settings()
